"""Single-channel postfilters applied to the GSC output.

``none``      pass-through.
``wiener``    decision-directed Wiener gain with a minimum-statistics noise
              tracker; self-contained baseline.
``external``  hand the signal to another program (e.g. a pretrained
              DeepFilterNet) through WAV files.
"""

from __future__ import annotations

import logging
import os
import shlex
import subprocess
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import DataError, EgonoiseError
from .stft import MultichannelSignal, SpectrogramTensor, StftConfig, analyze, synthesize
from .wavio import FORMATS, read_wav, write_wav

__all__ = [
    "WienerParams",
    "PostfilterSpec",
    "ExternalPostfilterError",
    "wiener_gain",
    "apply_wiener_baseline",
    "apply_external",
    "enhance",
    "TMPDIR_ENV",
]

log = logging.getLogger(__name__)

TMPDIR_ENV = "EGONOISE_TMPDIR"
KINDS = ("none", "wiener", "external")
_ALIASES = {"wiener_baseline": "wiener"}


class ExternalPostfilterError(EgonoiseError):
    """The external enhancer failed; carries its captured output."""

    def __init__(self, message, stdout="", stderr=""):
        self.stdout = stdout
        self.stderr = stderr
        detail = ""
        if stdout:
            detail += f"\n--- stdout ---\n{stdout.rstrip()}"
        if stderr:
            detail += f"\n--- stderr ---\n{stderr.rstrip()}"
        super().__init__(message + detail)


@dataclass(frozen=True)
class WienerParams:
    """Parameters of the baseline Wiener postfilter.

    alpha : smoothing of the noise PSD estimate (per frame).
    gain_floor_db : lower bound of the gain, in dB of amplitude.
    dd_alpha : decision-directed weight of the previous frame's estimate.
    psd_smoothing : recursive smoothing of the periodogram before minimum tracking.
    min_window_s : length of the minimum-tracking window.
    """

    alpha: float = 0.98
    gain_floor_db: float = -15.0
    dd_alpha: float = 0.98
    psd_smoothing: float = 0.8
    min_window_s: float = 1.5

    def __post_init__(self):
        for name in ("alpha", "dd_alpha", "psd_smoothing"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not -30 <= self.gain_floor_db <= 0:
            raise ValueError("gain_floor_db must lie in [-30, 0] dB")
        if not self.min_window_s > 0:
            raise ValueError("min_window_s must be positive")


@dataclass(frozen=True)
class PostfilterSpec:
    kind: str = "none"
    external_cmd: str | None = None
    wiener: WienerParams = field(default_factory=WienerParams)
    wav_format: str = "pcm16"

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown postfilter {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "external" and not self.external_cmd:
            raise ValueError("external postfilter needs a command")
        if self.wav_format not in FORMATS:
            raise ValueError(f"wav_format must be one of {FORMATS}")

    def to_dict(self):
        return {
            "kind": self.kind,
            "external_cmd": self.external_cmd,
            "alpha": self.wiener.alpha,
            "gain_floor_db": self.wiener.gain_floor_db,
            "dd_alpha": self.wiener.dd_alpha,
            "wav_format": self.wav_format,
        }


def _bias_factor(smoothing, window):
    """Mean-to-minimum ratio of a smoothed exponential periodogram.

    Closed-form approximations exist; a fixed Monte-Carlo estimate is
    simpler and only depends on the two parameters.
    """
    rng = np.random.default_rng(12345)
    p = rng.exponential(size=(window * 40, 64))
    s = sps.lfilter([1 - smoothing], [1, -smoothing], p, axis=0)[window:]
    usable = (len(s) // window) * window
    mins = s[:usable].reshape(-1, window, s.shape[1]).min(axis=1)
    return float(1.0 / mins.mean())


def wiener_gain(power, cfg: StftConfig, params: WienerParams = WienerParams()):
    """Gain ``(L, K)`` for a single-channel power spectrogram ``|X|^2``."""
    n_frames = power.shape[0]
    frames_per_s = cfg.sample_rate / cfg.hop_length
    window = max(2, int(round(params.min_window_s * frames_per_s)))
    beta = params.psd_smoothing
    smooth = sps.lfilter([1 - beta], [1, -beta], power, axis=0,
                         zi=beta * power[:1])[0]
    padded = np.concatenate([np.repeat(smooth[:1], window - 1, axis=0), smooth])
    s_min = np.lib.stride_tricks.sliding_window_view(padded, window, axis=0).min(axis=-1)
    raw_noise = _bias_factor(beta, window) * s_min
    a = params.alpha
    noise = sps.lfilter([1 - a], [1, -a], raw_noise, axis=0, zi=a * raw_noise[:1])[0]

    g_min = 10.0 ** (params.gain_floor_db / 20.0)
    tiny = np.finfo(float).tiny
    gain = np.empty_like(power)
    prev = np.zeros(power.shape[1])  # |G X|^2 / N of the previous frame
    for l in range(n_frames):
        with np.errstate(over="ignore"):
            gamma = np.minimum(power[l] / np.maximum(noise[l], tiny), 1e12)
        xi = params.dd_alpha * prev + (1 - params.dd_alpha) * np.maximum(gamma - 1.0, 0.0)
        g = np.maximum(xi / (1.0 + xi), g_min)
        gain[l] = g
        prev = np.minimum(g * g * gamma, 1e12)
    return gain


def apply_wiener_baseline(signal: MultichannelSignal, cfg: StftConfig = StftConfig(),
                          params: WienerParams = WienerParams()) -> MultichannelSignal:
    """Decision-directed Wiener postfilter; output has the input's length."""
    if signal.channel_count != 1:
        raise DataError("the Wiener postfilter expects a single-channel signal")
    spec = analyze(signal, cfg, pad_edges=True)
    X = spec.coefficients[0]
    G = wiener_gain(np.abs(X) ** 2, cfg, params)
    return synthesize(SpectrogramTensor((G * X)[None], spec.n_samples), cfg, pad_edges=True)


def _tempdir():
    base = os.environ.get(TMPDIR_ENV) or None
    if base:
        Path(base).mkdir(parents=True, exist_ok=True)
    return tempfile.TemporaryDirectory(prefix="egonoise-", dir=base)


def apply_external(signal: MultichannelSignal, spec: PostfilterSpec) -> MultichannelSignal:
    """Run an external enhancer over WAV files.

    ``spec.external_cmd`` is split like a shell command line (no shell is
    involved); ``{in}`` and ``{out}`` in any argument are replaced with the
    input and output file paths. With ``pcm16`` exchange the signal is
    scaled down if its peak exceeds full scale and scaled back afterwards.
    """
    if signal.channel_count != 1:
        raise DataError("external postfilter expects a single-channel signal")
    if not spec.external_cmd:
        raise ExternalPostfilterError("no external command configured")
    template = shlex.split(spec.external_cmd)
    x = signal.samples[0]
    fs = signal.sample_rate
    scale = 1.0
    if spec.wav_format == "pcm16":
        peak = float(np.max(np.abs(x))) if x.size else 0.0
        if peak >= 1.0:
            scale = 0.99 / peak
    with _tempdir() as tmp:
        in_path = Path(tmp) / "input.wav"
        out_path = Path(tmp) / "output.wav"
        write_wav(in_path, x * scale if scale != 1.0 else x, fs, spec.wav_format)
        args = [a.replace("{in}", str(in_path)).replace("{out}", str(out_path))
                for a in template]
        log.debug("running external postfilter: %s", args)
        try:
            proc = subprocess.run(args, capture_output=True, text=True, check=False)
        except FileNotFoundError:
            raise ExternalPostfilterError(
                f"external postfilter command not found: {template[0]!r}"
            ) from None
        except PermissionError:
            raise ExternalPostfilterError(
                f"external postfilter command not executable: {template[0]!r}"
            ) from None
        if proc.returncode != 0:
            raise ExternalPostfilterError(
                f"external postfilter {template[0]!r} exited with status {proc.returncode}",
                proc.stdout, proc.stderr,
            )
        if not out_path.exists():
            raise ExternalPostfilterError(
                f"external postfilter {template[0]!r} did not write {out_path.name}",
                proc.stdout, proc.stderr,
            )
        y, fs_out = read_wav(out_path)
    if fs_out != fs:
        raise ExternalPostfilterError(
            f"external postfilter returned {fs_out:g} Hz audio, expected {fs:g} Hz",
            proc.stdout, proc.stderr,
        )
    if y.shape[0] != 1:
        raise ExternalPostfilterError(
            f"external postfilter returned {y.shape[0]} channels, expected 1",
            proc.stdout, proc.stderr,
        )
    y = y[0]
    n = x.shape[0]
    if y.shape[0] != n:
        warnings.warn(
            f"external postfilter returned {y.shape[0]} samples for {n}; "
            "padding/truncating to the input length",
            stacklevel=2,
        )
        y = y[:n] if y.shape[0] > n else np.pad(y, (0, n - y.shape[0]))
    if scale != 1.0:
        y = y / scale
    return MultichannelSignal(y[None], fs)


def enhance(signal: MultichannelSignal, spec: PostfilterSpec = PostfilterSpec(),
            cfg: StftConfig = StftConfig()) -> MultichannelSignal:
    """Apply the postfilter selected by ``spec.kind``."""
    if spec.kind == "none":
        return signal
    if spec.kind == "wiener":
        return apply_wiener_baseline(signal, cfg, spec.wiener)
    return apply_external(signal, spec)
