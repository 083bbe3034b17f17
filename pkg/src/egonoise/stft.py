"""Multichannel short-time Fourier transform with overlap-add resynthesis.

Frames are taken at ``l * hop_length`` without centering. The tail is
zero-padded so the last partial frame is still analysed. When
``pad_edges=True`` an extra ``frame_length - hop_length`` zeros are added on
both sides so every original sample lies in the fully overlapped region;
``synthesize`` removes that latency again.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = [
    "StftConfig",
    "MultichannelSignal",
    "SpectrogramTensor",
    "analyze",
    "synthesize",
    "frame_count",
]

WINDOWS = ("sqrt-hann", "hann", "rect")


def _window_pair(name, n):
    """Analysis and synthesis windows whose product is COLA-friendly."""
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    if name == "sqrt-hann":
        w = np.sqrt(hann)
        return w, w.copy()
    if name == "hann":
        return hann, np.ones(n)
    if name == "rect":
        return np.ones(n), np.ones(n)
    raise ValueError(f"unknown window {name!r}; expected one of {WINDOWS}")


@dataclass(frozen=True)
class StftConfig:
    """Framing parameters of the STFT.

    The defaults give 32 ms frames with 50 % overlap at 16 kHz.
    """

    frame_length: int = 512
    hop_length: int = 256
    fft_size: int = 512
    window: str = "sqrt-hann"
    sample_rate: float = 16000.0
    _ola_gain: float = field(init=False, repr=False, compare=False, default=1.0)

    def __post_init__(self):
        if int(self.frame_length) != self.frame_length or self.frame_length <= 0:
            raise ValueError("frame_length must be a positive integer")
        if int(self.hop_length) != self.hop_length or not 0 < self.hop_length <= self.frame_length:
            raise ValueError("hop_length must be a positive integer <= frame_length")
        n = int(self.fft_size)
        if n != self.fft_size or n < self.frame_length:
            raise ValueError("fft_size must be an integer >= frame_length")
        if n & (n - 1):
            raise ValueError("fft_size must be a power of two")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        if self.window not in WINDOWS:
            raise ValueError(f"unknown window {self.window!r}; expected one of {WINDOWS}")
        # COLA: the overlapped product of analysis and synthesis windows must be flat.
        wa, ws = _window_pair(self.window, self.frame_length)
        prod = wa * ws
        hop = self.hop_length
        padded = np.concatenate([prod, np.zeros((-len(prod)) % hop)])
        ola = padded.reshape(-1, hop).sum(axis=0)
        if not np.allclose(ola, ola.mean(), rtol=1e-10, atol=0):
            raise ValueError(
                f"hop_length={hop} does not satisfy constant overlap-add for "
                f"window {self.window!r} with frame_length={self.frame_length}"
            )
        object.__setattr__(self, "_ola_gain", float(ola.mean()))

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def latency(self) -> int:
        """Number of leading zeros added by ``pad_edges=True``."""
        return self.frame_length - self.hop_length

    def bin_frequencies(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.sample_rate / self.fft_size

    def windows(self):
        return _window_pair(self.window, self.frame_length)

    def to_dict(self) -> dict:
        return {
            "frame_length": self.frame_length,
            "hop_length": self.hop_length,
            "fft_size": self.fft_size,
            "window": self.window,
            "sample_rate": self.sample_rate,
        }


@dataclass
class MultichannelSignal:
    """Real-valued samples, shape ``(channels, samples)``."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[np.newaxis, :]
        if x.ndim != 2:
            raise DataError(f"samples must be 1-D or 2-D, got shape {x.shape}")
        if x.shape[0] < 1:
            raise DataError("signal needs at least one channel")
        if not self.sample_rate > 0:
            raise DataError("sample_rate must be positive")
        self.samples = x

    @property
    def channel_count(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def channel(self, m) -> "MultichannelSignal":
        return MultichannelSignal(self.samples[m : m + 1].copy(), self.sample_rate)


@dataclass
class SpectrogramTensor:
    """One-sided STFT coefficients with shape ``(M, L, K)``."""

    coefficients: np.ndarray
    n_samples: int | None = None

    def __post_init__(self):
        c = np.asarray(self.coefficients)
        if c.ndim == 2:
            c = c[np.newaxis]
        if c.ndim != 3:
            raise DataError(f"coefficients must have shape (M, L, K), got {c.shape}")
        self.coefficients = c.astype(complex, copy=False)

    @property
    def dims(self):
        return self.coefficients.shape


def frame_count(n_samples, cfg: StftConfig, pad_edges=False) -> int:
    """Number of frames ``analyze`` produces for a signal of this length."""
    if pad_edges:
        n_samples = n_samples + 2 * cfg.latency
    if n_samples < cfg.frame_length:
        raise DataError(
            f"signal of {n_samples} samples is shorter than one frame ({cfg.frame_length})"
        )
    return 1 + -(-(n_samples - cfg.frame_length) // cfg.hop_length)


def analyze(signal, cfg: StftConfig, pad_edges=False) -> SpectrogramTensor:
    """Forward STFT of every channel.

    Parameters
    ----------
    signal : MultichannelSignal or array_like
        Time-domain input, ``(M, N)`` or ``(N,)``.
    cfg : StftConfig
    pad_edges : bool
        Add ``cfg.latency`` zeros at both ends so that all input samples are
        perfectly reconstructed by ``synthesize(..., pad_edges=True)``.

    Returns
    -------
    SpectrogramTensor
        Shape ``(M, L, fft_size // 2 + 1)``.
    """
    x = signal.samples if isinstance(signal, MultichannelSignal) else np.atleast_2d(
        np.asarray(signal, dtype=float)
    )
    if x.ndim != 2 or x.shape[0] < 1:
        raise DataError("expected a (channels, samples) array")
    if not np.all(np.isfinite(x)):
        raise DataError("input signal contains NaN or infinite samples")
    n = x.shape[1]
    if pad_edges:
        x = np.pad(x, ((0, 0), (cfg.latency, cfg.latency)))
    n_frames = frame_count(x.shape[1], cfg)
    total = (n_frames - 1) * cfg.hop_length + cfg.frame_length
    if total > x.shape[1]:
        x = np.pad(x, ((0, 0), (0, total - x.shape[1])))
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.frame_length, axis=1)
    frames = frames[:, :: cfg.hop_length][:, :n_frames]
    wa, _ = cfg.windows()
    spec = np.fft.rfft(frames * wa, n=cfg.fft_size, axis=-1)
    return SpectrogramTensor(spec, n_samples=n)


def synthesize(spec, cfg: StftConfig, length=None, pad_edges=False) -> MultichannelSignal:
    """Weighted overlap-add inverse of :func:`analyze`.

    ``length`` truncates (or zero-pads) the result; it defaults to the
    original signal length stored on the tensor, if any.
    """
    coef = spec.coefficients if isinstance(spec, SpectrogramTensor) else np.asarray(spec)
    if coef.ndim == 2:
        coef = coef[np.newaxis]
    if coef.ndim != 3 or coef.shape[-1] != cfg.n_bins:
        raise DataError(
            f"spectrogram shape {coef.shape} does not match fft_size={cfg.fft_size} "
            f"({cfg.n_bins} bins expected)"
        )
    if length is None and isinstance(spec, SpectrogramTensor):
        length = spec.n_samples
    n_ch, n_frames, _ = coef.shape
    _, ws = cfg.windows()
    frames = np.fft.irfft(coef, n=cfg.fft_size, axis=-1)[..., : cfg.frame_length] * ws
    hop = cfg.hop_length
    out_len = (n_frames - 1) * hop + cfg.frame_length
    # Overlap-add in hop-sized blocks: frame l contributes blocks l .. l + nb - 1.
    nb = -(-cfg.frame_length // hop)
    padded = np.zeros((n_ch, n_frames, nb * hop))
    padded[..., : cfg.frame_length] = frames
    blocks = padded.reshape(n_ch, n_frames, nb, hop)
    acc = np.zeros((n_ch, n_frames + nb - 1, hop))
    for j in range(nb):
        acc[:, j : j + n_frames] += blocks[:, :, j]
    y = acc.reshape(n_ch, -1)[:, :out_len] / cfg._ola_gain
    if pad_edges:
        y = y[:, cfg.latency :]
    if length is not None:
        if y.shape[1] >= length:
            y = y[:, :length]
        else:
            y = np.pad(y, ((0, 0), (0, length - y.shape[1])))
    return MultichannelSignal(y, cfg.sample_rate)
