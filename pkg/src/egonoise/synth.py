"""Scenario synthesis: plane-wave rendering, rotor noise, SNR-controlled mixing.

Everything here is deterministic given a seed. Random streams for speech,
noise and insertion offset are spawned from one ``SeedSequence`` so that
changing e.g. the SNR does not change the noise realisation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import ConfigError, DataError
from .geometry import ArrayGeometry, look_direction
from .stft import MultichannelSignal

__all__ = [
    "ScenarioSpec",
    "RotorNoiseModel",
    "GroundTruth",
    "render_plane_wave",
    "fractional_delay",
    "speech_like",
    "rpm_trajectories",
    "generate_rotor_noise",
    "mix_at_snr",
    "make_scenario",
    "load_batch",
]


def fractional_delay(x, delays_s, sample_rate):
    """Delay a 1-D signal by each of ``delays_s`` seconds.

    Uses a linear-phase shift on a zero-padded FFT so the result is a
    band-limited non-circular delay. Returns shape ``(len(delays_s), N)``.
    """
    x = np.asarray(x, dtype=float)
    delays = np.atleast_1d(np.asarray(delays_s, dtype=float))
    n = x.shape[-1]
    out = np.empty((len(delays), n))
    pad = 64 + int(np.ceil(np.max(np.abs(delays)) * sample_rate)) if n else 0
    nfft = 1 << int(np.ceil(np.log2(n + 2 * pad))) if n else 1
    spec = None
    for m, tau in enumerate(delays):
        if tau == 0.0:
            out[m] = x
            continue
        if spec is None:
            spec = np.fft.rfft(np.pad(x, (pad, nfft - n - pad)))
            freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
        shifted = np.fft.irfft(spec * np.exp(-2j * np.pi * freqs * tau), n=nfft)
        out[m] = shifted[pad : pad + n]
    return out


def render_plane_wave(source, geom: ArrayGeometry, azimuth_deg) -> MultichannelSignal:
    """Far-field plane wave from ``azimuth_deg`` as seen by each microphone.

    Channel ``m`` is the source delayed by ``-(r_m . kappa) / c``; there is
    no level difference between channels.
    """
    if isinstance(source, MultichannelSignal):
        if source.channel_count != 1:
            raise DataError("render_plane_wave expects a single-channel source")
        x, fs = source.samples[0], source.sample_rate
    else:
        x, fs = np.asarray(source, dtype=float), geom.sample_rate
    if not np.all(np.isfinite(x)):
        raise DataError("source contains non-finite samples")
    return MultichannelSignal(fractional_delay(x, geom.delays(azimuth_deg), fs), fs)


def speech_like(duration_s, sample_rate=16000.0, seed=0):
    """Synthetic speech-like signal.

    Voiced syllables (gliding f0 between 90 and 240 Hz, three formants,
    raised-cosine envelopes) separated by short pauses, with occasional
    fricative noise bursts. Peak amplitude is normalised to 0.5.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    y = np.zeros(n)
    t0 = int(rng.uniform(0.02, 0.1) * sample_rate)
    nyq = sample_rate / 2
    while t0 < n:
        syl = int(rng.uniform(0.12, 0.3) * sample_rate)
        seg = np.arange(min(syl, n - t0))
        if len(seg) < 8:
            break
        t = seg / sample_rate
        f_start, f_end = rng.uniform(90, 240, size=2)
        f0 = f_start + (f_end - f_start) * t / max(t[-1], 1e-9)
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate
        formants = np.sort(rng.uniform([300, 900, 2000], [900, 2000, 3500]))
        bandwidths = np.array([90.0, 120.0, 200.0])
        voiced = np.zeros(len(seg))
        for h in range(1, int(nyq * 0.9 / f_start) + 1):
            fh = h * 0.5 * (f_start + f_end)
            env = sum(np.exp(-0.5 * ((fh - fc) / bw) ** 2) for fc, bw in zip(formants, bandwidths))
            amp = (env + 0.02) / h ** 0.5
            voiced += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
        voiced *= np.sin(np.pi * seg / len(seg)) ** 2
        if rng.random() < 0.3:
            burst = rng.standard_normal(len(seg))
            b, a = sps.butter(4, min(3000 / nyq, 0.95), btype="high")
            voiced += 0.3 * np.std(voiced) * sps.lfilter(b, a, burst) * np.hanning(len(seg))
        y[t0 : t0 + len(seg)] += voiced
        t0 += len(seg) + int(rng.uniform(0.04, 0.16) * sample_rate)
    peak = np.max(np.abs(y))
    return y * (0.5 / peak) if peak > 0 else y


@dataclass(frozen=True)
class RotorNoiseModel:
    """Parametric multirotor egonoise.

    Each rotor emits a stack of blade-passage harmonics whose frequency
    follows a slowly wandering RPM trajectory. Rotors sit at
    ``rotor_distance`` from the array centre at 45, 135, 225, 315 deg
    (for four rotors) unless ``positions`` is given. A spatially white
    broadband floor is added on every microphone.
    """

    rotor_count: int = 4
    base_rpm: float = 7000.0
    blades: int = 2
    detune_pct: float = 3.0
    harmonic_count: int = 20
    harmonic_decay_db: float = 6.0
    jitter_bandwidth_hz: float = 1.0
    rpm_jitter_pct: float = 1.0
    broadband_floor_db: float = -5.0
    rotor_distance: float = 0.107
    rotor_height: float = 0.02
    positions: tuple | None = None

    def __post_init__(self):
        if self.rotor_count < 0 or self.harmonic_count < 0 or self.blades < 1:
            raise ValueError("rotor_count, harmonic_count >= 0 and blades >= 1 required")
        if self.positions is not None:
            pos = np.asarray(self.positions, dtype=float)
            if pos.shape != (self.rotor_count, 3):
                raise ValueError(f"positions must be ({self.rotor_count}, 3)")

    def rotor_positions(self) -> np.ndarray:
        if self.positions is not None:
            return np.asarray(self.positions, dtype=float)
        az = 45.0 + 360.0 * np.arange(self.rotor_count) / max(self.rotor_count, 1)
        pos = self.rotor_distance * look_direction(az)
        pos[:, 2] = self.rotor_height
        return pos

    def rotor_rpms(self) -> np.ndarray:
        """Nominal RPM of each rotor, spread evenly by ``detune_pct``."""
        if self.rotor_count <= 1:
            return np.full(self.rotor_count, self.base_rpm)
        spread = np.linspace(-1.0, 1.0, self.rotor_count) * self.detune_pct / 100
        return self.base_rpm * (1 + spread)


def rpm_trajectories(model: RotorNoiseModel, n_samples, sample_rate, rng):
    """RPM of each rotor at every sample, shape ``(rotor_count, n_samples)``."""
    nominal = model.rotor_rpms()[:, None] * np.ones((1, n_samples))
    if model.jitter_bandwidth_hz <= 0 or model.rpm_jitter_pct <= 0 or model.rotor_count == 0:
        return nominal
    # Low-pass filtered Gaussian noise, normalised to the requested std.
    wn = min(model.jitter_bandwidth_hz / (sample_rate / 2), 0.99)
    sos = sps.butter(2, wn, output="sos")
    white = rng.standard_normal((model.rotor_count, n_samples + int(sample_rate)))
    slow = sps.sosfilt(sos, white, axis=1)[:, int(sample_rate):]
    slow /= np.std(slow, axis=1, keepdims=True)
    return nominal * (1 + slow * model.rpm_jitter_pct / 100)


def generate_rotor_noise(model: RotorNoiseModel, geom: ArrayGeometry, duration_s,
                         seed=0, sample_rate=None) -> MultichannelSignal:
    """Render rotor egonoise at every microphone.

    Each rotor's harmonic stack is evaluated analytically at the per-mic
    propagation delay from its (near-field) position, so the delay is
    exact; there is no 1/r level difference.
    """
    if not duration_s > 0:
        raise ValueError("duration must be positive")
    fs = geom.sample_rate if sample_rate is None else sample_rate
    n = int(round(duration_s * fs))
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng_rpm, rng_phase, rng_floor = (np.random.default_rng(s) for s in ss.spawn(3))
    positions = model.rotor_positions()
    dists = [np.linalg.norm(geom.mic_positions - p, axis=1) for p in positions]
    max_delay = max((np.ptp(d) for d in dists), default=0.0) / geom.speed_of_sound
    lead = int(np.ceil(max_delay * fs)) + 2
    rpm = rpm_trajectories(model, n + lead, fs, rng_rpm)
    t = (np.arange(n + lead) - lead) / fs
    h = np.arange(1, model.harmonic_count + 1)
    amps = 10.0 ** (-model.harmonic_decay_db * (h - 1) / 20.0)
    out = np.zeros((geom.n_mics, n))
    for r in range(model.rotor_count):
        bpf = rpm[r] / 60.0 * model.blades
        phase = 2 * np.pi * np.concatenate([[0.0], np.cumsum(bpf[:-1])]) / fs
        offsets = np.exp(1j * rng_phase.uniform(0, 2 * np.pi, size=model.harmonic_count))
        n_harm = int(np.sum(h * bpf.max() < fs / 2))
        delays = (dists[r] - dists[r].min()) / geom.speed_of_sound
        for m in range(geom.n_mics):
            z = np.exp(1j * np.interp(t[lead:] - delays[m], t, phase))
            zh = np.ones(n, dtype=complex)
            acc = np.zeros(n, dtype=complex)
            for i in range(n_harm):
                zh *= z
                acc += (amps[i] * offsets[i]) * zh
            out[m] += acc.imag
    if model.harmonic_count > 0 and model.rotor_count > 0:
        ref_power = 0.5 * amps[0] ** 2
    else:
        ref_power = 0.5
    sigma = np.sqrt(ref_power * 10 ** (model.broadband_floor_db / 10))
    out += sigma * rng_floor.standard_normal(out.shape)
    return MultichannelSignal(out, fs)


@dataclass(frozen=True)
class ScenarioSpec:
    """One mixture of a plane-wave talker with egonoise."""

    source_azimuth_deg: float = 180.0
    target_snr_db: float = -10.0
    noise_clip_s: float = 4.0
    speech_segment_s: float = 2.0
    insertion_offset_s: float | str = "random"
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.target_snr_db):
            raise ValueError("target_snr_db must be finite")
        if not 0 < self.speech_segment_s <= self.noise_clip_s:
            raise ValueError("need 0 < speech_segment_s <= noise_clip_s")
        off = self.insertion_offset_s
        if isinstance(off, str):
            if off != "random":
                raise ValueError("insertion_offset_s must be a number or 'random'")
        elif not 0 <= off <= self.noise_clip_s - self.speech_segment_s + 1e-12:
            raise ValueError("insertion offset puts the speech outside the clip")

    def offset_samples(self, sample_rate):
        n_clip = int(round(self.noise_clip_s * sample_rate))
        n_seg = int(round(self.speech_segment_s * sample_rate))
        if self.insertion_offset_s == "random":
            rng = np.random.default_rng(np.random.SeedSequence(self.seed).spawn(4)[3])
            return int(rng.integers(0, n_clip - n_seg + 1))
        return min(int(round(self.insertion_offset_s * sample_rate)), n_clip - n_seg)


@dataclass
class GroundTruth:
    """Everything needed to score an enhanced mixture.

    ``clean`` and ``noise`` are the multichannel components
    (``mixture == clean + noise`` exactly). ``target`` is the scaled source
    referenced to the array centre, i.e. what a distortionless beamformer
    should output.
    """

    clean: np.ndarray
    noise: np.ndarray
    target: np.ndarray | None
    gain: float
    segment: tuple
    sample_rate: float
    spec: ScenarioSpec | None = None
    extra: dict = field(default_factory=dict)

    @property
    def offset_samples(self):
        return self.segment[0]

    def measured_snr_db(self, channel=0):
        a, b = self.segment
        es = np.sum(self.clean[channel, a:b] ** 2)
        en = np.sum(self.noise[channel, a:b] ** 2)
        return 10 * np.log10(es / en)


def mix_at_snr(speech_mc, noise_mc, spec: ScenarioSpec, source=None):
    """Insert ``speech_mc`` into ``noise_mc`` at the SNR requested by ``spec``.

    The SNR is measured on channel 1 over the speech-active segment only.
    ``speech_mc`` is trimmed to ``spec.speech_segment_s`` and ``noise_mc``
    to ``spec.noise_clip_s``. ``source`` (the unrendered mono speech), if
    given, is placed and scaled the same way into ``GroundTruth.target``.

    Returns
    -------
    mixture : MultichannelSignal
    truth : GroundTruth
    """
    if speech_mc.channel_count != noise_mc.channel_count:
        raise DataError(
            f"speech has {speech_mc.channel_count} channels, noise {noise_mc.channel_count}"
        )
    if speech_mc.sample_rate != noise_mc.sample_rate:
        raise DataError("speech and noise sample rates differ")
    fs = speech_mc.sample_rate
    n_clip = int(round(spec.noise_clip_s * fs))
    n_seg = int(round(spec.speech_segment_s * fs))
    if noise_mc.n_samples < n_clip:
        raise DataError(f"noise has {noise_mc.n_samples} samples, clip needs {n_clip}")
    if speech_mc.n_samples < n_seg:
        raise DataError(f"speech has {speech_mc.n_samples} samples, segment needs {n_seg}")
    noise = noise_mc.samples[:, :n_clip].copy()
    speech = speech_mc.samples[:, :n_seg]
    off = spec.offset_samples(fs)
    seg = (off, off + n_seg)
    e_speech = np.sum(speech[0] ** 2)
    e_noise = np.sum(noise[0, seg[0] : seg[1]] ** 2)
    if e_speech == 0 or e_noise == 0:
        raise DataError("speech and noise must both have nonzero energy on channel 1")
    gain = float(np.sqrt(e_noise / e_speech * 10.0 ** (spec.target_snr_db / 10.0)))
    clean = np.zeros_like(noise)
    clean[:, seg[0] : seg[1]] = gain * speech
    mixture = clean + noise
    target = None
    if source is not None:
        src = source.samples[0] if isinstance(source, MultichannelSignal) else np.asarray(source)
        target = np.zeros(n_clip)
        target[seg[0] : seg[1]] = gain * src[:n_seg]
    truth = GroundTruth(clean, noise, target, gain, seg, fs, spec)
    return MultichannelSignal(mixture, fs), truth


def make_scenario(spec: ScenarioSpec, geom: ArrayGeometry, speech=None, noise=None,
                  rotor_model: RotorNoiseModel = RotorNoiseModel()):
    """Render a complete scenario.

    ``speech`` is a mono source (array or MultichannelSignal); a synthetic
    speech-like signal is used when omitted. ``noise`` is a multichannel
    recording; synthetic rotor noise is generated when omitted.
    """
    fs = geom.sample_rate
    ss = np.random.SeedSequence(spec.seed).spawn(4)
    if speech is None:
        speech = speech_like(spec.speech_segment_s, fs, seed=ss[0])
    elif isinstance(speech, MultichannelSignal):
        if speech.sample_rate != fs:
            raise DataError("speech sample rate differs from the array sample rate")
        speech = speech.samples[0]
    n_seg = int(round(spec.speech_segment_s * fs))
    speech = np.asarray(speech, dtype=float)[:n_seg]
    if noise is None:
        noise = generate_rotor_noise(rotor_model, geom, spec.noise_clip_s, seed=ss[1])
    speech_mc = render_plane_wave(speech, geom, spec.source_azimuth_deg)
    return mix_at_snr(speech_mc, noise, spec, source=speech)


_SPEC_KEYS = {f.name for f in fields(ScenarioSpec)}
_BATCH_KEYS = _SPEC_KEYS | {"id", "speech_wav", "noise_wav"}


def load_batch(path):
    """Read a scenario batch file.

    The file is JSON: either a list of entries or an object with optional
    ``defaults`` and a ``scenarios`` list. Entries hold ``ScenarioSpec``
    fields plus optional ``id``, ``speech_wav`` and ``noise_wav`` (paths
    relative to the batch file). Unknown keys are rejected.

    Returns a list of ``(scenario_id, ScenarioSpec, extras)`` tuples.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    defaults = {}
    if isinstance(doc, dict):
        unknown = set(doc) - {"defaults", "scenarios"}
        if unknown:
            raise ConfigError(f"{path}: unknown top-level keys {sorted(unknown)}")
        defaults = doc.get("defaults", {})
        entries = doc.get("scenarios", [])
    else:
        entries = doc
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{path}: no scenarios")
    out = []
    ids = set()
    for i, raw in enumerate(entries):
        entry = {**defaults, **raw}
        unknown = set(entry) - _BATCH_KEYS
        if unknown:
            raise ConfigError(f"{path}: scenario {i}: unknown keys {sorted(unknown)}")
        sid = str(entry.pop("id", f"scenario_{i:04d}"))
        if sid in ids:
            raise ConfigError(f"{path}: duplicate scenario id {sid!r}")
        ids.add(sid)
        extras = {}
        for key in ("speech_wav", "noise_wav"):
            if key in entry:
                extras[key] = str((path.parent / entry.pop(key)).resolve())
        entry.setdefault("seed", i)
        try:
            spec = ScenarioSpec(**entry)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: scenario {sid}: {exc}") from None
        out.append((sid, spec, extras))
    return out


def spec_to_dict(spec: ScenarioSpec) -> dict:
    return asdict(spec)
