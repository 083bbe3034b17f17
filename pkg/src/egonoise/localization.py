"""Steered-response-power DOA estimation with the delay-and-sum beamformer.

For every candidate azimuth the fixed beamformer ``w_c = a(theta) / M`` is
applied to every frame and bin in the band and its output power summed.
The sum is evaluated through the per-bin spatial covariance, which gives
the same value as the frame-by-frame sum at a fraction of the cost.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NoSourceDetected
from .geometry import ArrayGeometry, _steering
from .gsc import GscProcessor, RlsParams
from .stft import MultichannelSignal, SpectrogramTensor, StftConfig, analyze

__all__ = [
    "LocalizationParams",
    "SrpProfile",
    "steered_power_scan",
    "detect_peak",
    "localize",
    "localize_then_enhance",
]


@dataclass(frozen=True)
class LocalizationParams:
    grid_step_deg: float = 1.0
    band: tuple = (300.0, 4000.0)
    peak_threshold_db: float = 0.0

    def __post_init__(self):
        if not self.grid_step_deg > 0:
            raise ValueError("grid_step_deg must be positive")
        lo, hi = self.band
        if not 0 <= lo < hi:
            raise ValueError(f"invalid band {self.band}")

    def to_dict(self):
        return {
            "grid_step_deg": self.grid_step_deg,
            "band_low_hz": self.band[0],
            "band_high_hz": self.band[1],
            "peak_threshold_db": self.peak_threshold_db,
        }


@dataclass
class SrpProfile:
    """Steered power versus azimuth.

    ``power`` is linear and unnormalised; ``power_db`` is normalised so the
    maximum is 0 dB.
    """

    angles: np.ndarray
    power: np.ndarray
    band: tuple

    @property
    def estimated_doa(self) -> float:
        return float(self.angles[int(np.argmax(self.power))])

    @property
    def power_db(self) -> np.ndarray:
        peak = np.max(self.power)
        if peak <= 0:
            return np.full_like(self.power, -np.inf)
        with np.errstate(divide="ignore"):
            return 10 * np.log10(self.power / peak)

    @property
    def peak_to_median_db(self) -> float:
        med = np.median(self.power)
        peak = np.max(self.power)
        if peak <= 0:
            return 0.0
        if med <= 0:
            return np.inf
        return float(10 * np.log10(peak / med))

    def local_maxima(self):
        """Azimuths of circular local maxima, strongest first."""
        p = self.power
        is_max = (p >= np.roll(p, 1)) & (p > np.roll(p, -1))
        idx = np.flatnonzero(is_max)
        return self.angles[idx[np.argsort(p[idx])[::-1]]]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["angle_deg", "power_db"])
            for ang, pdb in zip(self.angles, self.power_db):
                writer.writerow([f"{ang:.6g}", f"{pdb:.6f}"])


def steered_power_scan(spec, geom: ArrayGeometry, cfg: StftConfig, grid_step_deg=1.0,
                       band=(300.0, 4000.0)) -> SrpProfile:
    """Delay-and-sum power ``sum_{l, k in band} |w_c(theta, k)^H x(l, k)|^2``."""
    X = spec.coefficients if isinstance(spec, SpectrogramTensor) else np.asarray(spec)
    if X.ndim != 3 or X.shape[0] != geom.n_mics:
        raise DataError(f"expected ({geom.n_mics}, L, K) coefficients, got {X.shape}")
    lo, hi = band
    nyq = cfg.sample_rate / 2
    if lo < 0 or hi > nyq or lo > hi:
        raise DataError(f"band {band} must lie within [0, {nyq}] Hz")
    freqs = cfg.bin_frequencies()
    sel = np.flatnonzero((freqs >= lo) & (freqs <= hi))
    if sel.size == 0:
        raise DataError(f"band {band} contains no STFT bins")
    angles = np.arange(0.0, 360.0, grid_step_deg)
    Xb = X[:, :, sel]
    R = np.einsum("ilk,jlk->kij", Xb, Xb.conj())  # per-bin spatial covariance
    W = _steering(geom.mic_positions, angles[:, None], freqs[sel][None, :], geom.speed_of_sound)
    W /= geom.n_mics  # (A, Kb, M)
    power = np.einsum("aki,kij,akj->a", W.conj(), R, W).real
    return SrpProfile(angles, np.maximum(power, 0.0), (float(lo), float(hi)))


def detect_peak(profile: SrpProfile, threshold_db=0.0) -> float:
    """Global maximum of ``profile``.

    Raises :class:`NoSourceDetected` when the profile is all zero or its
    peak-to-median ratio does not exceed ``threshold_db``.
    """
    if not np.max(profile.power) > 0:
        raise NoSourceDetected("no dominant peak: steered power is zero (silent input)")
    ratio = profile.peak_to_median_db
    if not ratio > threshold_db:
        raise NoSourceDetected(
            f"no dominant peak: peak-to-median ratio {ratio:.3f} dB <= {threshold_db} dB"
        )
    return profile.estimated_doa


def localize(signal: MultichannelSignal, geom: ArrayGeometry, cfg: StftConfig = StftConfig(),
             params: LocalizationParams = LocalizationParams()):
    """Scan ``signal`` and return ``(doa_deg, profile)``."""
    if signal.channel_count != geom.n_mics:
        raise DataError(
            f"signal has {signal.channel_count} channels but the array has {geom.n_mics}"
        )
    spec = analyze(signal, cfg)
    profile = steered_power_scan(spec, geom, cfg, params.grid_step_deg, params.band)
    return detect_peak(profile, params.peak_threshold_db), profile


def localize_then_enhance(signal: MultichannelSignal, geom: ArrayGeometry,
                          cfg: StftConfig = StftConfig(),
                          params: LocalizationParams = LocalizationParams(),
                          rls_params: RlsParams = RlsParams()):
    """Estimate the DOA, steer the GSC there and enhance.

    Returns ``(doa_deg, enhanced, profile, diagnostics)``.
    """
    doa, profile = localize(signal, geom, cfg, params)
    enhanced, diag = GscProcessor(geom, doa, cfg, rls_params).process(signal)
    diag.extra.update(doa_deg=doa, peak_to_median_db=profile.peak_to_median_db)
    return doa, enhanced, profile, diag
