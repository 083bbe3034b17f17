"""Microphone array geometry and freefield plane-wave steering vectors.

Conventions
-----------
* Azimuth is measured counterclockwise from the +x axis in degrees;
  microphone 1 of the default uniform circular array sits at 0 deg.
* ``kappa = [cos(az), sin(az), 0]`` points from the array centre towards
  the source. The phase reference is the array centre.
* Spectra follow numpy's DFT (signals are sums of ``exp(+j w t)``), so a
  plane wave arriving from ``kappa`` reaches microphone ``m`` early by
  ``kappa . r_m / c`` and its transfer function is
  ``exp(+j w kappa . r_m / c) = exp(-j k . r_m)`` with ``k = -(w / c) kappa``.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

__all__ = [
    "ArrayGeometry",
    "SteeringVector",
    "steering_vector",
    "steering_matrix",
    "look_direction",
]

SPEED_OF_SOUND = 343.0


def look_direction(azimuth_deg) -> np.ndarray:
    """Unit vector(s) from the array centre towards ``azimuth_deg`` (z = 0)."""
    az = np.deg2rad(np.mod(np.asarray(azimuth_deg, dtype=float), 360.0))
    return np.stack([np.cos(az), np.sin(az), np.zeros_like(az)], axis=-1)


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions in metres, shape ``(M, 3)``."""

    mic_positions: np.ndarray
    speed_of_sound: float = SPEED_OF_SOUND
    sample_rate: float = 16000.0

    def __post_init__(self):
        pos = np.array(self.mic_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] not in (2, 3):
            raise ValueError(f"mic_positions must be (M, 3), got shape {pos.shape}")
        if pos.shape[1] == 2:
            pos = np.column_stack([pos, np.zeros(len(pos))])
        if len(pos) < 2:
            raise ValueError("an array needs at least two microphones")
        dists = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        if np.any(dists[np.triu_indices(len(pos), 1)] == 0):
            raise ValueError("microphone positions must be distinct")
        if not self.speed_of_sound > 0 or not self.sample_rate > 0:
            raise ValueError("speed_of_sound and sample_rate must be positive")
        pos.setflags(write=False)
        object.__setattr__(self, "mic_positions", pos)

    @classmethod
    def uniform_circular(cls, n_mics=6, radius=0.035, speed_of_sound=SPEED_OF_SOUND,
                         sample_rate=16000.0):
        """Uniform circular array in the z = 0 plane, mic 1 on the +x axis."""
        phi = 2.0 * np.pi * np.arange(n_mics) / n_mics
        pos = radius * np.column_stack([np.cos(phi), np.sin(phi), np.zeros(n_mics)])
        return cls(pos, speed_of_sound=speed_of_sound, sample_rate=sample_rate)

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]

    def delays(self, azimuth_deg) -> np.ndarray:
        """Arrival delay of each mic relative to the centre, in seconds."""
        return -(self.mic_positions @ look_direction(azimuth_deg)) / self.speed_of_sound

    def to_dict(self) -> dict:
        return {
            "mic_positions": self.mic_positions.tolist(),
            "speed_of_sound": self.speed_of_sound,
            "sample_rate": self.sample_rate,
        }

    @classmethod
    def from_mapping(cls, conf, sample_rate=16000.0):
        """Build from ``n_mics``/``radius`` or explicit ``positions``.

        ``positions`` may be a list of 2- or 3-vectors or a string of
        comma-separated points with whitespace-separated coordinates,
        e.g. ``"0.035 0 0, -0.035 0 0"``.
        """
        conf = dict(conf)
        allowed = {"n_mics", "radius", "positions", "speed_of_sound"}
        unknown = set(conf) - allowed
        if unknown:
            raise ConfigError(f"unknown geometry keys: {sorted(unknown)}")
        c = float(conf.get("speed_of_sound", SPEED_OF_SOUND))
        if "positions" in conf:
            if "n_mics" in conf or "radius" in conf:
                raise ConfigError("give either positions or n_mics/radius, not both")
            pos = conf["positions"]
            if isinstance(pos, str):
                pos = [[float(v) for v in p.split()] for p in pos.split(",") if p.strip()]
            try:
                return cls(np.asarray(pos, dtype=float), speed_of_sound=c,
                           sample_rate=sample_rate)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        try:
            return cls.uniform_circular(int(conf.get("n_mics", 6)),
                                        float(conf.get("radius", 0.035)),
                                        speed_of_sound=c, sample_rate=sample_rate)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path, sample_rate=16000.0):
        """Load from a JSON file or the ``[geometry]`` section of an INI file."""
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".json":
            return cls.from_mapping(json.loads(text), sample_rate=sample_rate)
        parser = configparser.ConfigParser()
        parser.read_string(text)
        if not parser.has_section("geometry"):
            raise ConfigError(f"{path}: no [geometry] section")
        return cls.from_mapping(parser["geometry"], sample_rate=sample_rate)


@dataclass(frozen=True)
class SteeringVector:
    entries: np.ndarray
    doa_azimuth: float
    frequency: float


def _steering(positions, azimuth_deg, freqs, c):
    """Steering entries for arbitrary (also negative) frequencies.

    Azimuths and frequencies broadcast against each other; the result has
    shape ``broadcast(azimuth, freqs).shape + (M,)``.
    """
    proj = look_direction(azimuth_deg) @ positions.T  # kappa . r_m
    freqs = np.asarray(freqs, dtype=float)
    return np.exp(1j * 2.0 * np.pi * freqs[..., None] * proj / c)


def steering_vector(geom: ArrayGeometry, azimuth_deg, frequency_hz) -> SteeringVector:
    """Plane-wave steering vector of ``geom`` towards ``azimuth_deg``."""
    if frequency_hz < 0 or frequency_hz > geom.sample_rate / 2:
        raise ValueError(
            f"frequency {frequency_hz} Hz outside [0, Nyquist={geom.sample_rate / 2}]"
        )
    a = _steering(geom.mic_positions, azimuth_deg, frequency_hz, geom.speed_of_sound)
    return SteeringVector(a, float(azimuth_deg), float(frequency_hz))


def steering_matrix(geom: ArrayGeometry, azimuth_deg, cfg) -> np.ndarray:
    """Steering vectors at every STFT bin centre, shape ``(K, M)``."""
    freqs = cfg.bin_frequencies()
    if freqs[-1] > geom.sample_rate / 2 + 1e-9:
        raise ValueError("STFT sample rate exceeds the geometry sample rate")
    return _steering(geom.mic_positions, azimuth_deg, freqs, geom.speed_of_sound)
