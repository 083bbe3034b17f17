"""Pipeline configuration file.

An INI file with the optional sections below; every key is optional and
unknown sections or keys are rejected::

    [stft]
    frame_length = 512
    hop_length = 256
    fft_size = 512
    window = sqrt-hann
    sample_rate = 16000

    [geometry]
    n_mics = 6
    radius = 0.035
    # or: positions = 0.035 0 0, -0.035 0 0, ...
    speed_of_sound = 343

    [rls]
    lambda = 0.995
    delta_reg = 0.01

    [localization]
    grid_step_deg = 1
    band_low_hz = 300
    band_high_hz = 4000
    peak_threshold_db = 0

    [postfilter]
    kind = none
    external_cmd = deep-filter {in} -o {out}
    alpha = 0.98
    gain_floor_db = -15
    dd_alpha = 0.98
    wav_format = pcm16

    [output]
    profile_csv =
    diagnostics_json =
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .geometry import ArrayGeometry
from .gsc import RlsParams
from .localization import LocalizationParams
from .postfilter import PostfilterSpec, WienerParams
from .stft import StftConfig

__all__ = ["PipelineConfig", "load_config"]

_SECTIONS = {
    "stft": {"frame_length": int, "hop_length": int, "fft_size": int, "window": str,
             "sample_rate": float},
    "geometry": {"n_mics": int, "radius": float, "positions": str, "speed_of_sound": float},
    "rls": {"lambda": float, "delta_reg": float},
    "localization": {"grid_step_deg": float, "band_low_hz": float, "band_high_hz": float,
                     "peak_threshold_db": float},
    "postfilter": {"kind": str, "external_cmd": str, "alpha": float, "gain_floor_db": float,
                   "dd_alpha": float, "wav_format": str},
    "output": {"profile_csv": str, "diagnostics_json": str},
}


def _default_geometry():
    return ArrayGeometry.uniform_circular()


@dataclass(eq=False)
class PipelineConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    geometry: ArrayGeometry = field(default_factory=_default_geometry)
    rls: RlsParams = field(default_factory=RlsParams)
    localization: LocalizationParams = field(default_factory=LocalizationParams)
    postfilter: PostfilterSpec = field(default_factory=PostfilterSpec)
    profile_csv: str | None = None
    diagnostics_json: str | None = None

    def __post_init__(self):
        if self.geometry.sample_rate != self.stft.sample_rate:
            self.geometry = ArrayGeometry(self.geometry.mic_positions,
                                          self.geometry.speed_of_sound,
                                          self.stft.sample_rate)

    def __eq__(self, other):
        return isinstance(other, PipelineConfig) and self.to_dict() == other.to_dict()

    def to_dict(self) -> dict:
        """Plain nested mapping; keys mirror the INI sections."""
        pf = self.postfilter
        return {
            "stft": {
                "frame_length": self.stft.frame_length,
                "hop_length": self.stft.hop_length,
                "fft_size": self.stft.fft_size,
                "window": self.stft.window,
                "sample_rate": self.stft.sample_rate,
            },
            "geometry": {
                "positions": self.geometry.mic_positions.tolist(),
                "speed_of_sound": self.geometry.speed_of_sound,
            },
            "rls": self.rls.to_dict(),
            "localization": self.localization.to_dict(),
            "postfilter": {
                "kind": pf.kind,
                "external_cmd": pf.external_cmd,
                "alpha": pf.wiener.alpha,
                "gain_floor_db": pf.wiener.gain_floor_db,
                "dd_alpha": pf.wiener.dd_alpha,
                "wav_format": pf.wav_format,
            },
            "output": {
                "profile_csv": self.profile_csv,
                "diagnostics_json": self.diagnostics_json,
            },
        }

    @classmethod
    def from_dict(cls, doc) -> "PipelineConfig":
        """Inverse of :meth:`to_dict`; missing sections and keys take defaults."""
        unknown = set(doc) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        for name, sect in doc.items():
            extra = set(sect) - set(_SECTIONS[name])
            if extra:
                raise ConfigError(f"[{name}]: unknown keys {sorted(extra)}")
        try:
            return cls._build(doc)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def _build(cls, doc):
        s = doc.get("stft", {})
        stft = StftConfig(**s)
        g = dict(doc.get("geometry", {}))
        if g.get("positions") is None:
            g.pop("positions", None)
        geometry = ArrayGeometry.from_mapping(g, sample_rate=stft.sample_rate)
        r = doc.get("rls", {})
        rls = RlsParams(lam=r.get("lambda", 0.995), delta_reg=r.get("delta_reg", 0.01))
        loc_d = doc.get("localization", {})
        base = LocalizationParams()
        loc = LocalizationParams(
            grid_step_deg=loc_d.get("grid_step_deg", base.grid_step_deg),
            band=(loc_d.get("band_low_hz", base.band[0]), loc_d.get("band_high_hz", base.band[1])),
            peak_threshold_db=loc_d.get("peak_threshold_db", base.peak_threshold_db),
        )
        p = dict(doc.get("postfilter", {}))
        wiener = WienerParams(**{k: p.pop(k) for k in ("alpha", "gain_floor_db", "dd_alpha")
                                 if k in p})
        pf = PostfilterSpec(kind=p.get("kind", "none"), external_cmd=p.get("external_cmd"),
                            wiener=wiener, wav_format=p.get("wav_format", "pcm16"))
        out = doc.get("output", {})
        return cls(stft, geometry, rls, loc, pf, out.get("profile_csv"),
                   out.get("diagnostics_json"))

    def to_ini(self) -> str:
        """Serialise to INI text that :func:`load_config` parses back to an equal config."""
        parser = configparser.ConfigParser(interpolation=None)
        for name, sect in self.to_dict().items():
            parser.add_section(name)
            for key, val in sect.items():
                if val is None:
                    continue
                if key == "positions":
                    val = ", ".join(" ".join(repr(float(c)) for c in p) for p in val)
                elif isinstance(val, float):
                    val = repr(val)
                parser.set(name, key, str(val))
        lines = []
        for name in parser.sections():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {v}" for k, v in parser.items(name))
            lines.append("")
        return "\n".join(lines)

    def with_postfilter(self, kind=None, external_cmd=None) -> "PipelineConfig":
        """Copy with command-line postfilter overrides applied."""
        pf = self.postfilter
        if kind is None and external_cmd is None:
            return self
        pf = PostfilterSpec(kind=kind or pf.kind, external_cmd=external_cmd or pf.external_cmd,
                            wiener=pf.wiener, wav_format=pf.wav_format)
        return replace(self, postfilter=pf)


def _parse_ini(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None, default_section="\x00none")
    try:
        parser.read_string(text, source=str(source))
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    doc = {}
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{name}]")
        types = _SECTIONS[name]
        sect = {}
        for key, raw in parser.items(name):
            if key not in types:
                raise ConfigError(f"{source}: [{name}] unknown key {key!r}")
            raw = raw.strip()
            if raw == "":
                continue
            try:
                sect[key] = types[key](raw)
            except ValueError:
                raise ConfigError(
                    f"{source}: [{name}] {key} = {raw!r} is not a valid {types[key].__name__}"
                ) from None
        doc[name] = sect
    return doc


def load_config(path=None, text=None) -> PipelineConfig:
    """Load a config file; with neither argument the defaults are returned."""
    if path is None and text is None:
        return PipelineConfig()
    if text is None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return PipelineConfig.from_dict(_parse_ini(text, path or "<string>"))
