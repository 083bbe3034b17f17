"""Objective metrics: SNR, SI-SDR, their improvements, detection distance.

Infinite results are clipped to +/-``CAP_DB`` so that aggregates stay
finite.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "CAP_DB",
    "snr",
    "si_sdr",
    "DetectionDistanceParams",
    "detection_distance",
    "MetricsRow",
    "MetricsReport",
    "score_scenario",
    "evaluate_batch",
    "RESULT_COLUMNS",
]

CAP_DB = 100.0

RESULT_COLUMNS = [
    "scenario_id",
    "input_snr_db",
    "doa_true",
    "doa_est",
    "snr_in",
    "snr_out",
    "d_snr",
    "si_sdr_in",
    "si_sdr_out",
    "d_si_sdr",
]
# Filled in only when externally computed values are merged.
OPTIONAL_COLUMNS = ["pesq_in", "pesq_out", "d_pesq", "stoi_in", "stoi_out", "d_stoi"]


def _segment(clean, estimate, segment):
    s = np.asarray(clean, dtype=float).ravel()
    e = np.asarray(estimate, dtype=float).ravel()
    if segment is not None:
        a, b = segment
        s, e = s[a:b], e[a:b]
    if s.shape != e.shape:
        raise DataError(f"reference and estimate lengths differ ({s.size} vs {e.size})")
    if s.size == 0:
        raise DataError("empty evaluation segment")
    es = float(np.dot(s, s))
    if es == 0:
        raise DataError("reference signal has zero energy over the segment")
    return s, e, es


def _ratio_db(num, den):
    if den == 0:
        return CAP_DB if num > 0 else -CAP_DB
    if num == 0:
        return -CAP_DB
    return float(np.clip(10.0 * math.log10(num / den), -CAP_DB, CAP_DB))


def snr(clean_ref, estimate, segment=None) -> float:
    """``10 log10(|s|^2 / |s_hat - s|^2)`` over ``segment = (start, stop)``."""
    s, e, es = _segment(clean_ref, estimate, segment)
    d = e - s
    return _ratio_db(es, float(np.dot(d, d)))


def si_sdr(clean_ref, estimate, segment=None) -> float:
    """Scale-invariant SDR.

    The estimate is projected onto the reference,
    ``s_t = (<s_hat, s> / |s|^2) s``, and the ratio
    ``|s_t|^2 / |s_hat - s_t|^2`` is returned in dB.
    """
    s, e, es = _segment(clean_ref, estimate, segment)
    s_t = (np.dot(e, s) / es) * s
    resid = e - s_t
    return _ratio_db(float(np.dot(s_t, s_t)), float(np.dot(resid, resid)))


@dataclass(frozen=True)
class DetectionDistanceParams:
    """Levels in dB: source SPL at 1 m, drone egonoise SPL at the mic, SNR threshold."""

    l_source_1m: float
    l_drone: float
    snr_th_1mic: float


def detection_distance(params: DetectionDistanceParams) -> float:
    """Range at which the single-mic input SNR falls to the threshold.

    Solves ``L_source - 20 log10(r) - L_drone = SNR_th`` for ``r``.
    """
    vals = (params.l_source_1m, params.l_drone, params.snr_th_1mic)
    if not all(np.isfinite(vals)):
        raise DataError("detection distance inputs must be finite")
    delta = (params.l_source_1m - params.l_drone - params.snr_th_1mic) / 20.0
    return 10.0 ** delta


@dataclass
class MetricsRow:
    scenario_id: str
    input_snr_db: float | None = None
    doa_true: float | None = None
    doa_est: float | None = None
    snr_in: float | None = None
    snr_out: float | None = None
    d_snr: float | None = None
    si_sdr_in: float | None = None
    si_sdr_out: float | None = None
    d_si_sdr: float | None = None
    extra: dict = field(default_factory=dict)
    error: str | None = None

    def as_record(self, columns):
        rec = asdict(self)
        rec.update(self.extra)
        return {c: rec.get(c) for c in columns}


def score_scenario(clean_in, mixture_in, target, enhanced, segment, scenario_id="",
                   input_snr_db=None, doa_true=None, doa_est=None) -> MetricsRow:
    """Input metrics compare channel 1 of the mixture with channel 1 of the
    clean image; output metrics compare the enhanced signal with the
    centre-referenced target."""
    row = MetricsRow(scenario_id, input_snr_db, doa_true, doa_est)
    row.snr_in = snr(clean_in, mixture_in, segment)
    row.snr_out = snr(target, enhanced, segment)
    row.si_sdr_in = si_sdr(clean_in, mixture_in, segment)
    row.si_sdr_out = si_sdr(target, enhanced, segment)
    row.d_snr = row.snr_out - row.snr_in
    row.d_si_sdr = row.si_sdr_out - row.si_sdr_in
    return row


def _stats(values):
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return {"mean": None, "std": None, "count": 0}
    return {"mean": float(v.mean()), "std": float(v.std()), "count": int(v.size)}


@dataclass
class MetricsReport:
    rows: list

    AGG_FIELDS = ("snr_in", "snr_out", "d_snr", "si_sdr_in", "si_sdr_out", "d_si_sdr")

    @property
    def ok_rows(self):
        return [r for r in self.rows if r.error is None]

    def aggregates(self):
        """Per input-SNR condition: mean, std and count of every metric."""
        groups = {}
        for r in self.ok_rows:
            groups.setdefault(r.input_snr_db, []).append(r)
        out = {}
        for cond in sorted(groups, key=lambda c: (c is None, c)):
            rows = groups[cond]
            out[cond] = {f: _stats([getattr(r, f) for r in rows]) for f in self.AGG_FIELDS}
        return out

    def columns(self):
        cols = list(RESULT_COLUMNS)
        for c in OPTIONAL_COLUMNS:
            if any(c in r.extra for r in self.rows):
                cols.append(c)
        return cols

    def write_csv(self, path):
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols + ["error"])
            writer.writeheader()
            for r in self.rows:
                rec = r.as_record(cols)
                rec["error"] = r.error or ""
                writer.writerow({k: _fmt(v) for k, v in rec.items()})

    def to_dict(self):
        cols = self.columns()
        return {
            "rows": [{**r.as_record(cols), "error": r.error} for r in self.rows],
            "aggregates": [
                {"input_snr_db": cond, **stats} for cond, stats in self.aggregates().items()
            ],
        }

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def merge_external(self, values):
        """Merge externally computed metrics, ``{scenario_id: {column: value}}``."""
        for r in self.rows:
            for key, val in values.get(r.scenario_id, {}).items():
                if key not in OPTIONAL_COLUMNS:
                    raise DataError(f"cannot merge unknown column {key!r}")
                r.extra[key] = val


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def evaluate_batch(manifest, results_dir) -> MetricsReport:
    """Score every scenario of a mixing manifest against enhanced outputs.

    ``results_dir`` must hold ``<scenario_id>.wav`` per scenario and,
    optionally, ``<scenario_id>.json`` diagnostics carrying ``doa_deg``.
    Missing or unreadable files produce a row with ``error`` set; the
    batch continues.
    """
    from .wavio import read_wav

    if not isinstance(manifest, dict):
        manifest_path = Path(manifest)
        manifest = json.loads(manifest_path.read_text())
        base = manifest_path.parent
    else:
        base = Path(manifest.get("root", "."))
    results_dir = Path(results_dir)
    rows = []
    for entry in manifest["scenarios"]:
        sid = entry["id"]
        row = MetricsRow(sid, entry.get("target_snr_db"), entry.get("source_azimuth_deg"))
        try:
            files = entry["files"]
            mixture, fs = read_wav(base / files["mixture"])
            clean, _ = read_wav(base / files["clean"])
            target, _ = read_wav(base / files["target"])
            enhanced, fs_out = read_wav(results_dir / f"{sid}.wav")
            if fs_out != fs:
                raise DataError(f"enhanced sample rate {fs_out} differs from mixture {fs}")
            seg = tuple(entry["segment"])
            n = target.shape[1]
            enh = enhanced[0, :n]
            if enh.size < n:
                enh = np.pad(enh, (0, n - enh.size))
            doa_est = None
            diag_path = results_dir / f"{sid}.json"
            if diag_path.exists():
                doa_est = json.loads(diag_path.read_text()).get("doa_deg")
            row = score_scenario(clean[0], mixture[0], target[0], enh, seg, sid,
                                 entry.get("target_snr_db"), entry.get("source_azimuth_deg"),
                                 doa_est)
        except (OSError, KeyError, ValueError) as exc:
            row.error = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return MetricsReport(rows)
