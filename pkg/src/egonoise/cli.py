"""Command-line interface: ``egonoise {mix,localize,enhance,evaluate,detect-range}``.

Exit status: 0 success, 2 usage or configuration error, 3 data error,
4 numerical divergence of the adaptive filter.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config
from .errors import ConfigError, DataError, EgonoiseError
from .geometry import ArrayGeometry
from .gsc import GscProcessor
from .localization import detect_peak, steered_power_scan
from .metrics import DetectionDistanceParams, detection_distance, evaluate_batch
from .postfilter import TMPDIR_ENV, enhance as run_postfilter
from .stft import MultichannelSignal, analyze
from .synth import RotorNoiseModel, load_batch, make_scenario, spec_to_dict
from .wavio import read_wav, write_wav

log = logging.getLogger("egonoise")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4


def _read_signal(path, cfg: PipelineConfig, channels=None) -> MultichannelSignal:
    x, fs = read_wav(path)
    if fs != cfg.stft.sample_rate:
        raise DataError(
            f"{path}: sample rate {fs:g} Hz differs from configured "
            f"{cfg.stft.sample_rate:g} Hz (no resampling is performed)"
        )
    if channels is not None and x.shape[0] != channels:
        raise DataError(f"{path}: {x.shape[0]} channels, expected {channels}")
    return MultichannelSignal(x, fs)


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, allow_nan=False, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _finite(x):
    return None if x is None or not np.isfinite(x) else float(x)


# ---------------------------------------------------------------- mix

def cmd_mix(args, cfg: PipelineConfig) -> int:
    scenarios = load_batch(args.batch)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    geom = cfg.geometry
    fs = cfg.stft.sample_rate
    rotor = RotorNoiseModel()
    entries = []
    for sid, spec, extras in scenarios:
        speech = noise = None
        if "speech_wav" in extras:
            speech = _read_signal(extras["speech_wav"], cfg).samples[0]
        if "noise_wav" in extras:
            noise = _read_signal(extras["noise_wav"], cfg, channels=geom.n_mics)
        mixture, truth = make_scenario(spec, geom, speech=speech, noise=noise, rotor_model=rotor)
        files = {
            "mixture": f"{sid}_mixture.wav",
            "clean": f"{sid}_clean.wav",
            "noise": f"{sid}_noise.wav",
            "target": f"{sid}_target.wav",
        }
        for key, data in (("mixture", mixture.samples), ("clean", truth.clean),
                          ("noise", truth.noise), ("target", truth.target)):
            path = out / files[key]
            try:
                write_wav(path, data, fs, "float32")
            except OSError as exc:
                raise DataError(f"{path}: cannot write ({exc.strerror})") from None
        entry = {"id": sid, **spec_to_dict(spec), **extras,
                 "offset_samples": truth.offset_samples,
                 "segment": list(truth.segment),
                 "gain": truth.gain,
                 "measured_snr_db": truth.measured_snr_db(),
                 "files": files}
        entries.append(entry)
        log.info("%s: %s dB at %s deg", sid, spec.target_snr_db, spec.source_azimuth_deg)
    manifest = {
        "version": 1,
        "sample_rate": fs,
        "geometry": geom.to_dict(),
        "noise_model": "rotor" if all("noise_wav" not in e for e in entries) else "mixed",
        "rotor_model": asdict(rotor),
        "scenarios": entries,
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {len(entries)} scenarios to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- localize

def _scan(signal, cfg: PipelineConfig, profile_csv=None):
    """Steered power profile, written to ``profile_csv`` before peak detection."""
    if signal.channel_count != cfg.geometry.n_mics:
        raise DataError(
            f"input has {signal.channel_count} channels but the array has {cfg.geometry.n_mics}"
        )
    loc = cfg.localization
    spec = analyze(signal, cfg.stft)
    profile = steered_power_scan(spec, cfg.geometry, cfg.stft, loc.grid_step_deg, loc.band)
    if profile_csv:
        profile.to_csv(profile_csv)
    return detect_peak(profile, loc.peak_threshold_db), profile


def cmd_localize(args, cfg: PipelineConfig) -> int:
    signal = _read_signal(args.input, cfg)
    profile_csv = args.profile_csv or cfg.profile_csv
    doa, profile = _scan(signal, cfg, profile_csv)
    result = {"doa_deg": doa, "peak_to_median_db": _finite(profile.peak_to_median_db)}
    if args.json:
        print(json.dumps(result))
    else:
        print(f"doa_deg: {doa:g}")
        print(f"peak_to_median_db: {profile.peak_to_median_db:.3f}")
    if profile_csv:
        log.info("profile written to %s", profile_csv)
    return EXIT_OK


# ---------------------------------------------------------------- enhance

def _theta_arg(text):
    if text in ("auto", "true"):
        return text
    try:
        return float(text) % 360.0
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected an azimuth in degrees, 'auto' or 'true', got {text!r}"
        ) from None


def _enhance_one(signal, theta, cfg: PipelineConfig):
    """GSC + postfilter. Returns the enhanced signal and a diagnostics dict."""
    extra = {}
    if theta == "auto":
        theta, profile = _scan(signal, cfg)
        extra = {"doa_source": "auto", "peak_to_median_db": _finite(profile.peak_to_median_db)}
    else:
        extra = {"doa_source": "given"}
    if signal.channel_count != cfg.geometry.n_mics:
        raise DataError(
            f"input has {signal.channel_count} channels but the array has {cfg.geometry.n_mics}"
        )
    gsc_out, diag = GscProcessor(cfg.geometry, theta, cfg.stft, cfg.rls).process(signal)
    enhanced = run_postfilter(gsc_out, cfg.postfilter, cfg.stft)
    doc = {
        "doa_deg": float(theta),
        **extra,
        "sample_rate": signal.sample_rate,
        "n_samples": signal.n_samples,
        "latency_compensated_samples": cfg.stft.latency,
        "postfilter": cfg.postfilter.kind,
        **diag.to_dict(),
        "config": cfg.to_dict(),
    }
    return enhanced, doc


def cmd_enhance(args, cfg: PipelineConfig) -> int:
    if args.manifest:
        return _enhance_batch(args, cfg)
    if not args.input or not args.output:
        raise ConfigError("enhance needs INPUT and --output, or --manifest with --out-dir")
    if args.theta == "true":
        raise ConfigError("--theta true is only available with --manifest")
    signal = _read_signal(args.input, cfg)
    enhanced, doc = _enhance_one(signal, args.theta, cfg)
    write_wav(args.output, enhanced.samples, enhanced.sample_rate, args.wav_format)
    doc = {"input": str(args.input), "output": str(args.output), **doc}
    diag_path = args.diagnostics or cfg.diagnostics_json
    if diag_path:
        _write_json(diag_path, doc)
    print(f"doa_deg: {doc['doa_deg']:g}")
    return EXIT_OK


def _enhance_batch(args, cfg: PipelineConfig) -> int:
    if not args.out_dir:
        raise ConfigError("--manifest requires --out-dir")
    manifest_path = Path(args.manifest)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: invalid JSON ({exc})") from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    for entry in manifest["scenarios"]:
        sid = entry["id"]
        theta = entry["source_azimuth_deg"] if args.theta == "true" else args.theta
        try:
            signal = _read_signal(manifest_path.parent / entry["files"]["mixture"], cfg)
            enhanced, doc = _enhance_one(signal, theta, cfg)
        except EgonoiseError as exc:
            if exc.exit_code == EXIT_DIVERGENCE:
                raise
            failed += 1
            log.error("%s: %s", sid, exc)
            _write_json(out / f"{sid}.json", {"id": sid, "error": str(exc)})
            continue
        write_wav(out / f"{sid}.wav", enhanced.samples, enhanced.sample_rate, args.wav_format)
        _write_json(out / f"{sid}.json", {"id": sid, **doc})
    n = len(manifest["scenarios"])
    print(f"enhanced {n - failed}/{n} scenarios into {out}")
    return EXIT_DATA if failed else EXIT_OK


# ---------------------------------------------------------------- evaluate

def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    report = evaluate_batch(args.manifest, args.enhanced_dir)
    if args.csv:
        report.write_csv(args.csv)
    if args.json:
        report.write_json(args.json)
    print(f"{'input_snr_db':>12} {'n':>4} {'d_snr':>9} {'d_si_sdr':>9}")
    for cond, stats in report.aggregates().items():
        print(f"{cond!s:>12} {stats['d_snr']['count']:>4} "
              f"{stats['d_snr']['mean']:>9.2f} {stats['d_si_sdr']['mean']:>9.2f}")
    errors = [r for r in report.rows if r.error]
    for r in errors:
        print(f"error: {r.scenario_id}: {r.error}", file=sys.stderr)
    return EXIT_DATA if errors and len(errors) == len(report.rows) else EXIT_OK


# ---------------------------------------------------------------- detect-range

def cmd_detect_range(args, cfg: PipelineConfig) -> int:
    r = detection_distance(DetectionDistanceParams(args.l_source, args.l_drone, args.snr_th))
    print(f"{r:.6g} m")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="egonoise",
        description="Drone egonoise reduction: GSC beamforming, SRP localization, postfiltering.",
        epilog=f"Set {TMPDIR_ENV} to choose where external-postfilter temp files go.",
    )
    parser.add_argument("--config", metavar="PATH", help="INI configuration file")
    parser.add_argument("--geometry", metavar="PATH",
                        help="array geometry (JSON, or INI with a [geometry] section); "
                             "overrides the config")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("mix", help="render a scenario batch to WAV files and a manifest")
    p.add_argument("batch", help="scenario batch JSON")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("localize", help="estimate the talker azimuth of a multichannel WAV")
    p.add_argument("input")
    p.add_argument("--profile-csv", metavar="PATH", help="write (angle_deg, power_db) profile")
    p.add_argument("--json", action="store_true", help="print the result as JSON")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("enhance", help="beamform and postfilter a multichannel WAV")
    p.add_argument("input", nargs="?")
    p.add_argument("-o", "--output", metavar="WAV")
    p.add_argument("--theta", type=_theta_arg, default="auto",
                   help="look direction in degrees, 'auto' (localize first) or, with "
                        "--manifest, 'true' (use the manifest azimuth); default auto")
    p.add_argument("--diagnostics", metavar="JSON")
    p.add_argument("--manifest", metavar="JSON", help="enhance every mixture of a manifest")
    p.add_argument("--out-dir", help="output directory for --manifest")
    p.add_argument("--postfilter", choices=["none", "wiener", "external"])
    p.add_argument("--external-cmd", metavar="CMD",
                   help="command template with {in} and {out} placeholders")
    p.add_argument("--wav-format", choices=["float32", "pcm16"], default="float32")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="score enhanced outputs against a manifest")
    p.add_argument("manifest")
    p.add_argument("enhanced_dir")
    p.add_argument("--csv", metavar="PATH")
    p.add_argument("--json", metavar="PATH")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("detect-range", help="effective detection distance in metres")
    p.add_argument("--l-source", type=float, required=True, help="source level at 1 m, dB SPL")
    p.add_argument("--l-drone", type=float, required=True, help="egonoise level, dB SPL")
    p.add_argument("--snr-th", type=float, required=True, help="single-mic SNR threshold, dB")
    p.set_defaults(func=cmd_detect_range)
    return parser


def _effective_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.geometry:
        try:
            geom = ArrayGeometry.load(args.geometry, sample_rate=cfg.stft.sample_rate)
        except OSError as exc:
            raise ConfigError(f"cannot read geometry {args.geometry}: {exc.strerror}") from None
        cfg = PipelineConfig(cfg.stft, geom, cfg.rls, cfg.localization, cfg.postfilter,
                             cfg.profile_csv, cfg.diagnostics_json)
    if getattr(args, "postfilter", None) or getattr(args, "external_cmd", None):
        try:
            cfg = cfg.with_postfilter(args.postfilter, args.external_cmd)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s: %(message)s",
    )
    try:
        cfg = _effective_config(args)
        return args.func(args, cfg)
    except EgonoiseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
