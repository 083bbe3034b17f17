import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from egonoise import cli
from egonoise.config import load_config
from egonoise.errors import DivergenceError
from egonoise.synth import render_plane_wave
from egonoise.wavio import read_wav, write_wav


@pytest.fixture(scope="module")
def mixed(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    batch = root / "batch.json"
    batch.write_text(json.dumps({
        "defaults": {"noise_clip_s": 2.0, "speech_segment_s": 1.0},
        "scenarios": [
            {"id": "a", "target_snr_db": -10, "source_azimuth_deg": 180, "seed": 1},
            {"id": "b", "target_snr_db": -20, "source_azimuth_deg": 60, "seed": 2},
        ],
    }))
    assert cli.main(["mix", str(batch), "--out-dir", str(root / "mix")]) == 0
    return root


def test_mix_outputs(mixed):
    manifest = json.loads((mixed / "mix" / "manifest.json").read_text())
    assert [e["id"] for e in manifest["scenarios"]] == ["a", "b"]
    entry = manifest["scenarios"][0]
    assert entry["target_snr_db"] == -10 and entry["seed"] == 1
    assert abs(entry["measured_snr_db"] + 10) <= 0.01
    mix, fs = read_wav(mixed / "mix" / entry["files"]["mixture"])
    clean, _ = read_wav(mixed / "mix" / entry["files"]["clean"])
    noise, _ = read_wav(mixed / "mix" / entry["files"]["noise"])
    target, _ = read_wav(mixed / "mix" / entry["files"]["target"])
    assert fs == 16000 and mix.shape == (6, 32000) and target.shape == (1, 32000)
    np.testing.assert_allclose(mix, clean + noise, atol=1e-6)


def test_mix_is_deterministic(mixed, tmp_path):
    assert cli.main(["mix", str(mixed / "batch.json"), "--out-dir", str(tmp_path)]) == 0
    for name in ("a_mixture.wav", "b_target.wav", "manifest.json"):
        assert (tmp_path / name).read_bytes() == (mixed / "mix" / name).read_bytes()


def test_localize(mixed, tmp_path, capsys):
    prof = tmp_path / "p.csv"
    rc = cli.main(["localize", str(mixed / "mix" / "a_mixture.wav"), "--profile-csv", str(prof),
                   "--json"])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(out["doa_deg"] - 180) <= 5
    rows = list(csv.reader(prof.open()))
    assert rows[0] == ["angle_deg", "power_db"] and len(rows) == 361


def test_localize_plane_wave(tmp_path, capsys, geom):
    src = np.random.default_rng(0).standard_normal(16000) * 0.1
    path = tmp_path / "pw.wav"
    write_wav(path, render_plane_wave(src, geom, 180.0).samples, 16000, "float32")
    assert cli.main(["localize", str(path)]) == 0
    assert "doa_deg: 180" in capsys.readouterr().out


def test_enhance_single_with_diagnostics(mixed, tmp_path, capsys):
    cfg_path = tmp_path / "c.ini"
    cfg_path.write_text("[rls]\nlambda = 0.99\n[postfilter]\nkind = wiener\n")
    out, diag = tmp_path / "e.wav", tmp_path / "e.json"
    rc = cli.main(["--config", str(cfg_path), "enhance", str(mixed / "mix" / "a_mixture.wav"),
                   "-o", str(out), "--theta", "180", "--diagnostics", str(diag)])
    assert rc == 0
    y, fs = read_wav(out)
    assert y.shape == (1, 32000) and fs == 16000
    doc = json.loads(diag.read_text())
    assert doc["doa_deg"] == 180.0 and doc["doa_source"] == "given"
    assert doc["postfilter"] == "wiener"
    assert len(doc["frame_output_power"]) == len(doc["frame_fixed_power"]) > 0
    # The echoed configuration is exactly the parsed input.
    assert doc["config"] == json.loads(json.dumps(load_config(cfg_path).to_dict()))


def test_enhance_none_equals_external_identity(mixed, tmp_path):
    src = str(mixed / "mix" / "a_mixture.wav")
    a, b = tmp_path / "a.wav", tmp_path / "b.wav"
    assert cli.main(["enhance", src, "-o", str(a), "--theta", "180"]) == 0
    copy = tmp_path / "copy.py"
    copy.write_text("import shutil, sys\nshutil.copyfile(sys.argv[1], sys.argv[2])\n")
    cfg_path = tmp_path / "c.ini"
    cfg_path.write_text("[postfilter]\nwav_format = float64\n")
    rc = cli.main(["--config", str(cfg_path), "enhance", src, "-o", str(b), "--theta", "180",
                   "--postfilter", "external",
                   "--external-cmd", f'"{sys.executable}" "{copy}" {{in}} {{out}}'])
    assert rc == 0
    assert a.read_bytes() == b.read_bytes()


def test_enhance_is_deterministic(mixed, tmp_path):
    src = str(mixed / "mix" / "b_mixture.wav")
    outs = []
    for i in range(2):
        out = tmp_path / f"o{i}.wav"
        assert cli.main(["enhance", src, "-o", str(out), "--postfilter", "wiener"]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_batch_enhance_and_evaluate(mixed, tmp_path, capsys):
    manifest = mixed / "mix" / "manifest.json"
    enh = tmp_path / "enh"
    assert cli.main(["enhance", "--manifest", str(manifest), "--out-dir", str(enh),
                     "--theta", "true"]) == 0
    assert sorted(p.name for p in enh.iterdir()) == ["a.json", "a.wav", "b.json", "b.wav"]
    res = tmp_path / "r.csv"
    rj = tmp_path / "r.json"
    capsys.readouterr()
    assert cli.main(["evaluate", str(manifest), str(enh), "--csv", str(res), "--json", str(rj)]) == 0
    rows = list(csv.DictReader(res.open()))
    assert list(rows[0])[:10] == ["scenario_id", "input_snr_db", "doa_true", "doa_est", "snr_in",
                                  "snr_out", "d_snr", "si_sdr_in", "si_sdr_out", "d_si_sdr"]
    for r in rows:
        assert float(r["d_snr"]) > 0
        assert float(r["doa_est"]) == float(r["doa_true"])
    doc = json.loads(rj.read_text())
    assert {a["input_snr_db"] for a in doc["aggregates"]} == {-10, -20}
    assert "d_snr" in capsys.readouterr().out


def test_evaluate_reports_missing_rows(mixed, tmp_path, capsys):
    enh = tmp_path / "partial"
    enh.mkdir()
    manifest = mixed / "mix" / "manifest.json"
    x, _ = read_wav(mixed / "mix" / "a_target.wav")
    write_wav(enh / "a.wav", x, 16000, "float32")
    assert cli.main(["evaluate", str(manifest), str(enh), "--csv", str(tmp_path / "r.csv")]) == 0
    assert "b.wav" in capsys.readouterr().err
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.main(["evaluate", str(manifest), str(empty)]) == 3


def test_detect_range(capsys):
    assert cli.main(["detect-range", "--l-source", "90", "--l-drone", "80", "--snr-th", "-30"]) == 0
    assert capsys.readouterr().out.strip() == "100 m"
    assert cli.main(["detect-range", "--l-source", "70", "--l-drone", "70", "--snr-th", "0"]) == 0
    assert capsys.readouterr().out.strip() == "1 m"


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["frobnicate"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        cli.main(["enhance", "x.wav", "--theta", "north"])
    assert info.value.code == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[rls]\nlambd = 1\n")
    assert cli.main(["--config", str(bad), "detect-range", "--l-source", "1", "--l-drone", "1",
                     "--snr-th", "1"]) == 2
    assert "lambd" in capsys.readouterr().err
    assert cli.main(["enhance", "x.wav"]) == 2  # no --output
    assert cli.main(["enhance", "x.wav", "-o", "y.wav", "--theta", "true"]) == 2
    assert cli.main(["enhance", "x.wav", "-o", "y.wav", "--postfilter", "external"]) == 2


def test_data_errors(mixed, tmp_path, capsys):
    assert cli.main(["localize", str(tmp_path / "missing.wav")]) == 3
    assert "missing.wav" in capsys.readouterr().err
    stereo = tmp_path / "stereo.wav"
    write_wav(stereo, np.random.default_rng(0).standard_normal((2, 8000)) * 0.1, 16000)
    assert cli.main(["localize", str(stereo)]) == 3
    assert "channels" in capsys.readouterr().err
    silent = tmp_path / "silent.wav"
    write_wav(silent, np.zeros((6, 8000)), 16000)
    assert cli.main(["localize", str(silent)]) == 3
    assert "no dominant peak" in capsys.readouterr().err
    slow = tmp_path / "8k.wav"
    write_wav(slow, np.zeros((6, 8000)), 8000)
    assert cli.main(["enhance", str(slow), "-o", str(tmp_path / "o.wav"), "--theta", "0"]) == 3
    assert "resampling" in capsys.readouterr().err
    src = str(mixed / "mix" / "a_mixture.wav")
    assert cli.main(["enhance", src, "-o", str(tmp_path / "o.wav"), "--theta", "0",
                     "--postfilter", "external", "--external-cmd", "no-such-tool {in} {out}"]) == 3


def test_divergence_exit_code(mixed, tmp_path, monkeypatch, capsys):
    def boom(self, signal, backend=None):
        raise DivergenceError(17, 3)

    monkeypatch.setattr(cli.GscProcessor, "process", boom)
    rc = cli.main(["enhance", str(mixed / "mix" / "a_mixture.wav"), "-o", str(tmp_path / "o.wav"),
                   "--theta", "0"])
    assert rc == 4
    assert "bin 17" in capsys.readouterr().err


def test_geometry_override(tmp_path, capsys):
    g = tmp_path / "g.json"
    g.write_text(json.dumps({"n_mics": 4, "radius": 0.05}))
    path = tmp_path / "six.wav"
    write_wav(path, np.random.default_rng(0).standard_normal((6, 8000)) * 0.1, 16000)
    assert cli.main(["--geometry", str(g), "localize", str(path)]) == 3
    assert "4" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "egonoise", "detect-range", "--l-source", "90",
                          "--l-drone", "80", "--snr-th", "-30"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "100 m"
