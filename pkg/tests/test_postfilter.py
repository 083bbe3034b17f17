import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egonoise.errors import DataError
from egonoise.postfilter import (
    ExternalPostfilterError,
    PostfilterSpec,
    WienerParams,
    apply_external,
    apply_wiener_baseline,
    enhance,
    wiener_gain,
)
from egonoise.stft import MultichannelSignal, StftConfig
from egonoise.synth import speech_like

SCRIPTS = {
    "copy": "import shutil, sys\nshutil.copyfile(sys.argv[1], sys.argv[2])\n",
    "half": (
        "import sys\nfrom scipy.io import wavfile\n"
        "fs, x = wavfile.read(sys.argv[1])\n"
        "wavfile.write(sys.argv[2], fs, (x.astype('float64') * 0.5).astype(x.dtype))\n"
    ),
    "fail": "import sys\nprint('model weights not found', file=sys.stderr)\nsys.exit(3)\n",
    "silent": "pass\n",
    "rate": (
        "import sys\nfrom scipy.io import wavfile\n"
        "fs, x = wavfile.read(sys.argv[1])\nwavfile.write(sys.argv[2], 8000, x)\n"
    ),
    "short": (
        "import sys\nfrom scipy.io import wavfile\n"
        "fs, x = wavfile.read(sys.argv[1])\nwavfile.write(sys.argv[2], fs, x[:-100])\n"
    ),
    "where": (
        "import os, shutil, sys\nshutil.copyfile(sys.argv[1], sys.argv[2])\n"
        "open(os.environ['PROBE'], 'w').write(os.path.dirname(sys.argv[1]))\n"
    ),
}


@pytest.fixture
def script(tmp_path):
    def make(name, fmt="float64"):
        path = tmp_path / f"{name}.py"
        path.write_text(SCRIPTS[name])
        return PostfilterSpec(kind="external", external_cmd=f'"{sys.executable}" "{path}" {{in}} {{out}}',
                              wav_format=fmt)
    return make


def energy_db(x):
    return 10 * np.log10(np.sum(np.asarray(x) ** 2))


def mono(x, fs=16000):
    return MultichannelSignal(np.asarray(x)[None], fs)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_clean_speech_passes(seed):
    s = speech_like(3.0, 16000, seed=seed)
    y = apply_wiener_baseline(mono(s)).samples[0]
    assert abs(energy_db(y) - energy_db(s)) <= 1.0


def test_stationary_noise_is_attenuated():
    n = np.random.default_rng(0).standard_normal(16000 * 8)
    y = apply_wiener_baseline(mono(n)).samples[0]
    tail = slice(len(n) // 2, None)
    assert energy_db(y[tail]) - energy_db(n[tail]) <= -15.0 + 3.0


def test_silence_stays_silent():
    y = apply_wiener_baseline(mono(np.zeros(8000))).samples
    assert not y.any()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), floor=st.floats(-30, 0), scale=st.floats(1e-4, 1e3))
def test_gain_bounded(seed, floor, scale):
    rng = np.random.default_rng(seed)
    power = scale * rng.exponential(size=(120, 257)) * rng.uniform(0.1, 10, size=257)
    G = wiener_gain(power, StftConfig(), WienerParams(gain_floor_db=floor))
    assert np.all(G <= 1.0)
    assert np.all(G >= 10 ** (floor / 20) - 1e-15)


def test_output_length_matches_input():
    x = np.random.default_rng(1).standard_normal(12345)
    assert apply_wiener_baseline(mono(x)).n_samples == 12345


def test_wiener_rejects_multichannel():
    with pytest.raises(DataError):
        apply_wiener_baseline(MultichannelSignal(np.zeros((2, 4000)), 16000))


@pytest.mark.parametrize(
    "kwargs",
    [dict(alpha=1.0), dict(alpha=0.0), dict(gain_floor_db=-31), dict(gain_floor_db=1),
     dict(dd_alpha=1.5), dict(min_window_s=0)],
)
def test_wiener_params_validation(kwargs):
    with pytest.raises(ValueError):
        WienerParams(**kwargs)


def test_spec_validation():
    assert PostfilterSpec(kind="wiener_baseline").kind == "wiener"
    with pytest.raises(ValueError):
        PostfilterSpec(kind="dnn")
    with pytest.raises(ValueError):
        PostfilterSpec(kind="external")
    with pytest.raises(ValueError):
        PostfilterSpec(wav_format="mp3")


def test_none_is_identity():
    x = mono(np.random.default_rng(2).standard_normal(4000))
    assert enhance(x, PostfilterSpec()) is x


def test_external_copy_is_bit_exact(script):
    x = mono(np.random.default_rng(3).standard_normal(5000) * 0.3)
    y = apply_external(x, script("copy", "float64"))
    np.testing.assert_array_equal(y.samples, x.samples)


def test_external_copy_pcm16_within_one_lsb(script):
    x = mono(np.random.default_rng(3).uniform(-0.9, 0.9, 5000))
    y = apply_external(x, script("copy", "pcm16"))
    assert np.max(np.abs(y.samples - x.samples)) <= 1 / 32768


def test_external_pcm16_headroom(script):
    x = mono(np.random.default_rng(4).standard_normal(5000) * 3.0)
    y = apply_external(x, script("copy", "pcm16"))
    peak = np.max(np.abs(x.samples))
    assert np.max(np.abs(y.samples - x.samples)) <= peak / 0.99 / 32768


def test_external_gain_script(script):
    x = mono(np.random.default_rng(5).standard_normal(3000) * 0.2)
    y = apply_external(x, script("half", "float64"))
    np.testing.assert_allclose(y.samples, 0.5 * x.samples, rtol=0, atol=1e-15)


def test_external_missing_command():
    spec = PostfilterSpec(kind="external", external_cmd="no-such-enhancer {in} {out}")
    with pytest.raises(ExternalPostfilterError, match="no-such-enhancer"):
        apply_external(mono(np.zeros(1000)), spec)


def test_external_failure_captures_output(script):
    with pytest.raises(ExternalPostfilterError, match="model weights not found") as info:
        apply_external(mono(np.ones(1000) * 0.1), script("fail"))
    assert "status 3" in str(info.value)
    assert info.value.exit_code == 3


def test_external_missing_output(script):
    with pytest.raises(ExternalPostfilterError, match="did not write"):
        apply_external(mono(np.ones(1000) * 0.1), script("silent"))


def test_external_rate_mismatch(script):
    with pytest.raises(ExternalPostfilterError, match="8000 Hz"):
        apply_external(mono(np.ones(1000) * 0.1), script("rate"))


def test_external_length_fixed_with_warning(script):
    x = mono(np.random.default_rng(6).standard_normal(3000) * 0.1)
    with pytest.warns(UserWarning, match="2900 samples"):
        y = apply_external(x, script("short"))
    assert y.n_samples == 3000
    np.testing.assert_array_equal(y.samples[0, :2900], x.samples[0, :2900])
    assert not y.samples[0, 2900:].any()


def test_tmpdir_override(script, tmp_path, monkeypatch):
    base = tmp_path / "scratch"
    probe = tmp_path / "probe.txt"
    monkeypatch.setenv("EGONOISE_TMPDIR", str(base))
    monkeypatch.setenv("PROBE", str(probe))
    apply_external(mono(np.ones(1000) * 0.1), script("where"))
    used = probe.read_text()
    assert used.startswith(str(base))
    assert list(base.iterdir()) == []  # cleaned up afterwards


def test_enhance_dispatch(script):
    x = mono(np.random.default_rng(7).standard_normal(8000) * 0.1)
    w = enhance(x, PostfilterSpec(kind="wiener"))
    np.testing.assert_array_equal(w.samples, apply_wiener_baseline(x).samples)
    e = enhance(x, script("copy"))
    np.testing.assert_array_equal(e.samples, x.samples)
