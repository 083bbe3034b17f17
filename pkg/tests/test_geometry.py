import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from egonoise.errors import ConfigError
from egonoise.geometry import ArrayGeometry, _steering, steering_matrix, steering_vector
from egonoise.stft import StftConfig, analyze
from egonoise.synth import render_plane_wave

angles = st.floats(-720, 720, allow_nan=False)
freqs = st.floats(0, 8000, allow_nan=False)


def test_default_array(geom):
    assert geom.n_mics == 6
    np.testing.assert_allclose(np.linalg.norm(geom.mic_positions, axis=1), 0.035)
    np.testing.assert_allclose(geom.mic_positions[0], [0.035, 0, 0], atol=1e-15)
    np.testing.assert_allclose(geom.mic_positions[:, 2], 0)
    az = np.degrees(np.arctan2(geom.mic_positions[:, 1], geom.mic_positions[:, 0])) % 360
    np.testing.assert_allclose(np.sort(az), np.arange(0, 360, 60), atol=1e-9)


@pytest.mark.parametrize(
    "pos",
    [np.zeros((1, 3)), [[0, 0, 0], [0, 0, 0]], np.zeros((3, 4))],
)
def test_invalid_geometry(pos):
    with pytest.raises(ValueError):
        ArrayGeometry(np.asarray(pos, float))


def test_zero_frequency_gives_ones(geom):
    for az in (0, 37, 180):
        np.testing.assert_array_equal(steering_vector(geom, az, 0.0).entries, np.ones(6))


def test_origin_microphone_entry_is_one():
    g = ArrayGeometry(np.array([[0.0, 0, 0], [0.05, 0.01, 0], [-0.02, 0.04, 0]]))
    for az, f in [(0, 1000), (123, 7000), (300, 50)]:
        assert steering_vector(g, az, f).entries[0] == 1 + 0j


def test_phase_value_and_sign():
    g = ArrayGeometry(np.array([[0.035, 0, 0], [-0.035, 0, 0]]))
    a = steering_vector(g, 0.0, 1000.0).entries
    expected = 2 * np.pi * 1000 * 0.035 / 343
    assert expected == pytest.approx(0.6411, abs=1e-4)
    # The mic nearer the source hears the wave first: phase lead under numpy's DFT.
    assert np.angle(a[0]) == pytest.approx(expected, abs=1e-12)
    assert np.angle(a[1]) == pytest.approx(-expected, abs=1e-12)


@pytest.mark.parametrize("az", np.arange(0, 360, 30))
def test_steering_matches_simulated_plane_wave(geom, az):
    cfg = StftConfig()
    k = 40  # 1250 Hz
    f = k * cfg.sample_rate / cfg.fft_size
    t = np.arange(16000) / cfg.sample_rate
    x = render_plane_wave(np.sin(2 * np.pi * f * t), geom, az)
    X = analyze(x, cfg).coefficients[:, 10:-10, k]  # away from the edges
    measured = np.angle(np.mean(X * X[0].conj(), axis=1))
    a = steering_vector(geom, az, f).entries
    err = np.angle(np.exp(1j * (measured - np.angle(a / a[0]))))
    assert np.max(np.abs(err)) <= 1e-3


@given(az=angles, f=freqs)
def test_unit_modulus(az, f):
    a = steering_vector(ArrayGeometry.uniform_circular(), az, f).entries
    np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-14)


@given(az=angles, f=freqs)
def test_rotational_symmetry(az, f):
    g = ArrayGeometry.uniform_circular()
    a = steering_vector(g, az, f).entries
    b = steering_vector(g, az + 60.0, f).entries
    np.testing.assert_allclose(b, np.roll(a, 1), atol=1e-12)


def test_azimuth_periodicity(geom):
    np.testing.assert_allclose(
        steering_vector(geom, 10, 3000).entries, steering_vector(geom, 370, 3000).entries,
        atol=1e-13,
    )


def test_steering_matrix(geom, cfg):
    A = steering_matrix(geom, 75.0, cfg)
    assert A.shape == (257, 6)
    np.testing.assert_array_equal(A[0], np.ones(6))
    for k in (1, 100, 256):
        np.testing.assert_array_equal(A[k], steering_vector(geom, 75.0, k * 31.25).entries)


def test_conjugate_symmetry(geom):
    f = np.array([100.0, 2500.0, 7999.0])
    pos = _steering(geom.mic_positions, 40.0, f, 343.0)
    neg = _steering(geom.mic_positions, 40.0, -f, 343.0)
    np.testing.assert_allclose(neg, pos.conj(), atol=1e-15)


def test_frequency_above_nyquist_rejected(geom):
    with pytest.raises(ValueError, match="Nyquist"):
        steering_vector(geom, 0, 8000.5)
    with pytest.raises(ValueError):
        steering_vector(geom, 0, -1)


def test_delays_sign(geom):
    # Source on +x: mic 1 (at +x) receives first, mic 4 (at -x) last.
    d = geom.delays(0.0)
    assert d[0] == pytest.approx(-0.035 / 343)
    assert d[3] == pytest.approx(0.035 / 343)


def test_from_mapping_variants():
    g = ArrayGeometry.from_mapping({"n_mics": "4", "radius": "0.05", "speed_of_sound": "340"})
    assert g.n_mics == 4 and g.speed_of_sound == 340
    g = ArrayGeometry.from_mapping({"positions": "0.1 0 0, -0.1 0 0, 0 0.1 0"})
    assert g.n_mics == 3
    np.testing.assert_allclose(g.mic_positions[2], [0, 0.1, 0])
    with pytest.raises(ConfigError, match="unknown"):
        ArrayGeometry.from_mapping({"radiuss": 1})
    with pytest.raises(ConfigError):
        ArrayGeometry.from_mapping({"positions": "0 0 0", "n_mics": 3})
    with pytest.raises(ConfigError):
        ArrayGeometry.from_mapping({"positions": "0 0 0, 0 0 0"})


def test_load_json_and_ini(tmp_path):
    jp = tmp_path / "g.json"
    jp.write_text(json.dumps({"positions": [[0.02, 0, 0], [-0.02, 0, 0]]}))
    assert ArrayGeometry.load(jp).n_mics == 2
    ip = tmp_path / "g.ini"
    ip.write_text("[geometry]\nn_mics = 8\nradius = 0.04\n")
    assert ArrayGeometry.load(ip).n_mics == 8
    bad = tmp_path / "bad.ini"
    bad.write_text("[other]\nx = 1\n")
    with pytest.raises(ConfigError):
        ArrayGeometry.load(bad)
