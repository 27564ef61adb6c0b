import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spice_pitch import calibration as cal
from spice_pitch.cqt import CqtParams
from spice_pitch.model import SpiceConfig, SpiceModel


def test_exact_line():
    y = np.array([-1.0, 0.0, 0.5, 2.0])
    c = cal.fit(np.column_stack([y, 3 + 2 * y]))
    assert c.intercept == pytest.approx(3.0, abs=1e-12)
    assert c.slope == pytest.approx(2.0, abs=1e-12)
    assert c.residual_rms == pytest.approx(0.0, abs=1e-12)
    assert c.m == 4


def test_two_points_interpolate():
    c = cal.fit([(0.1, 40.0), (0.3, 20.0)])
    np.testing.assert_allclose(c.predict([0.1, 0.3]), [40.0, 20.0])
    assert c.residual_rms == pytest.approx(0.0, abs=1e-12)


def test_noisy_line_monte_carlo():
    rng = np.random.default_rng(0)
    db, ds = [], []
    for _ in range(200):
        y = rng.uniform(-1, 1, 50)
        p = 30 + 20 * y + rng.normal(0, 0.1, 50)
        c = cal.fit(np.column_stack([y, p]))
        db.append(c.intercept - 30)
        ds.append(c.slope - 20)
    assert abs(np.mean(db)) < 0.15 and abs(np.mean(ds)) < 0.15
    assert np.percentile(np.abs(db), 95) < 0.15 and np.percentile(np.abs(ds), 95) < 0.15


def test_fit_errors():
    with pytest.raises(cal.CalibrationError):
        cal.fit([(0.5, 30.0)])
    with pytest.raises(cal.CalibrationError):
        cal.fit([(0.5, 30.0), (0.5, 31.0)])
    with pytest.raises(cal.CalibrationError):
        cal.fit([(0.5, np.nan), (0.6, 31.0)])
    with pytest.raises(cal.CalibrationError):
        cal.AffineCalibration(1.0, 0.0, 2, 0.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), gamma=st.floats(0.01, 100).map(lambda g: g) | st.floats(-100, -0.01),
       n=st.integers(2, 20))
def test_fit_scale_equivariance_and_order_invariance(seed, gamma, n):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=n)
    p = rng.normal(40, 5, n)
    a = cal.fit(np.column_stack([y, p]))
    b = cal.fit(np.column_stack([gamma * y, p]))
    assert b.slope == pytest.approx(a.slope / gamma, rel=1e-9)
    np.testing.assert_allclose(b.predict(gamma * y), a.predict(y), rtol=0, atol=1e-9 * max(1, np.abs(p).max()))
    perm = rng.permutation(n)
    c = cal.fit(np.column_stack([y[perm], p[perm]]))
    np.testing.assert_allclose(c.predict(y), a.predict(y), atol=1e-9)


def test_semitone_conversions():
    assert cal.semitones_to_hz(0) == pytest.approx(32.70, abs=0.005)
    assert cal.semitones_to_hz(12) == pytest.approx(65.41, abs=0.005)
    assert cal.hz_to_semitones(440.0) == pytest.approx(45.0, abs=1e-12)
    with pytest.raises(cal.CalibrationError):
        cal.hz_to_semitones(0.0)


@given(st.floats(-60, 120))
def test_semitone_round_trip(p):
    assert cal.hz_to_semitones(cal.semitones_to_hz(p)) == pytest.approx(p, abs=1e-9)


def test_json_round_trip(tmp_path):
    c = cal.AffineCalibration(10.0, -30.0, 5, 0.2, k_star=4, checkpoint_hash="abc")
    c.save(tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    assert {"intercept", "slope", "f_base", "k_star", "m", "residual_rms", "checkpoint_hash"} <= set(doc)
    assert cal.AffineCalibration.load(tmp_path / "c.json") == c
    (tmp_path / "bad.json").write_text('{"intercept": 1}')
    with pytest.raises(cal.CalibrationError):
        cal.AffineCalibration.load(tmp_path / "bad.json")


class IdealEncoder:
    """Stand-in model whose code is exactly the CQT argmax bin scaled by sigma."""

    def __init__(self):
        self.cfg = SpiceConfig()

    def encode(self, slices):
        class Out:
            pass
        out = Out()
        out.y = np.argmax(slices, axis=1) * self.cfg.sigma
        return out


def test_calibrate_model_recovers_the_bin_mapping():
    c = cal.calibrate_model(IdealEncoder(), m=10, seed=1)
    # one bin is half a semitone; the slice starts at bin k* = 4
    assert c.slope == pytest.approx(0.5 / SpiceConfig().sigma, rel=1e-6)
    assert c.intercept == pytest.approx(4 * 0.5, abs=1e-6)
    assert c.residual_rms < 1e-6
    assert c.k_star == 4 and c.m == 10


def test_calibrate_model_deterministic_and_short_sets():
    model = SpiceModel(SpiceConfig(d_enc=2, d_dec=2))
    a = cal.calibrate_model(model, m=5, seed=3)
    b = cal.calibrate_model(model, m=5, seed=3)
    assert (a.intercept, a.slope) == (b.intercept, b.slope)
    # M=2 gives fewer samples than the longest CQT atom; the waveform is padded
    assert cal.calibration_points(IdealEncoder(), m=2, seed=0).shape == (2, 2)
    assert CqtParams().longest_window > 2 * 11 * 512
