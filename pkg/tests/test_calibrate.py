import numpy as np
import pytest

from genpolicy.calibrate import CalibrationError, calibrate
from genpolicy.dataset import SimulationConfig, simulate
from genpolicy.worstcase import bounds


def _odds(p):
    return p / (1 - p)


def test_same_distribution_gives_gamma_near_one():
    rng = np.random.default_rng(0)
    res = calibrate(rng.normal(size=20_000), rng.normal(size=20_000))
    assert res.gamma < 1.1
    assert res.p_sel == pytest.approx(0.5, abs=0.01)
    np.testing.assert_allclose(res.per_sample_sel_probs, res.p_sel, atol=0.03)


def test_prior_correction_removes_sample_ratio():
    rng = np.random.default_rng(1)
    a = rng.normal(size=2000)
    small = calibrate(a, rng.normal(size=2000))
    big = calibrate(a, rng.normal(size=40_000))
    assert small.p_sel == pytest.approx(0.5, abs=0.02) and big.p_sel == pytest.approx(0.5, abs=0.02)


def test_gamma_is_max_two_sided_odds_ratio():
    rng = np.random.default_rng(2)
    res = calibrate(rng.normal(0.5, 1, 500), rng.normal(0, 1.0, 800))
    p = res.per_sample_sel_probs
    ratio = _odds(res.p_sel) / _odds(p)
    assert res.gamma == pytest.approx(np.max(np.maximum(ratio, 1 / ratio)), rel=1e-12)
    assert res.gamma >= 1.0
    s = bounds(res.gamma, res.p_sel)
    assert s.l <= 1.0 <= s.u


def test_affine_invariance():
    rng = np.random.default_rng(3)
    a, b = rng.normal(0.4, 1, 700), rng.normal(0, 1.3, 900)
    r1 = calibrate(a, b)
    r2 = calibrate(3.0 * a - 7.0, 3.0 * b - 7.0)
    assert r2.gamma == pytest.approx(r1.gamma, rel=1e-8)
    assert r2.p_sel == pytest.approx(r1.p_sel, rel=1e-8)


def test_separable_columns_hit_clip_cap():
    eta = 0.01
    a = np.linspace(10, 11, 200)
    b = np.linspace(-11, -10, 200)
    res = calibrate(a, b, clip_eta=eta, penalty=1e-6)
    cap = max(_odds(1 - eta) / _odds(res.p_sel), _odds(res.p_sel) / _odds(eta))
    assert 1.0 <= res.gamma <= cap * (1 + 1e-12)
    np.testing.assert_allclose(res.per_sample_sel_probs, 1 - eta)


def test_simulation_fixture():
    sim = simulate(SimulationConfig(n_train=5000, n_target=5000, seed=0))
    res = calibrate(sim.train.column("x2"), sim.target.x[:, 1])
    assert res.gamma >= 2.0
    assert 0.2 <= res.p_sel <= 0.6
    # regression fixture for the pinned seed
    assert res.p_sel == pytest.approx(0.5222, abs=1e-3)
    assert res.gamma == pytest.approx(5.78, abs=0.02)


@pytest.mark.parametrize(
    "a,b",
    [
        (np.ones(100), np.ones(100)),
        (np.arange(10.0), np.arange(100.0)),
        (np.r_[np.arange(99.0), np.nan], np.arange(100.0)),
    ],
)
def test_errors(a, b):
    with pytest.raises(CalibrationError):
        calibrate(a, b)
