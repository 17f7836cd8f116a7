import numpy as np
import pytest

from genpolicy.dataset import SimulationConfig, TrialDataset, simulate
from genpolicy.nuisance import (
    FitError,
    LogisticRegression,
    NuisanceModels,
    RidgeRegression,
    build_scores,
    fit_nuisance,
    ipw_weights,
)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _rct(n=400, seed=0, pb=0.5):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    t = (rng.random(n) < 0.5).astype(int)
    y = x @ [1.0, -2.0, 0.5] + t * (1.0 + x[:, 0]) + rng.normal(size=n)
    return TrialDataset(x, t, y, None if pb is None else np.full(n, pb))


def test_ipw_constant_half():
    m = fit_nuisance(_rct())
    np.testing.assert_array_equal(m.ipw, 2.0)


def test_ridge_recovers_noiseless_coefficients():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1000, 4))
    coef = np.array([0.5, -1.0, 2.0, 0.0])
    r = RidgeRegression.fit(x, 3.0 + x @ coef, alpha=1e-3)
    np.testing.assert_allclose(r.coef, coef, atol=1e-2)
    assert r.intercept == pytest.approx(3.0, abs=1e-2)


def test_logistic_newton_recovers_coefficients():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(20_000, 2))
    t = (rng.random(20_000) < _sigmoid(0.3 + x @ [1.0, -0.5])).astype(int)
    m = LogisticRegression.fit(x, t, alpha=1e-3)
    np.testing.assert_allclose(m.coef, [1.0, -0.5], atol=0.06)
    assert m.intercept == pytest.approx(0.3, abs=0.06)


def test_logistic_separable_data_raises_or_converges():
    x = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    t = np.array([0, 0, 1, 1])
    with pytest.raises(FitError):
        LogisticRegression.fit(x, t, alpha=0.0, max_iter=5)


def test_behavior_clipping():
    rng = np.random.default_rng(3)
    n = 500
    x = rng.normal(size=(n, 1))
    t = (x[:, 0] > 0).astype(int)
    t[:5] = 1 - t[:5]
    d = TrialDataset(x * 20, t, rng.normal(size=n))
    m = fit_nuisance(d, behavior="fit", clip_eta=0.01)
    assert m.behavior_probs.min() >= 0.01 and m.behavior_probs.max() <= 0.99
    assert np.all(np.isfinite(m.ipw)) and np.all(m.ipw > 0)
    assert m.behavior_probs.min() == 0.01


def test_known_mode_requires_probabilities():
    with pytest.raises(FitError):
        fit_nuisance(_rct(pb=None), behavior="known")


def test_single_arm_is_fit_error():
    d = TrialDataset(np.ones((4, 1)), [1, 1, 1, 1], [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(FitError):
        fit_nuisance(d)


def test_unknown_method():
    d = _rct()
    with pytest.raises(ValueError):
        build_scores("IPW", d, fit_nuisance(d))


def _direct_scores(method, d, m, probs):
    """Independent transcription of the three estimators, sample by sample."""
    out = np.empty(d.n)
    w = m.ipw
    wbar = w.mean()
    for i in range(d.n):
        x = d.covariates[i:i + 1]
        mu0, mu1 = m.mu0(x)[0], m.mu1(x)[0]
        p, t, y = probs[i], d.treatments[i], d.outcomes[i]
        dm = p * mu1 + (1 - p) * mu0
        if method == "DM":
            out[i] = dm
        elif method == "NIPW":
            match = p if t == 1 else 1 - p
            out[i] = 2 * w[i] / wbar * match * y
        else:
            match = p if t == 1 else 1 - p
            mu_t = mu1 if t == 1 else mu0
            out[i] = dm + w[i] * match * (y - mu_t)
    return out


@pytest.mark.parametrize("method", ["DM", "NIPW", "DR"])
def test_affine_scores_match_direct_formulas(method):
    d = _rct(n=120, seed=4, pb=None)
    m = fit_nuisance(d, behavior="fit")
    s = build_scores(method, d, m)
    rng = np.random.default_rng(5)
    for _ in range(5):
        probs = rng.uniform(0, 1, d.n)
        np.testing.assert_allclose(s(probs), _direct_scores(method, d, m, probs), rtol=0, atol=1e-12)


def test_score_examples():
    d = TrialDataset(np.array([[0.0], [1.0]]), [1, 0], [3.0, 1.0], np.full(2, 0.5))
    zero = NuisanceModels(lambda x: np.zeros(len(x)), lambda x: np.zeros(len(x)), np.full(2, 0.5), np.full(2, 2.0))
    s = build_scores("DM", d, zero)
    np.testing.assert_array_equal(s.alpha, 0.0)
    s = build_scores("NIPW", d, zero)
    assert s.alpha[0] == 6.0 and s.beta[0] == 0.0
    # exact outcome models: DR reduces to DM
    exact = NuisanceModels(lambda x: np.ones(len(x)), lambda x: np.full(len(x), 3.0), np.full(2, 0.5), np.full(2, 2.0))
    dm, dr = build_scores("DM", d, exact), build_scores("DR", d, exact)
    np.testing.assert_array_equal(dm.alpha, dr.alpha)
    np.testing.assert_array_equal(dm.beta, dr.beta)


def test_double_robustness_smoke():
    sim = simulate(SimulationConfig(n_train=10_000, n_target=10, seed=8))
    d = sim.train
    good = fit_nuisance(d)
    bad = NuisanceModels(lambda x: good.mu0(x) + 5.0, lambda x: good.mu1(x) + 5.0, good.behavior_probs, good.ipw)
    probs = np.full(d.n, 0.3)
    a, b = build_scores("DR", d, good)(probs), build_scores("DR", d, bad)(probs)
    se = np.sqrt(a.var() / d.n + b.var() / d.n)
    assert abs(a.mean() - b.mean()) <= 3 * se


def test_nipw_at_behavior_policy_recovers_value():
    sim = simulate(SimulationConfig(n_train=20_000, n_target=10, seed=9))
    d = sim.train
    s = build_scores("NIPW", d, fit_nuisance(d))
    # with pi = behavior policy = 1/2 the normalised score mean is the sample outcome mean
    assert s(np.full(d.n, 0.5)).mean() == pytest.approx(d.outcomes.mean(), abs=4 * d.outcomes.std() / np.sqrt(d.n))


def test_ipw_weights_formula():
    w = ipw_weights(np.array([1, 0]), np.array([0.25, 0.25]))
    np.testing.assert_allclose(w, [4.0, 4.0 / 3.0])
