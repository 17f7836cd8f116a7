import numpy as np
import pytest

from genpolicy.dataset import (
    CsvSchema,
    GenerationError,
    SchemaError,
    SimulationConfig,
    TrialDataset,
    ValidationError,
    baseline_outcome,
    load_csv,
    optimal_value,
    oracle_policy,
    policy_regret,
    selection_probability,
    simulate,
    target_policy_value,
    treatment_effect,
    write_csv,
)

MU = np.array([-1.0, 0.5, -1.0, 0.0, -1.0])
BETA0 = (0.0, 0.75, -0.5, 0.0, -1.0)
BETA1 = (-1.5, 1.0, -1.5, 1.0, 0.5)


def _write(path, text):
    path.write_text(text)
    return path


def test_load_small_csv(tmp_path):
    p = _write(tmp_path / "a.csv", "x1,x2,t,y\n1,2,0,3.5\n0,1,1,-1\n2,2,1,0\n")
    d = load_csv(p)
    assert (d.n, d.d) == (3, 2)
    assert d.covariate_names == ("x1", "x2")
    np.testing.assert_array_equal(d.treatments, [0, 1, 1])
    assert d.behavior_probs is None


def test_load_csv_behavior_column(tmp_path):
    p = _write(tmp_path / "a.csv", "x1,t,y,pb\n1,0,3,0.5\n0,1,1,0.5\n")
    np.testing.assert_array_equal(load_csv(p).behavior_probs, [0.5, 0.5])


def test_load_csv_bad_treatment_names_row(tmp_path):
    rows = "".join(f"{i},{i % 2},1\n" for i in range(4)) + "9,2,1\n"
    p = _write(tmp_path / "a.csv", "x1,t,y\n" + rows)
    with pytest.raises(ValidationError, match="row 5.*'t'"):
        load_csv(p)


@pytest.mark.parametrize(
    "body,err,pattern",
    [
        ("x1,y\n1,2\n", SchemaError, "missing column 't'"),
        ("x1,t,y\n1,0,nan\n", ValidationError, "row 1, column 'y'"),
        ("x1,t,y,pb\n1,0,2,1.0\n", ValidationError, "row 1, column 'pb'"),
        ("x1,t,y\n1,0,abc\n", ValidationError, "row 1, column 'y'"),
        ("t,y\n1,0\n", SchemaError, "no covariate"),
        ("x1,t,y\n", ValidationError, "no data rows"),
    ],
)
def test_load_csv_errors(tmp_path, body, err, pattern):
    p = _write(tmp_path / "a.csv", body)
    with pytest.raises(err, match=pattern):
        load_csv(p)


def test_load_csv_custom_schema(tmp_path):
    p = _write(tmp_path / "a.csv", "age,arm,out,other\n30,1,2.5,9\n40,0,1.5,9\n")
    d = load_csv(p, CsvSchema(treatment="arm", outcome="out", behavior_prob=None, covariates=["age"]))
    assert d.d == 1 and d.covariate_names == ("age",)


def test_csv_roundtrip(tmp_path, small_sim):
    p = tmp_path / "train.csv"
    write_csv(p, small_sim.train, small_sim.train_oracle.oracle_columns())
    d = load_csv(p)
    np.testing.assert_array_equal(d.covariates, small_sim.train.covariates)
    np.testing.assert_array_equal(d.outcomes, small_sim.train.outcomes)
    np.testing.assert_array_equal(d.behavior_probs, small_sim.train.behavior_probs)


def test_dataset_validation():
    with pytest.raises(ValidationError):
        TrialDataset(np.ones((2, 1)), [0, 1], [1.0, np.inf])
    with pytest.raises(ValidationError):
        TrialDataset(np.ones((2, 1)), [0, 1], [1.0, 2.0], behavior_probs=[0.0, 0.5])
    with pytest.raises(ValidationError):
        TrialDataset(np.ones((0, 1)), [], [])
    d = TrialDataset(np.ones((2, 1)), [0, 1], [1.0, 2.0])
    with pytest.raises(ValueError):
        d.covariates[0, 0] = 3.0


def test_dgp_formula_examples():
    xi0 = np.array([0])
    c = treatment_effect(MU[None, :], xi0, BETA1)
    assert c[0] == pytest.approx(5.5)
    assert selection_probability(c)[0] == pytest.approx(0.5 + 0.475 * np.tanh(-55.0))
    assert selection_probability(c)[0] == pytest.approx(0.025, abs=1e-12)
    # xi = 1 with beta1'x = 3/2 gives a zero effect
    x = np.array([[-1.0, 0.0, 0.0, 0.0, 0.0]])
    assert treatment_effect(x, np.array([1]), BETA1)[0] == pytest.approx(0.0)
    assert selection_probability(np.array([0.0]))[0] == 0.5
    assert baseline_outcome(np.zeros((1, 5)), np.array([1]), BETA0)[0] == 3.0


def test_simulate_defaults_and_determinism():
    cfg = SimulationConfig(n_train=200, n_target=1000, seed=5)
    a, b = simulate(cfg), simulate(cfg)
    np.testing.assert_array_equal(a.train.covariates, b.train.covariates)
    np.testing.assert_array_equal(a.target.y, b.target.y)
    assert a.acceptance_rate == b.acceptance_rate
    c = simulate(SimulationConfig(n_train=200, n_target=1000, seed=6))
    assert not np.array_equal(a.train.covariates, c.train.covariates)
    assert cfg.covariate_mean == tuple(MU) and cfg.beta0 == BETA0 and cfg.beta1 == BETA1


def test_simulate_invariants(small_sim):
    tr = small_sim.train_oracle
    assert small_sim.train.n == 300
    np.testing.assert_allclose(tr.c, treatment_effect(tr.x, tr.xi, BETA1))
    np.testing.assert_allclose(tr.m, baseline_outcome(tr.x, tr.xi, BETA0))
    assert np.all((tr.sel_prob >= 0.025) & (tr.sel_prob <= 0.975))
    np.testing.assert_allclose(tr.rn, small_sim.acceptance_rate / tr.sel_prob)
    s = tr[0]
    assert s.t in (0, 1) and s.true_rn == pytest.approx(tr.rn[0])
    assert len(list(iter(tr))) == 300
    # residual noise has unit scale
    eps = small_sim.target.y - small_sim.target.m - small_sim.target.t * small_sim.target.c
    assert abs(eps.std() - 1.0) < 0.05


def test_generation_budget():
    with pytest.raises(GenerationError):
        simulate(SimulationConfig(n_train=1000, n_target=10, max_draws=500))


def test_config_validation():
    with pytest.raises(ValueError):
        SimulationConfig(n_train=0)
    with pytest.raises(ValueError):
        SimulationConfig(noise_sd=0.0)


def test_acceptance_rate_matches_population_selection():
    sim = simulate(SimulationConfig(n_train=20_000, n_target=200_000, seed=2))
    sel = sim.target.sel_prob
    rate = sim.acceptance_rate
    drawn = 20_000 / rate
    se = np.sqrt(rate * (1 - rate) / drawn + sel.var() / sel.size)
    assert abs(sel.mean() - sim.acceptance_rate) <= 3 * se


def test_policy_value_and_regret(small_sim):
    t = small_sim.target
    assert target_policy_value(0.0, t) == pytest.approx(t.m.mean())
    assert target_policy_value(1.0, t) == pytest.approx((t.m + t.c).mean())
    assert policy_regret(oracle_policy(t), t) == 0.0
    assert policy_regret(1.0 - oracle_policy(t), t) == pytest.approx(np.abs(t.c).mean())
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = rng.uniform(0, 1, len(t))
        assert target_policy_value(p, t) >= optimal_value(t)
        assert policy_regret(p, t) >= 0.0


def test_regret_invariant_to_baseline_shift(small_sim):
    t = small_sim.target
    shifted = type(t)(t.x, t.t, t.y + 7.0, t.xi, t.c, t.m + 7.0, t.sel_prob, t.rn)
    policy = lambda x: 1.0 / (1.0 + np.exp(-x[:, 0]))
    assert policy_regret(policy, shifted) == pytest.approx(policy_regret(policy, t), abs=1e-12)
