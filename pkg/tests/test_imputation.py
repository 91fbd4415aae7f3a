import numpy as np
import pytest
import statsmodels.api as sm

from stackmi.imputation import (ChainConfig, ChainedImputer, ImputationError, ImputerSpec, chained_impute,
                                default_specs, draw_imputer, impute_outcome, multinomial_select)
from stackmi.models import OutcomeSpec
from stackmi.simulate import apply_missingness, generate_scenario, scenario_mechanisms
from stackmi.table import Column, Table, TableError


def _linear_table(n, seed, beta=(0.0, 1.0, -1.0), sd=1.0):
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, 2))
    y = beta[0] + x @ np.array(beta[1:]) + sd * r.standard_normal(n)
    return Table([Column("y"), Column("a"), Column("b")], np.column_stack([y, x]))


def test_linear_draw_large_n_near_truth_and_ols():
    t = _linear_table(50_000, 1)
    d = draw_imputer(t, ImputerSpec("y", ("a", "b")), seed=2)
    Z = np.column_stack([np.ones(t.n), t.col("a"), t.col("b")])
    ols = np.linalg.lstsq(Z, t.col("y"), rcond=None)[0]
    np.testing.assert_allclose(d.coef, [0, 1, -1], atol=0.05)
    np.testing.assert_allclose(d.coef, ols, atol=0.05)


def test_linear_draw_moments_match_normal_inverse_chi2_posterior():
    t = _linear_table(30, 3)
    Z = np.column_stack([np.ones(t.n), t.col("a"), t.col("b")])
    y = t.col("y")
    beta = np.linalg.solve(Z.T @ Z, Z.T @ y)
    rss = np.sum((y - Z @ beta) ** 2)
    df = t.n - 3
    draws = [draw_imputer(t, ImputerSpec("y", ("a", "b")), seed=s) for s in range(4000)]
    coefs = np.array([d.coef for d in draws])
    s2 = np.array([d.dispersion for d in draws])
    # E[sigma2] = RSS / (df - 2); Cov[beta] = E[sigma2] (Z'Z)^-1
    assert s2.mean() == pytest.approx(rss / (df - 2), rel=0.05)
    np.testing.assert_allclose(coefs.mean(axis=0), beta, atol=0.03)
    np.testing.assert_allclose(np.cov(coefs.T), rss / (df - 2) * np.linalg.inv(Z.T @ Z), rtol=0.15, atol=3e-3)  # ~3.5 Monte Carlo SEs


def test_logistic_draw_centred_on_mle():
    r = np.random.default_rng(5)
    x = r.standard_normal(400)
    b = (r.random(400) < 1 / (1 + np.exp(-(0.3 + x)))).astype(float)
    t = Table([Column("b", "binary"), Column("x")], np.column_stack([b, x]))
    ref = sm.Logit(b, sm.add_constant(x)).fit(disp=0)
    draws = np.array([draw_imputer(t, ImputerSpec("b", ("x",)), seed=s).coef for s in range(2000)])
    np.testing.assert_allclose(draws.mean(axis=0), ref.params, atol=0.02)
    np.testing.assert_allclose(np.cov(draws.T), ref.cov_params(), rtol=0.15)


def test_multinomial_draw_centred_on_mle():
    r = np.random.default_rng(6)
    x = r.standard_normal(600)
    eta = np.column_stack([np.zeros(600), 0.5 + x, -0.3 - x])
    p = np.exp(eta) / np.exp(eta).sum(axis=1, keepdims=True)
    g = (r.random(600)[:, None] > np.cumsum(p, axis=1)).sum(axis=1).astype(float)
    t = Table([Column("g", "categorical", 3), Column("x")], np.column_stack([g, x]))
    ref = sm.MNLogit(g, sm.add_constant(x)).fit(disp=0)
    draws = np.array([draw_imputer(t, ImputerSpec("g", ("x",)), seed=s).coef for s in range(1000)])
    np.testing.assert_allclose(draws.mean(axis=0), np.asarray(ref.params), atol=0.03)


def test_insufficient_rows():
    t = Table([Column("y"), Column("a"), Column("b")], [[1, 2, 3], [2, 1, 0], [np.nan, 1, 1]])
    with pytest.raises(ImputationError, match="insufficient"):
        draw_imputer(t, ImputerSpec("y", ("a", "b")), seed=0)


def test_singular_design():
    x = np.arange(10.0)
    t = Table([Column("y"), Column("a"), Column("b")], np.column_stack([x ** 2, x, 2 * x]))
    with pytest.raises(ImputationError, match="singular"):
        draw_imputer(t, ImputerSpec("y", ("a", "b")), seed=0)


def _scenario1_masked(n=2000, seed=1):
    full = generate_scenario(1, n, seed)
    return apply_missingness(full, scenario_mechanisms(1, (0, 0, 0)), seed + 1)


def test_mcar_imputed_mean_matches_observed_mean():
    t = _scenario1_masked()
    imps = chained_impute(t, default_specs(t, ("y",)), ChainConfig(M=50, seed=3), outcome=("y",))
    j = t.index("x2")
    miss = ~t.mask[:, j]
    pooled = np.mean([m.values[miss, j].mean() for m in imps])
    assert pooled == pytest.approx(t.values[~miss, j].mean(), abs=0.03)


def test_imputations_keep_observed_cells_and_flag_imputed_ones():
    t = _scenario1_masked(300)
    imps = chained_impute(t, default_specs(t, ("y",)), ChainConfig(M=5, seed=4), outcome=("y",))
    for m in imps:
        assert m.mask.all()
        np.testing.assert_array_equal(m.imputed, ~t.mask)
        np.testing.assert_array_equal(m.values[t.mask], t.values[t.mask])
    assert not np.array_equal(imps[0].values, imps[1].values)


def test_determinism():
    t = _scenario1_masked(300)
    a = chained_impute(t, default_specs(t, ("y",)), ChainConfig(M=3, seed=9), outcome=("y",))
    b = chained_impute(t, default_specs(t, ("y",)), ChainConfig(M=3, seed=9), outcome=("y",))
    assert all(x.equals(y) for x, y in zip(a, b))


def test_complete_table_gives_identical_copies():
    t = generate_scenario(1, 50, 1)
    imps = chained_impute(t, [], ChainConfig(M=4, seed=0), outcome=("y",))
    assert len(imps) == 4 and all(m.equals(t) for m in imps)


def test_binary_and_categorical_imputations_in_range():
    r = np.random.default_rng(8)
    n = 400
    x = r.standard_normal(n)
    b = (r.random(n) < 0.4 + 0.2 * (x > 0)).astype(float)
    g = r.integers(0, 3, n).astype(float)
    b[r.random(n) < 0.3] = np.nan
    g[r.random(n) < 0.3] = np.nan
    x[r.random(n) < 0.2] = np.nan
    t = Table([Column("x"), Column("b", "binary"), Column("g", "categorical", 3)], np.column_stack([x, b, g]))
    imps = chained_impute(t, default_specs(t), ChainConfig(M=3, cycles=5, seed=1))
    for m in imps:
        assert set(np.unique(m.col("b"))) <= {0.0, 1.0}
        assert set(np.unique(m.col("g"))) <= {0.0, 1.0, 2.0}


def test_outcome_rules():
    t = _scenario1_masked(200)
    with pytest.raises(TableError, match="uses outcome"):
        chained_impute(t, [ImputerSpec("x2", ("x1", "y"))], ChainConfig(M=2), outcome=("y",))
    imps = chained_impute(t, [ImputerSpec("x2", ("x1", "y"))], ChainConfig(M=2), outcome=("y",),
                          allow_outcome_predictors=True)
    assert len(imps) == 2
    with pytest.raises(TableError, match="has no imputer"):
        chained_impute(t, [], ChainConfig(M=2), outcome=("y",))


def test_family_role_mismatch():
    t = _scenario1_masked(100)
    with pytest.raises(TableError, match="incompatible"):
        chained_impute(t, [ImputerSpec("x2", ("x1",), "bayes-logistic")], ChainConfig(M=2), outcome=("y",))


def test_chain_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(M=1)
    with pytest.raises(ValueError):
        ChainConfig(cycles=0)


def test_impute_outcome_standard_normal():
    r = np.random.default_rng(0)
    n = 10_000
    x = r.standard_normal(n)
    t = Table([Column("x"), Column("y")], np.column_stack([x, np.full(n, np.nan)]))
    spec = OutcomeSpec("gaussian-identity", ("y",), ("x",))
    out = impute_outcome(t, spec, [0.0, 0.0], seed=1, dispersion=1.0)
    assert out.col("y").mean() == pytest.approx(0.0, abs=0.05)
    assert out.col("y").std() == pytest.approx(1.0, abs=0.03)
    assert out.imputed[:, 1].all()


def test_impute_outcome_rejects_cox():
    t = Table([Column("x"), Column("time", "event-time"), Column("event", "event-indicator")], [[1, 1, 1]])
    with pytest.raises(ValueError, match="cox"):
        impute_outcome(t, OutcomeSpec("cox-ph", ("time", "event"), ("x",)), [0.0], seed=0)


def test_multinomial_select_frequencies():
    idx = multinomial_select(np.tile([0.2, 0.6], (10_000, 1)), seed=3)
    assert idx.mean() == pytest.approx(0.75, abs=0.02)
    logidx = multinomial_select(np.log(np.tile([0.2, 0.6], (10_000, 1))), seed=3, log=True)
    np.testing.assert_array_equal(idx, logidx)
    with pytest.raises(ValueError):
        multinomial_select([[0.0, 0.0]], seed=0)


def test_chained_imputer_estimator():
    t = _scenario1_masked(200)
    imp = ChainedImputer(n_imputations=3, outcome=("y",), random_state=5)
    assert imp.get_params()["n_imputations"] == 3
    out = imp.fit(t).transform(t)
    ref = chained_impute(t, imp.specs_, ChainConfig(3, 10, None, 5), outcome=("y",))
    assert all(a.equals(b) for a, b in zip(out, ref))
