import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st
from statsmodels.duration.hazard_regression import PHReg

from stackmi.models import (CoxPH, GaussianRegression, LogisticRegression, OutcomeSpec, breslow_baseline,
                            design_matrix, finite_diff_check, fit_table, fit_weighted, log_density,
                            newton_raphson)
from stackmi.table import Column, Table

from conftest import FAMILY_SPECS, random_instance


def test_gaussian_unit_weights_match_normal_equations(rng):
    t = random_instance("gaussian-identity", 300, rng)
    spec = FAMILY_SPECS["gaussian-identity"]
    fit = fit_table(t, spec)
    X, _ = spec.design(t.values, t.columns)
    Z = np.column_stack([np.ones(len(X)), X])
    y = t.col("y")
    ols = np.linalg.solve(Z.T @ Z, Z.T @ y)
    np.testing.assert_allclose(fit.params, ols, rtol=0, atol=1e-10)
    assert fit.dispersion == pytest.approx(np.mean((y - Z @ ols) ** 2), rel=1e-12)


def test_gaussian_weights_match_statsmodels_wls(rng):
    t = random_instance("gaussian-identity", 200, rng)
    w = rng.uniform(0.1, 2, t.n)
    spec = FAMILY_SPECS["gaussian-identity"]
    fit = fit_table(t, spec, w)
    X, _ = spec.design(t.values, t.columns)
    ref = sm.WLS(t.col("y"), sm.add_constant(X), weights=w).fit()
    np.testing.assert_allclose(fit.params, ref.params, atol=1e-10)


def test_logistic_matches_statsmodels(rng):
    t = random_instance("bernoulli-logit", 400, rng)
    spec = FAMILY_SPECS["bernoulli-logit"]
    fit = fit_table(t, spec)
    X, _ = spec.design(t.values, t.columns)
    ref = sm.Logit(t.col("y"), sm.add_constant(X)).fit(disp=0, tol=1e-12)
    np.testing.assert_allclose(fit.params, ref.params, atol=1e-7)
    np.testing.assert_allclose(fit.model_covariance(), ref.cov_params(), rtol=1e-6)


@pytest.mark.parametrize("ties", [False, True])
def test_cox_matches_statsmodels_breslow(rng, ties):
    t = random_instance("cox-ph", 300, rng, ties=ties)
    spec = FAMILY_SPECS["cox-ph"]
    fit = fit_table(t, spec)
    X, _ = spec.design(t.values, t.columns)
    ref = PHReg(t.col("time"), X, status=t.col("event"), ties="breslow").fit()
    np.testing.assert_allclose(fit.params, ref.params, atol=1e-7)
    np.testing.assert_allclose(fit.model_covariance(), ref.cov_params(), rtol=1e-6)


def test_cox_has_no_intercept():
    spec = OutcomeSpec("cox-ph", ("time", "event"), ("x1",))
    assert spec.intercept is False


def test_breslow_recovers_unit_exponential():
    # no covariates effect: beta = 0, cumulative hazard of Exp(1) is t
    r = np.random.default_rng(4)
    n = 100_000
    x = r.normal(size=(n, 1))
    time = r.exponential(1.0, n)
    bh = breslow_baseline([0.0], x, np.column_stack([time, np.ones(n)]))
    grid = np.linspace(0.1, 2, 20)
    np.testing.assert_allclose(bh.cumulative(grid), grid, atol=0.02)


def test_baseline_step_and_rate(rng):
    t = random_instance("cox-ph", 200, rng)
    fit = fit_table(t, FAMILY_SPECS["cox-ph"])
    bh = fit.baseline
    np.testing.assert_allclose(bh.integrated(bh.times), bh.cumhaz, rtol=1e-12)
    assert bh.cumulative(bh.times[0] / 2) == 0.0
    assert bh.cumulative(bh.times[-1] * 10) == bh.cumhaz[-1]
    assert bh.hazard(bh.times[-1] * 10) == bh.rates[-1]
    with pytest.raises(ValueError):
        bh.hazard(0.0)


@pytest.mark.parametrize("family,tol", [("gaussian-identity", 1e-6), ("bernoulli-logit", 1e-5), ("cox-ph", 1e-5)])
def test_finite_difference_small(rng, family, tol):
    t = random_instance(family, 50, rng)
    spec = FAMILY_SPECS[family]
    fit = fit_table(t, spec)
    theta = fit.params + rng.normal(0, 0.1, len(fit.params))
    assert finite_diff_check(spec, theta, t.values, t.columns, rng.uniform(0.2, 1.5, t.n),
                             dispersion=fit.dispersion or 1.0) < tol


def test_score_vanishes_at_mle(rng):
    for family, spec in FAMILY_SPECS.items():
        t = random_instance(family, 300, rng)
        w = rng.uniform(0.1, 1, t.n)
        fit = fit_table(t, spec, w)
        assert np.abs(fit.total_score).max() < 1e-6 * w.sum(), family


def test_log_density_gaussian_matches_scipy(rng):
    from scipy.stats import norm
    t = random_instance("gaussian-identity", 50, rng)
    spec = FAMILY_SPECS["gaussian-identity"]
    fit = fit_table(t, spec)
    X, _ = spec.design(t.values, t.columns)
    mu = np.column_stack([np.ones(t.n), X]) @ fit.params
    ref = norm.logpdf(t.col("y"), mu, np.sqrt(fit.dispersion))
    np.testing.assert_allclose(log_density(spec, fit.params, t.values, t.columns, fit.dispersion), ref, rtol=1e-12)


def test_cox_density_uses_step_cumulative_hazard(rng):
    t = random_instance("cox-ph", 100, rng)
    spec = FAMILY_SPECS["cox-ph"]
    fit = fit_table(t, spec)
    X, _ = spec.design(t.values, t.columns)
    eta = X @ fit.params
    time, ev = t.col("time"), t.col("event")
    ref = ev * (np.log(fit.baseline.hazard(time)) + eta) - fit.baseline.cumulative(time) * np.exp(eta)
    np.testing.assert_allclose(log_density(spec, fit.params, t.values, t.columns, baseline=fit.baseline), ref,
                               rtol=1e-12)


def test_design_matrix_dummies_and_interaction():
    cols = [Column("a"), Column("g", "categorical", 3)]
    vals = np.array([[1.0, 0], [2.0, 1], [3.0, 2]])
    X, names = design_matrix(vals, cols, ("a", "g", "a:g"))
    assert names == ["a", "g[1]", "g[2]", "a:g[1]", "a:g[2]"]
    np.testing.assert_array_equal(X[:, 3], [0, 2, 0])
    np.testing.assert_array_equal(X[:, 4], [0, 0, 3])
    X0, names0 = design_matrix(np.zeros((0, 2)), cols, ("a:g",))
    assert X0.shape == (0, 2) and names0 == ["a:g[1]", "a:g[2]"]


def test_rank_deficient_design_raises():
    x = np.arange(10.0)
    with pytest.raises(np.linalg.LinAlgError):
        GaussianRegression().fit(np.column_stack([x, 2 * x]), x + 1)


def test_separation_hits_coefficient_bound():
    x = np.linspace(-1, 1, 40)[:, None]
    y = (x[:, 0] > 0).astype(float)
    from stackmi.models import ConvergenceError
    with pytest.raises(ConvergenceError):
        LogisticRegression().fit(x, y)


def test_newton_raphson_quadratic():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])

    def f(x):
        return -0.5 * x @ A @ x + b @ x, b - A @ x, -A

    x, *_ = newton_raphson(f, np.zeros(2))
    np.testing.assert_allclose(x, np.linalg.solve(A, b), atol=1e-12)


def test_estimators_expose_sklearn_params():
    assert GaussianRegression(fit_intercept=False).get_params() == {"fit_intercept": False}
    assert set(CoxPH().get_params()) == {"max_iter", "bound"}


def test_nonpositive_time_rejected():
    with pytest.raises(ValueError, match="nonpositive"):
        CoxPH().fit(np.ones((3, 1)), np.array([[1.0, 1], [0.0, 1], [2.0, 0]]))


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(0.1, 10), seed=st.integers(0, 10_000))
def test_weight_scale_invariance(scale, seed):
    r = np.random.default_rng(seed)
    for family in ("gaussian-identity", "bernoulli-logit", "cox-ph"):
        t = random_instance(family, 120, r)
        spec = FAMILY_SPECS[family]
        w = r.uniform(0.2, 1, t.n)
        a = fit_weighted(t.values, t.columns, spec, w).params
        b = fit_weighted(t.values, t.columns, spec, scale * w).params
        np.testing.assert_allclose(a, b, atol=1e-7)
