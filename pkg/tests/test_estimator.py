import numpy as np
import pytest
from sklearn.base import clone

from stackmi import StackedImputationRegressor
from stackmi.imputation import ChainConfig, chained_impute, default_specs
from stackmi.simulate import apply_missingness, generate_scenario, scenario_mechanisms
from stackmi.stacking import complete_case_fit, compute_weights, fit_stacked, stack
from stackmi.study import scenario_outcome
from stackmi.variance import louis_variance
from stackmi._rng import child


@pytest.fixture(scope="module")
def masked():
    return apply_missingness(generate_scenario(1, 600, 1), scenario_mechanisms(1, (0, 0, 1)), 2)


def test_matches_functional_pipeline(masked):
    spec = scenario_outcome(1)
    est = StackedImputationRegressor(spec, n_imputations=8, random_state=4).fit(masked)
    imps = chained_impute(masked, default_specs(masked, ("y",)), ChainConfig(8, 10, seed=child(4, 0)), outcome=("y",))
    s = compute_weights(stack(imps, "short"), complete_case_fit(masked, spec), spec)
    rep = louis_variance(s, fit_stacked(s, spec))
    np.testing.assert_array_equal(est.params_, rep.params)
    np.testing.assert_allclose(est.covariance_, rep.cov)
    np.testing.assert_array_equal(est.coef_, rep.params[1:])
    assert est.intercept_ == rep.params[0]


def test_params_and_clone(masked):
    est = StackedImputationRegressor(scenario_outcome(1), n_imputations=5, weights="draw", random_state=1)
    params = est.get_params()
    assert params["weights"] == "draw" and params["n_imputations"] == 5
    c = clone(est).set_params(weights="unit")
    assert c.weights == "unit" and est.weights == "draw"
    c.fit(masked)
    np.testing.assert_allclose(c.stack_.subject_weight_sums(), 1.0)


def test_alternative_variances(masked):
    est = StackedImputationRegressor(scenario_outcome(1), n_imputations=5, random_state=2).fit(masked)
    assert est.variance_report("rubin").method == "rubin"
    assert est.variance_report("sandwich").se.shape == (3,)


def test_bad_parameters(masked):
    with pytest.raises(ValueError):
        StackedImputationRegressor(None).fit(masked)
    with pytest.raises(ValueError):
        StackedImputationRegressor(scenario_outcome(1), weights="magic").fit(masked)
    with pytest.raises(ValueError):
        StackedImputationRegressor(scenario_outcome(1), random_state=None).fit(masked)


def test_decision_function_and_score_samples(masked):
    est = StackedImputationRegressor(scenario_outcome(1), n_imputations=5, random_state=2).fit(masked)
    full = generate_scenario(1, 20, 9)
    eta = est.decision_function(full)
    np.testing.assert_allclose(eta, est.intercept_ + full.values[:, :2] @ est.coef_)
    assert est.score_samples(full).shape == (20,)
