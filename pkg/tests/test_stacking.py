import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stackmi.imputation import ChainConfig, chained_impute, default_specs
from stackmi.models import fit_table, log_density
from stackmi.simulate import apply_missingness, generate_scenario, scenario_mechanisms
from stackmi.stacking import (complete_case_fit, compute_weights, fit_stacked, normalize_log_weights, stack,
                              unit_mi_weights)
from stackmi.study import scenario_outcome
from stackmi.table import TableError


def _imputed(scenario=1, n=300, M=5, seed=1, phi=None):
    full = generate_scenario(scenario, n, seed)
    from stackmi.simulate import DEFAULT_PHI
    t = apply_missingness(full, scenario_mechanisms(scenario, phi or DEFAULT_PHI[scenario][0]), seed + 1)
    spec = scenario_outcome(scenario)
    imps = chained_impute(t, default_specs(t, spec.response), ChainConfig(M=M, seed=seed + 2), outcome=spec.response)
    return t, spec, imps


def test_stack_sizes():
    t, _, imps = _imputed(M=7)
    n1 = int(t.mask.all(axis=1).sum())
    assert stack(imps, "tall").n_rows == 7 * t.n
    assert stack(imps, "short").n_rows == n1 + (t.n - n1) * 7


@pytest.mark.parametrize("mode", ["tall", "short"])
def test_imputation_round_trip(mode):
    _, _, imps = _imputed(M=3)
    s = stack(imps, mode)
    for m in range(3):
        np.testing.assert_array_equal(s.imputation(m).values, imps[m].values)


def test_stack_rejects_inconsistent_tables():
    _, _, imps = _imputed(M=2)
    _, _, other = _imputed(M=2, seed=10)
    with pytest.raises(TableError):
        stack([imps[0], other[0]])
    with pytest.raises(ValueError):
        stack(imps, "wide")


def test_unit_weights_sum_to_one_per_subject():
    _, _, imps = _imputed()
    for mode in ("tall", "short"):
        s = unit_mi_weights(stack(imps, mode))
        np.testing.assert_allclose(s.subject_weight_sums(), 1.0, atol=1e-12)


@pytest.mark.parametrize("scenario", [1, 2, 3, 4])
def test_weights_match_density_oracle(scenario):
    t, spec, imps = _imputed(scenario, n=250)
    s = stack(imps, "tall")
    cc = complete_case_fit(t, spec)
    ws = compute_weights(s, cc, spec, "mle")
    # oracle: explicit per-subject normalisation of densities, uniform for complete subjects
    dens = np.exp(log_density(spec, cc.params, s.values, s.columns, cc.dispersion, cc.baseline))
    expect = np.empty(s.n_rows)
    for i in range(s.n_subjects):
        rows = s.subject == i
        d = np.ones(rows.sum()) if s.complete[rows][0] else dens[rows]
        expect[rows] = d / d.sum()
    np.testing.assert_allclose(ws.weights, expect, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(ws.subject_weight_sums(), 1.0, atol=1e-12)


def test_complete_case_fit_uses_complete_rows():
    t, spec, _ = _imputed(n=400)
    cc = complete_case_fit(t, spec)
    ref = fit_table(t.take(t.mask.all(axis=1)), spec)
    np.testing.assert_array_equal(cc.params, ref.params)
    assert cc.n_cc == int(t.mask.all(axis=1).sum())


def test_weight_modes_deterministic():
    t, spec, imps = _imputed()
    s = stack(imps, "short")
    cc = complete_case_fit(t, spec)
    np.testing.assert_array_equal(compute_weights(s, cc, spec, "mle").weights,
                                  compute_weights(s, cc, spec, "mle").weights)
    a = compute_weights(s, cc, spec, "draw", seed=3).weights
    np.testing.assert_array_equal(a, compute_weights(s, cc, spec, "draw", seed=3).weights)
    assert not np.array_equal(a, compute_weights(s, cc, spec, "draw", seed=4).weights)


@settings(max_examples=50, deadline=None)
@given(shift=st.floats(-700, 700), seed=st.integers(0, 1000))
def test_normalisation_invariant_to_subject_constant(shift, seed):
    r = np.random.default_rng(seed)
    subject = np.repeat(np.arange(20), 5)
    logw = r.normal(0, 3, 100)
    w0, _ = normalize_log_weights(logw, subject, 20)
    shifted = logw + np.where(subject == 3, shift, 0.0)
    w1, _ = normalize_log_weights(shifted, subject, 20)
    np.testing.assert_allclose(w0, w1, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(np.bincount(subject, w1), 1.0, atol=1e-12)


def test_underflow_falls_back_to_uniform():
    subject = np.array([0, 0, 1, 1])
    w, bad = normalize_log_weights(np.array([-np.inf, -np.inf, 0.0, -1.0]), subject, 2)
    assert bad == 1
    np.testing.assert_allclose(w[:2], 0.5)


def test_underflow_warns_and_counts():
    t, spec, imps = _imputed()
    s = stack(imps, "tall")
    cc = complete_case_fit(t, spec)
    cc.fit.params = np.array([np.inf, 0.0, 0.0])  # every density is exactly zero
    with pytest.warns(RuntimeWarning, match="all-zero"):
        ws = compute_weights(s, cc, spec, "mle")
    assert ws.diagnostics["underflow_subjects"] > 0
    np.testing.assert_allclose(ws.subject_weight_sums(), 1.0, atol=1e-12)


def test_tall_short_give_same_fit():
    t, spec, imps = _imputed(n=400, M=6)
    cc = complete_case_fit(t, spec)
    a = fit_stacked(compute_weights(stack(imps, "tall"), cc, spec), spec)
    b = fit_stacked(compute_weights(stack(imps, "short"), cc, spec), spec)
    np.testing.assert_allclose(a.params, b.params, rtol=1e-10, atol=1e-12)


def test_stacked_fit_of_identical_imputations_equals_complete_fit():
    full = generate_scenario(1, 200, 3)
    spec = scenario_outcome(1)
    s = unit_mi_weights(stack([full.replace()] * 4, "tall"))
    np.testing.assert_allclose(fit_stacked(s, spec).params, fit_table(full, spec).params, atol=1e-12)
