"""One-call estimator: impute covariates, stack, weight by the outcome model, fit."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._rng import child
from .imputation import ChainConfig, chained_impute, default_specs
from .models import OutcomeSpec, fit_table, log_density
from .stacking import STACK_MODES, complete_case_fit, compute_weights, fit_stacked, stack, unit_mi_weights
from .table import OUTCOME_ROLES, Table
from .variance import VARIANCE_METHODS, VarianceReport, rubin_from_fits, variance_report


class StackedImputationRegressor(BaseEstimator):
    """Outcome-weighted stacked multiple imputation for a GLM or Cox model.

    Parameters
    ----------
    outcome : OutcomeSpec
        Analysis model. Its weights ``f(Y | X; theta_cc)`` come from a
        complete-case fit of the same model.
    n_imputations, cycles : int
        Chained-equations settings. Imputers never use the outcome.
    imputers : list of ImputerSpec, optional
        Defaults to one imputer per incomplete covariate on all other covariates.
    weights : {'mle', 'draw', 'unit'}
        ``unit`` is plain stacking with weight 1 / appearances.
    stack_mode : {'tall', 'short'}
    variance : str
        Method behind ``covariance_``.
    random_state : int
        Required; there is no time-based default.

    Attributes
    ----------
    params_, param_names_, covariance_, fit_, stack_, reports_
    """

    def __init__(self, outcome: Optional[OutcomeSpec] = None, n_imputations=50, cycles=10, imputers=None,
                 weights="mle", stack_mode="short", variance="louis", random_state=0):
        self.outcome = outcome
        self.n_imputations = n_imputations
        self.cycles = cycles
        self.imputers = imputers
        self.weights = weights
        self.stack_mode = stack_mode
        self.variance = variance
        self.random_state = random_state

    def _validate_params(self):
        if not isinstance(self.outcome, OutcomeSpec):
            raise ValueError("outcome must be an OutcomeSpec")
        if self.weights not in ("mle", "draw", "unit"):
            raise ValueError(f"weights must be 'mle', 'draw' or 'unit', got {self.weights!r}")
        if self.stack_mode not in STACK_MODES:
            raise ValueError(f"stack_mode must be one of {STACK_MODES}")
        if self.variance not in VARIANCE_METHODS:
            raise ValueError(f"variance must be one of {VARIANCE_METHODS}")
        if self.random_state is None:
            raise ValueError("random_state is required")

    def fit(self, table: Table, y=None):
        self._validate_params()
        spec = self.outcome
        spec.check_table(table.columns)
        outcome_cols = tuple(dict.fromkeys(list(spec.response) +
                                           [c.name for c in table.columns if c.role in OUTCOME_ROLES]))
        specs = self.imputers if self.imputers is not None else default_specs(table, outcome_cols)
        cfg = ChainConfig(self.n_imputations, self.cycles, seed=child(self.random_state, 0))
        self.imputations_ = chained_impute(table, specs, cfg, outcome=outcome_cols)
        s = stack(self.imputations_, self.stack_mode)
        if self.weights == "unit":
            s = unit_mi_weights(s)
        else:
            self.complete_case_ = complete_case_fit(table, spec)
            s = compute_weights(s, self.complete_case_, spec, self.weights, seed=child(self.random_state, 1))
        self.stack_ = s
        self.fit_ = fit_stacked(s, spec)
        self.params_ = self.fit_.params
        self.param_names_ = list(self.fit_.names)
        self.reports_ = {}
        self.covariance_ = self.variance_report(self.variance).cov
        return self

    def variance_report(self, method: str = "louis") -> VarianceReport:
        check_is_fitted(self, "fit_")
        if method not in self.reports_:
            if method == "rubin":
                self.reports_[method] = rubin_from_fits([fit_table(t, self.outcome) for t in self.imputations_])
            else:
                self.reports_[method] = variance_report(method, self.stack_, self.fit_)
        return self.reports_[method]

    @property
    def bse_(self) -> np.ndarray:
        check_is_fitted(self, "covariance_")
        return np.sqrt(np.diag(self.covariance_))

    @property
    def coef_(self) -> np.ndarray:
        check_is_fitted(self, "params_")
        return self.params_[1:] if self.outcome.intercept else self.params_

    @property
    def intercept_(self) -> float:
        check_is_fitted(self, "params_")
        return float(self.params_[0]) if self.outcome.intercept else 0.0

    def decision_function(self, table: Table) -> np.ndarray:
        """Linear predictor for a complete table."""
        check_is_fitted(self, "params_")
        X, _ = self.outcome.design(table.values, table.columns)
        if self.outcome.intercept:
            X = np.column_stack([np.ones(len(X)), X])
        return X @ self.params_

    def score_samples(self, table: Table) -> np.ndarray:
        """Log density of each row's outcome under the fitted model (Cox rows use the fitted Breslow baseline)."""
        check_is_fitted(self, "params_")
        return log_density(self.outcome, self.params_, table.values, table.columns, self.fit_.dispersion,
                           self.fit_.baseline)
