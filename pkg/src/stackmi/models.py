"""Weighted maximum-likelihood fits of the analysis model.

Three families are supported: Gaussian (identity link), Bernoulli (logit link)
and Cox proportional hazards (Breslow ties). Each estimator follows the
scikit-learn ``fit(X, y, sample_weight)`` convention on a numeric design
matrix, and additionally exposes per-row score and information contributions,
which the stacked-imputation variance estimators need.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_design, check_sample_weight, check_survival
from .table import Column, Table, TableError

FAMILIES = ("gaussian-identity", "bernoulli-logit", "cox-ph")
LOG_2PI = np.log(2 * np.pi)


class ConvergenceError(RuntimeError):
    pass


class RankDeficientError(np.linalg.LinAlgError):
    pass


# ---------------------------------------------------------------------------
# design specification


@dataclass(frozen=True)
class OutcomeSpec:
    """Analysis model f(Y | X; theta).

    ``terms`` lists main-effect column names and pairwise interactions written
    ``"a:b"``. Categorical columns expand to reference-cell dummies (level 0 is
    the reference). ``response`` is ``(y,)`` or, for ``cox-ph``, ``(time, event)``.
    """

    family: str
    response: tuple
    terms: tuple
    intercept: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "response", tuple(self.response))
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.family == "cox-ph":
            if len(self.response) != 2:
                raise ValueError("cox-ph needs response (time, event)")
            object.__setattr__(self, "intercept", False)
        elif len(self.response) != 1:
            raise ValueError(f"{self.family} needs a single response column")
        mains = {t for t in self.terms if ":" not in t}
        for t in self.terms:
            if ":" in t:
                parts = t.split(":")
                if len(parts) != 2 or not set(parts) <= mains:
                    raise ValueError(f"interaction {t!r} must combine two listed main effects")
        if not self.terms and not self.intercept:
            raise ValueError("model has no parameters")

    @property
    def main_effects(self) -> list[str]:
        return [t for t in self.terms if ":" not in t]

    @property
    def columns_used(self) -> list[str]:
        return list(self.response) + self.main_effects

    def check_table(self, columns: Sequence[Column]):
        roles = {c.name: c.role for c in columns}
        for name in self.columns_used:
            if name not in roles:
                raise TableError(f"outcome model refers to unknown column {name!r}")
        if self.family == "cox-ph":
            if roles[self.response[0]] != "event-time" or roles[self.response[1]] != "event-indicator":
                raise TableError("cox-ph requires event-time and event-indicator response columns")
        elif self.family == "bernoulli-logit" and roles[self.response[0]] != "binary":
            raise TableError("bernoulli-logit response must be a binary column")

    def design(self, values: np.ndarray, columns: Sequence[Column]) -> tuple[np.ndarray, list[str]]:
        """Expanded design (without intercept column) and coefficient names."""
        return design_matrix(values, columns, self.terms)

    def response_values(self, values: np.ndarray, columns: Sequence[Column]) -> np.ndarray:
        names = [c.name for c in columns]
        idx = [names.index(r) for r in self.response]
        y = values[:, idx]
        return y[:, 0] if y.shape[1] == 1 else y

    def coef_names(self, columns: Sequence[Column]) -> list[str]:
        _, names = design_matrix(np.zeros((0, len(columns))), columns, self.terms)
        return (["(Intercept)"] if self.intercept else []) + names

    def estimator(self, **kwargs) -> "_WeightedModel":
        if self.family == "gaussian-identity":
            return GaussianRegression(fit_intercept=self.intercept, **kwargs)
        if self.family == "bernoulli-logit":
            return LogisticRegression(fit_intercept=self.intercept, **kwargs)
        return CoxPH(**kwargs)


def _expand(values, columns, name):
    names = [c.name for c in columns]
    j = names.index(name)
    col = columns[j]
    v = values[:, j]
    if col.role == "categorical":
        levels = range(1, col.levels)
        return np.column_stack([(v == k).astype(float) for k in levels]) if len(levels) else np.zeros((len(v), 0)), \
            [f"{name}[{k}]" for k in levels]
    return v.reshape(-1, 1), [name]


def design_matrix(values, columns, terms) -> tuple[np.ndarray, list[str]]:
    values = np.asarray(values, dtype=float)
    blocks, names = [], []
    cache = {}
    for term in terms:
        parts = term.split(":")
        for p in parts:
            if p not in cache:
                if p not in [c.name for c in columns]:
                    raise TableError(f"unknown column {p!r} in model terms")
                cache[p] = _expand(values, columns, p)
        if len(parts) == 1:
            b, nm = cache[parts[0]]
        else:
            (ba, na), (bb, nb) = cache[parts[0]], cache[parts[1]]
            b = np.einsum("ni,nj->nij", ba, bb).reshape(len(values), ba.shape[1] * bb.shape[1])
            nm = [f"{a}:{c}" for a in na for c in nb]
        blocks.append(b)
        names.extend(nm)
    X = np.hstack(blocks) if blocks else np.zeros((len(values), 0))
    return X, names


# ---------------------------------------------------------------------------
# results


@dataclass
class FitResult:
    family: str
    params: np.ndarray
    names: list
    score: np.ndarray  # (rows, q) per-row score contributions U
    info: np.ndarray  # (rows, q, q) per-row information contributions J
    weights: np.ndarray
    loglik: float
    n_iter: int
    converged: bool
    dispersion: Optional[float] = None
    baseline: Optional["BaselineHazard"] = None
    extra: dict = field(default_factory=dict)

    @property
    def total_information(self) -> np.ndarray:
        return np.einsum("n,nij->ij", self.weights, self.info)

    @property
    def total_score(self) -> np.ndarray:
        return self.weights @ self.score

    def model_covariance(self) -> np.ndarray:
        """Inverse of the weighted information (model-based covariance)."""
        return np.linalg.inv(self.total_information)


# ---------------------------------------------------------------------------
# Newton-Raphson with step halving


def newton_raphson(fun, x0, max_iter=100, max_halvings=20, ftol=1e-10, gtol=1e-6,
                   bound=1e3):
    """Maximise ``fun`` (returning loglik, gradient, Hessian) from ``x0``.

    Converged when the relative log-likelihood change is below ``ftol`` and the
    gradient max-norm below ``gtol``. Coefficient norms beyond ``bound`` are
    treated as separation.
    """
    x = np.array(x0, dtype=float)
    ll, g, H = fun(x)
    if not np.isfinite(ll):
        raise ConvergenceError("log-likelihood not finite at starting values")
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            raise RankDeficientError("singular information matrix; design may be rank deficient") from None
        t = 1.0
        for _ in range(max_halvings + 1):
            x_new = x + t * step
            ll_new, g_new, H_new = fun(x_new)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            # no ascent possible from here; accept current point if already stationary
            if np.max(np.abs(g)) < gtol:
                return x, ll, g, H, it, True
            raise ConvergenceError("step halving failed to increase the log-likelihood")
        if np.linalg.norm(x_new) > bound:
            raise ConvergenceError("coefficient norm exceeded bound; possible perfect separation")
        rel = abs(ll_new - ll) / max(1.0, abs(ll_new))
        x, ll, g, H = x_new, ll_new, g_new, H_new
        if rel < ftol and np.max(np.abs(g)) < gtol:
            return x, ll, g, H, it, True
    raise ConvergenceError(f"no convergence after {max_iter} iterations")


# ---------------------------------------------------------------------------
# estimators


class _WeightedModel(BaseEstimator, RegressorMixin):
    family: str = ""

    def _add_intercept(self, X):
        if getattr(self, "fit_intercept", False):
            return np.column_stack([np.ones(len(X)), X])
        return X

    def _check_params(self, params, q):
        params = np.asarray(params, dtype=float)
        if params.shape != (q,):
            raise ValueError(f"expected {q} parameters, got shape {params.shape}")
        return params

    def result(self, X, y, sample_weight=None) -> FitResult:
        """FitResult at the fitted parameters for data (X, y, sample_weight)."""
        check_is_fitted(self, "params_")
        X, y, w = self._validate(X, y, sample_weight)
        U, J = self._contributions(self.params_, X, y, w)
        return FitResult(self.family, self.params_.copy(), list(self.param_names_), U, J, w,
                         self.loglik_, self.n_iter_, self.converged_,
                         dispersion=getattr(self, "dispersion_", None))

    def fit_result(self, X, y, sample_weight=None) -> FitResult:
        return self.fit(X, y, sample_weight).result(X, y, sample_weight)

    def _set_names(self, q_x):
        names = [f"x{j}" for j in range(q_x)]
        self.param_names_ = (["(Intercept)"] if getattr(self, "fit_intercept", False) else []) + names

    @property
    def coef_(self):
        check_is_fitted(self, "params_")
        return self.params_[1:] if getattr(self, "fit_intercept", False) else self.params_

    @property
    def intercept_(self):
        check_is_fitted(self, "params_")
        return self.params_[0] if getattr(self, "fit_intercept", False) else 0.0

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_design(X)
        return self._add_intercept(X) @ self.params_


class GaussianRegression(_WeightedModel):
    """Weighted least squares; dispersion is the weighted RSS over the weight total."""

    family = "gaussian-identity"

    def __init__(self, fit_intercept=True):
        self.fit_intercept = fit_intercept

    def _validate(self, X, y, w):
        X = self._add_intercept(check_design(X))
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != len(X):
            raise ValueError("X and y have inconsistent lengths")
        return X, y, check_sample_weight(w, len(X))

    def fit(self, X, y, sample_weight=None):
        X, y, w = self._validate(X, y, sample_weight)
        self._set_names(X.shape[1] - int(self.fit_intercept))
        sw = np.sqrt(w)
        A = X * sw[:, None]
        if np.linalg.matrix_rank(A) < X.shape[1]:
            raise RankDeficientError("singular design")
        # QR on the root-weighted design; normal equations lose precision for the 1e-10 oracle
        Q, R = np.linalg.qr(A)
        beta = np.linalg.solve(R, Q.T @ (y * sw))
        r = y - X @ beta
        self.params_ = beta
        self.dispersion_ = float(w @ r**2 / w.sum())
        if not self.dispersion_ > 0:
            raise RankDeficientError("zero residual variance; response is an exact linear function of the design")
        self.loglik_ = float(self._loglik(beta, X, y, w, self.dispersion_))
        self.n_iter_ = 1
        self.converged_ = True
        return self

    @staticmethod
    def _loglik(beta, X, y, w, s2):
        r = y - X @ beta
        return -0.5 * (w @ (LOG_2PI + np.log(s2) + r**2 / s2))

    def _contributions(self, beta, X, y, w, s2=None):
        s2 = self.dispersion_ if s2 is None else s2
        r = y - X @ beta
        U = X * (r / s2)[:, None]
        J = np.einsum("ni,nj->nij", X, X) / s2
        return U, J

    def log_density(self, X, y, params=None, dispersion=None):
        params = self.params_ if params is None else params
        s2 = self.dispersion_ if dispersion is None else dispersion
        X = self._add_intercept(check_design(X))
        r = np.asarray(y, dtype=float) - X @ params
        return -0.5 * (LOG_2PI + np.log(s2) + r**2 / s2)

    def predict(self, X):
        return self.decision_function(X)


class LogisticRegression(_WeightedModel):
    """Weighted Bernoulli-logit regression by Newton-Raphson with step halving."""

    family = "bernoulli-logit"

    def __init__(self, fit_intercept=True, max_iter=100, bound=1e3):
        self.fit_intercept = fit_intercept
        self.max_iter = max_iter
        self.bound = bound

    def _validate(self, X, y, w):
        X = self._add_intercept(check_design(X))
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != len(X):
            raise ValueError("X and y have inconsistent lengths")
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("response must be 0/1")
        return X, y, check_sample_weight(w, len(X))

    @staticmethod
    def _loglik(beta, X, y, w):
        eta = X @ beta
        return w @ (y * eta - np.logaddexp(0.0, eta))

    def _fun(self, X, y, w):
        def f(beta):
            eta = X @ beta
            p = expit(eta)
            ll = w @ (y * eta - np.logaddexp(0.0, eta))
            g = X.T @ (w * (y - p))
            H = -(X * (w * p * (1 - p))[:, None]).T @ X
            return ll, g, H
        return f

    def fit(self, X, y, sample_weight=None):
        X, y, w = self._validate(X, y, sample_weight)
        self._set_names(X.shape[1] - int(self.fit_intercept))
        if np.linalg.matrix_rank(X[w > 0]) < X.shape[1]:
            raise RankDeficientError("singular design")
        beta, ll, g, H, it, conv = newton_raphson(self._fun(X, y, w), np.zeros(X.shape[1]),
                                                  max_iter=self.max_iter, bound=self.bound)
        # a vanishing likelihood or information means the MLE sits at infinity
        ev = np.linalg.eigvalsh(-H)
        if abs(ll) < 1e-8 * w.sum() or ev[0] <= 1e-12 * ev[-1]:
            raise ConvergenceError("fitted probabilities are 0 or 1; possible perfect separation")
        self.params_, self.loglik_, self.n_iter_, self.converged_ = beta, float(ll), it, conv
        return self

    def _contributions(self, beta, X, y, w):
        p = expit(X @ beta)
        U = X * (y - p)[:, None]
        J = np.einsum("ni,nj->nij", X, X) * (p * (1 - p))[:, None, None]
        return U, J

    def log_density(self, X, y, params=None):
        params = self.params_ if params is None else params
        eta = self._add_intercept(check_design(X)) @ params
        y = np.asarray(y, dtype=float)
        return y * eta - np.logaddexp(0.0, eta)

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(float)


class _CoxTerms:
    """Risk-set sums for the weighted Breslow partial likelihood at one parameter value."""

    def __init__(self, X, time, event, w, beta, order=None):
        n, q = X.shape
        order = np.argsort(time, kind="stable") if order is None else order
        ts = time[order]
        uniq, start = np.unique(ts, return_index=True)
        inv_sorted = np.repeat(np.arange(len(uniq)), np.diff(np.append(start, n)))
        grp = np.empty(n, dtype=np.intp)
        grp[order] = inv_sorted
        eta = X @ beta
        shift = eta.max() if n else 0.0
        r = w * np.exp(eta - shift)
        K = len(uniq)
        rs = r[order]
        Xs = X[order]
        s0 = np.add.reduceat(rs, start)
        s1 = np.add.reduceat(rs[:, None] * Xs, start, axis=0)
        s2 = np.add.reduceat(rs[:, None, None] * np.einsum("ni,nj->nij", Xs, Xs), start, axis=0)
        # risk set at time u: all rows with time >= u
        S0 = np.cumsum(s0[::-1])[::-1]
        S1 = np.cumsum(s1[::-1], axis=0)[::-1]
        S2 = np.cumsum(s2[::-1], axis=0)[::-1]
        d = np.add.reduceat((w * event)[order], start)
        self.eta, self.shift, self.grp, self.uniq = eta, shift, grp, uniq
        self.S0, self.S1, self.S2, self.d = S0, S1, S2, d
        self.X, self.event, self.w = X, event, w
        has = d > 0
        xbar = np.zeros_like(S1)
        xbar[has] = S1[has] / S0[has, None]
        self.xbar = xbar
        dlam = np.zeros(K)
        dlam[has] = d[has] / S0[has]
        self.dlam = dlam  # hazard increments on the shifted scale

    def loglik(self):
        has = self.d > 0
        return float((self.w * self.event) @ self.eta
                     - self.d[has] @ (np.log(self.S0[has]) + self.shift))

    def gradient(self):
        return (self.w * self.event) @ self.X - self.d @ self.xbar

    def information(self):
        has = self.d > 0
        V = self.S2[has] / self.S0[has, None, None] - np.einsum("ki,kj->kij", self.xbar[has], self.xbar[has])
        return np.einsum("k,kij->ij", self.d[has], V)

    def contributions(self):
        """Score residuals and matching information pieces per row.

        U_j = delta_j (x_j - xbar(t_j)) - e^{eta_j} sum_{u <= t_j} dLambda(u) (x_j - xbar(u))
        J_j = e^{eta_j} sum_{u <= t_j} dLambda(u) (x_j - xbar(u))(x_j - xbar(u))^T
        so that sum_j w_j U_j is the score and sum_j w_j J_j the information.
        """
        X, g = self.X, self.grp
        C0 = np.cumsum(self.dlam)
        C1 = np.cumsum(self.dlam[:, None] * self.xbar, axis=0)
        C2 = np.cumsum(self.dlam[:, None, None] * np.einsum("ki,kj->kij", self.xbar, self.xbar), axis=0)
        e = np.exp(self.eta - self.shift)
        c0, c1, c2 = C0[g], C1[g], C2[g]
        U = self.event[:, None] * (X - self.xbar[g]) - e[:, None] * (X * c0[:, None] - c1)
        xc1 = np.einsum("ni,nj->nij", X, c1)
        J = e[:, None, None] * (np.einsum("ni,nj->nij", X, X) * c0[:, None, None] - xc1
                                - xc1.transpose(0, 2, 1) + c2)
        return U, J


class CoxPH(_WeightedModel):
    """Weighted Cox regression maximising the Breslow partial likelihood.

    ``y`` is an (n, 2) array of (time, event indicator).
    """

    family = "cox-ph"

    def __init__(self, max_iter=100, bound=1e3):
        self.max_iter = max_iter
        self.bound = bound

    def _validate(self, X, y, w):
        X = check_design(X)
        time, event = check_survival(y, len(X))
        return X, np.column_stack([time, event]), check_sample_weight(w, len(X))

    def fit(self, X, y, sample_weight=None):
        X, y, w = self._validate(X, y, sample_weight)
        self._set_names(X.shape[1])
        time, event = y[:, 0], y[:, 1]
        if not (w * event).sum() > 0:
            raise ValueError("no events with positive weight")
        if X.shape[1] and np.linalg.matrix_rank(X[w > 0] - X[w > 0].mean(axis=0)) < X.shape[1]:
            raise RankDeficientError("singular design")
        order = np.argsort(time, kind="stable")
        gscale = max(1.0, float(w.sum()))

        def f(beta):
            t = _CoxTerms(X, time, event, w, beta, order)
            return t.loglik(), t.gradient(), -t.information()

        beta, ll, g, H, it, conv = newton_raphson(f, np.zeros(X.shape[1]), max_iter=self.max_iter,
                                                  gtol=1e-6 * gscale, bound=self.bound)
        self.params_, self.loglik_, self.n_iter_, self.converged_ = beta, float(ll), it, conv
        return self

    def _contributions(self, beta, X, y, w):
        return _CoxTerms(X, y[:, 0], y[:, 1], w, beta).contributions()

    def result(self, X, y, sample_weight=None) -> FitResult:
        res = super().result(X, y, sample_weight)
        Xv, yv, w = self._validate(X, y, sample_weight)
        res.baseline = breslow_baseline(self.params_, Xv, yv, w)
        return res

    def predict(self, X):
        """Relative hazard exp(x'beta)."""
        return np.exp(self.decision_function(X))


# ---------------------------------------------------------------------------
# baseline hazard


@dataclass(frozen=True)
class BaselineHazard:
    """Breslow cumulative baseline hazard with its piecewise-constant rate.

    ``times`` are the distinct event times t_1 < ... < t_K, ``cumhaz`` the step
    values Lambda0(t_k), ``rates`` the constant hazard on (t_{k-1}, t_k] with t_0 = 0.
    """

    times: np.ndarray
    cumhaz: np.ndarray
    rates: np.ndarray

    def cumulative(self, t) -> np.ndarray:
        """Right-continuous step function; 0 before t_1, flat after t_K."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        return np.where(idx > 0, self.cumhaz[np.maximum(idx - 1, 0)], 0.0)

    def hazard(self, t) -> np.ndarray:
        """Piecewise-constant rate; times beyond t_K take the last interval's rate."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise ValueError("hazard is defined for positive times only")
        idx = np.minimum(np.searchsorted(self.times, t, side="left"), len(self.times) - 1)
        return self.rates[idx]

    def integrated(self, t) -> np.ndarray:
        """Integral of the piecewise-constant rate over (0, t]."""
        t = np.asarray(t, dtype=float)
        knots = np.concatenate([[0.0], self.times])
        cum = np.concatenate([[0.0], self.cumhaz])
        idx = np.clip(np.searchsorted(knots, t, side="left"), 1, len(knots) - 1)
        return cum[idx - 1] + self.rates[idx - 1] * (t - knots[idx - 1])


def breslow_baseline(params, X, y, sample_weight=None) -> BaselineHazard:
    """Breslow estimator: increment at each event time = weighted events / weighted risk."""
    X = check_design(X)
    time, event = check_survival(y, len(X))
    w = check_sample_weight(sample_weight, len(X))
    terms = _CoxTerms(X, time, event, w, np.asarray(params, dtype=float))
    has = terms.d > 0
    if not has.any():
        raise ValueError("no events; baseline hazard undefined")
    times = terms.uniq[has]
    # unshift: dLambda = d / (S0_shifted * e^shift)
    inc = np.exp(np.log(terms.d[has]) - np.log(terms.S0[has]) - terms.shift)
    cumhaz = np.cumsum(inc)
    widths = np.diff(np.concatenate([[0.0], times]))
    return BaselineHazard(times, cumhaz, inc / widths)


# ---------------------------------------------------------------------------
# spec-level helpers


def fit_weighted(values, columns, spec: OutcomeSpec, weights=None) -> FitResult:
    """Fit ``spec`` on a numeric grid (rows x columns) with row weights."""
    X, names = spec.design(values, columns)
    y = spec.response_values(values, columns)
    est = spec.estimator()
    res = est.fit_result(X, y, weights)
    res.names = (["(Intercept)"] if spec.intercept else []) + names
    return res


def fit_table(table: Table, spec: OutcomeSpec, weights=None) -> FitResult:
    spec.check_table(table.columns)
    used = [table.index(c) for c in spec.columns_used]
    if not table.mask[:, used].all():
        raise TableError("outcome model columns contain missing values")
    return fit_weighted(table.values, table.columns, spec, weights)


def log_density(spec: OutcomeSpec, params, values, columns, dispersion=None,
                baseline: Optional[BaselineHazard] = None) -> np.ndarray:
    """log f(Y | X; theta) per row."""
    X, _ = spec.design(values, columns)
    y = spec.response_values(values, columns)
    params = np.asarray(params, dtype=float)
    if spec.intercept:
        X = np.column_stack([np.ones(len(X)), X])
    eta = X @ params
    if spec.family == "gaussian-identity":
        if dispersion is None:
            raise ValueError("gaussian density needs a dispersion")
        return -0.5 * (LOG_2PI + np.log(dispersion) + (y - eta) ** 2 / dispersion)
    if spec.family == "bernoulli-logit":
        return y * eta - np.logaddexp(0.0, eta)
    if baseline is None:
        raise ValueError("cox-ph density needs a baseline hazard")
    t, d = y[:, 0], y[:, 1]
    out = -baseline.cumulative(t) * np.exp(eta)
    ev = d == 1
    if ev.any():
        out[ev] += np.log(baseline.hazard(t[ev])) + eta[ev]
    return out


def density(spec: OutcomeSpec, params, values, columns, dispersion=None, baseline=None) -> np.ndarray:
    return np.exp(log_density(spec, params, values, columns, dispersion, baseline))


def finite_diff_check(spec: OutcomeSpec, params, values, columns, weights=None,
                      dispersion=1.0, h=1e-5) -> float:
    """Max relative discrepancy of analytic score and Hessian vs central differences.

    The Gaussian log-likelihood is taken in the regression coefficients with the
    dispersion held fixed.
    """
    X, _ = spec.design(values, columns)
    y = spec.response_values(values, columns)
    est = spec.estimator()
    Xv, yv, w = est._validate(X, y, weights)
    theta = np.asarray(params, dtype=float)
    if spec.family == "gaussian-identity":
        ll = lambda b: GaussianRegression._loglik(b, Xv, yv, w, dispersion)  # noqa: E731
        U, J = est._contributions(theta, Xv, yv, w, s2=dispersion)
    elif spec.family == "bernoulli-logit":
        ll = lambda b: LogisticRegression._loglik(b, Xv, yv, w)  # noqa: E731
        U, J = est._contributions(theta, Xv, yv, w)
    else:
        ll = lambda b: _CoxTerms(Xv, yv[:, 0], yv[:, 1], w, b).loglik()  # noqa: E731
        U, J = est._contributions(theta, Xv, yv, w)
    score = w @ U
    hess = -np.einsum("n,nij->ij", w, J)
    q = len(theta)
    fd_g = np.empty(q)
    fd_H = np.empty((q, q))
    grad = (lambda b: w @ est._contributions(b, Xv, yv, w, s2=dispersion)[0]) \
        if spec.family == "gaussian-identity" else (lambda b: w @ est._contributions(b, Xv, yv, w)[0])
    for k in range(q):
        e = np.zeros(q)
        e[k] = h
        fd_g[k] = (ll(theta + e) - ll(theta - e)) / (2 * h)
        fd_H[:, k] = (grad(theta + e) - grad(theta - e)) / (2 * h)
    dg = np.abs(score - fd_g) / (1 + np.abs(fd_g))
    dH = np.abs(hess - fd_H) / (1 + np.abs(fd_H))
    return float(max(dg.max(), dH.max()))
