"""Multiple imputation of covariates by chained equations.

Covariate imputation models never see the outcome unless explicitly asked to
(the "with outcome" comparator). Parameter uncertainty is propagated by drawing
imputation-model parameters before drawing values:

* ``bayes-linear``: dispersion ~ RSS / chi2(df), coefficients ~ N(beta_ls, dispersion (Z'Z)^-1)
* ``bayes-logistic`` / ``bayes-multinomial``: coefficients ~ N(MLE, inverse observed information)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, softmax
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._rng import SeedLike, child, make_rng
from .models import (ConvergenceError, LogisticRegression, OutcomeSpec, RankDeficientError,
                     design_matrix, newton_raphson)
from .table import OUTCOME_ROLES, Column, Table, TableError

IMPUTER_FAMILIES = {
    "continuous": "bayes-linear",
    "binary": "bayes-logistic",
    "categorical": "bayes-multinomial",
}


class ImputationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ImputerSpec:
    target: str
    predictors: tuple
    family: Optional[str] = None  # inferred from the target's role when None

    def __post_init__(self):
        object.__setattr__(self, "predictors", tuple(self.predictors))
        if self.target in self.predictors:
            raise ValueError(f"imputer for {self.target!r} lists the target as a predictor")
        if self.family is not None and self.family not in IMPUTER_FAMILIES.values():
            raise ValueError(f"unknown imputer family {self.family!r}")

    def resolve(self, columns: Sequence[Column]) -> "ImputerSpec":
        names = [c.name for c in columns]
        for name in (self.target,) + self.predictors:
            if name not in names:
                raise TableError(f"imputer refers to unknown column {name!r}")
        role = columns[names.index(self.target)].role
        if role not in IMPUTER_FAMILIES:
            raise TableError(f"cannot impute column {self.target!r} with role {role!r}")
        expected = IMPUTER_FAMILIES[role]
        if self.family is not None and self.family != expected:
            raise TableError(f"family {self.family!r} incompatible with {role} column {self.target!r}")
        return ImputerSpec(self.target, self.predictors, expected)


@dataclass(frozen=True)
class ChainConfig:
    M: int = 50
    cycles: int = 10
    visit_order: Optional[tuple] = None  # default: ascending missingness count
    seed: SeedLike = 0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("M must be at least 2")
        if self.cycles < 1:
            raise ValueError("cycles must be at least 1")


@dataclass
class ImputerDraw:
    family: str
    coef: np.ndarray  # (q,) or (q, K-1) for multinomial
    dispersion: Optional[float] = None
    levels: Optional[int] = None
    names: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# parameter draws on arrays


def _predictor_design(values, columns, predictors):
    Z, names = design_matrix(values, columns, predictors)
    return np.column_stack([np.ones(len(values)), Z]), ["(Intercept)"] + names


def _check_rows(n_obs, q, target):
    if n_obs < q + 1:
        raise ImputationError(f"{target}: insufficient complete rows ({n_obs}) for {q - 1} predictors")


def _draw_linear(Z, y, rng, target=""):
    _check_rows(len(y), Z.shape[1], target)
    ZtZ = Z.T @ Z
    try:
        L = np.linalg.cholesky(ZtZ)
    except np.linalg.LinAlgError:
        raise ImputationError(f"{target}: singular design") from None
    beta = np.linalg.solve(ZtZ, Z.T @ y)
    rss = float(np.sum((y - Z @ beta) ** 2))
    df = len(y) - Z.shape[1]
    if rss <= 1e-12 * max(1.0, float(y @ y)):
        raise ImputationError(f"{target}: singular design (zero residual variance)")
    sigma2 = rss / rng.chisquare(df)
    # beta* = beta + sigma * L^-T z has covariance sigma2 (Z'Z)^-1
    z = rng.standard_normal(Z.shape[1])
    coef = beta + np.sqrt(sigma2) * np.linalg.solve(L.T, z)
    return coef, sigma2


def _draw_logistic(Z, y, rng, target=""):
    _check_rows(len(y), Z.shape[1], target)
    est = LogisticRegression(fit_intercept=False)
    try:
        est.fit(Z, y)
    except (RankDeficientError, ConvergenceError) as exc:
        raise ImputationError(f"{target}: {exc}") from None
    p = expit(Z @ est.params_)
    info = (Z * (p * (1 - p))[:, None]).T @ Z
    return _mvn_draw(rng, est.params_, info, target), None


def _multinomial_fun(Z, Y):
    """Log-likelihood pieces for softmax regression with level 0 as reference."""
    n, q = Z.shape
    K1 = Y.shape[1]

    def f(vec):
        B = vec.reshape(q, K1)
        eta = np.column_stack([np.zeros(n), Z @ B])
        P = softmax(eta, axis=1)[:, 1:]
        lse = np.logaddexp.reduce(eta, axis=1)
        ll = float(np.sum(Y * (Z @ B)) - lse.sum())
        g = (Z.T @ (Y - P)).ravel()
        H = np.empty((q, K1, q, K1))
        for k in range(K1):
            for m in range(K1):
                c = P[:, k] * ((k == m) - P[:, m])
                H[:, k, :, m] = -(Z * c[:, None]).T @ Z
        return ll, g, H.reshape(q * K1, q * K1)

    return f


def _draw_multinomial(Z, y, levels, rng, target=""):
    _check_rows(len(y), Z.shape[1], target)
    Y = np.column_stack([(y == k).astype(float) for k in range(1, levels)])
    if (Y.sum(axis=0) == 0).any() or (Y.sum(axis=1) == 0).sum() == 0:
        raise ImputationError(f"{target}: some category is empty among observed rows")
    f = _multinomial_fun(Z, Y)
    try:
        vec, _, _, H, _, _ = newton_raphson(f, np.zeros(Z.shape[1] * (levels - 1)))
    except (np.linalg.LinAlgError, ConvergenceError) as exc:
        raise ImputationError(f"{target}: {exc}") from None
    draw = _mvn_draw(rng, vec, -H, target)
    return draw.reshape(Z.shape[1], levels - 1), None


def _mvn_draw(rng, mean, info, target):
    try:
        L = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        raise ImputationError(f"{target}: singular design") from None
    return mean + np.linalg.solve(L.T, rng.standard_normal(len(mean)))


def _draw(spec, Z, y, levels, rng):
    if spec.family == "bayes-linear":
        return _draw_linear(Z, y, rng, spec.target)
    if spec.family == "bayes-logistic":
        return _draw_logistic(Z, y, rng, spec.target)
    return _draw_multinomial(Z, y, levels, rng, spec.target)


def _predict(family, coef, sigma2, Z, rng):
    if family == "bayes-linear":
        return Z @ coef + np.sqrt(sigma2) * rng.standard_normal(len(Z))
    if family == "bayes-logistic":
        return (rng.random(len(Z)) < expit(Z @ coef)).astype(float)
    P = softmax(np.column_stack([np.zeros(len(Z)), Z @ coef]), axis=1)
    u = rng.random(len(Z))[:, None]
    return np.minimum((np.cumsum(P, axis=1) < u).sum(axis=1), P.shape[1] - 1).astype(float)


def draw_imputer(table: Table, spec: ImputerSpec, seed: SeedLike) -> ImputerDraw:
    """Draw imputation-model parameters from rows with target and predictors observed."""
    spec = spec.resolve(table.columns)
    rows = table.complete_rows((spec.target,) + spec.predictors)
    vals = table.values[rows]
    Z, names = _predictor_design(vals, table.columns, spec.predictors)
    y = vals[:, table.index(spec.target)]
    levels = table.column(spec.target).levels
    coef, sigma2 = _draw(spec, Z, y, levels, make_rng(seed))
    return ImputerDraw(spec.family, coef, sigma2, levels, names)


# ---------------------------------------------------------------------------
# chained equations


def default_specs(table: Table, outcome: Sequence[str] = (), with_outcome: bool = False) -> list[ImputerSpec]:
    """One imputer per incomplete covariate, using every other covariate as predictor.

    ``with_outcome`` adds the outcome columns as predictors (comparator mode).
    """
    outcome = set(outcome) | {c.name for c in table.columns if c.role in OUTCOME_ROLES}
    covs = [c.name for c in table.columns if c.name not in outcome]
    specs = []
    for j, c in enumerate(table.columns):
        if c.name in outcome or table.mask[:, j].all():
            continue
        preds = [p for p in covs if p != c.name]
        if with_outcome:
            preds += [p for p in table.names if p in outcome]
        specs.append(ImputerSpec(c.name, tuple(preds)))
    return specs


def _validate_specs(table, specs, outcome, allow_outcome_predictors):
    outcome = set(outcome) | {c.name for c in table.columns if c.role in OUTCOME_ROLES}
    specs = [s.resolve(table.columns) for s in specs]
    targets = [s.target for s in specs]
    if len(set(targets)) != len(targets):
        raise TableError("each incomplete covariate needs exactly one imputer")
    for s in specs:
        if s.target in outcome:
            raise TableError(f"outcome column {s.target!r} cannot be imputed by chained equations")
        if not allow_outcome_predictors and outcome & set(s.predictors):
            raise TableError(f"imputer for {s.target!r} uses outcome columns {sorted(outcome & set(s.predictors))}")
    for j, c in enumerate(table.columns):
        if c.name in outcome or table.mask[:, j].all():
            continue
        if c.name not in targets:
            raise TableError(f"incomplete covariate {c.name!r} has no imputer")
    for s in specs:
        for p in s.predictors:
            if p in outcome and not table.mask[:, table.index(p)].all():
                raise TableError(f"predictor {p!r} is an incomplete outcome column")
    return specs


def chained_impute(table: Table, specs: Sequence[ImputerSpec], cfg: ChainConfig,
                   outcome: Sequence[str] = (), allow_outcome_predictors: bool = False) -> list[Table]:
    """Return ``cfg.M`` completed copies of ``table``.

    Each imputation starts from draws of the observed marginal of every
    incomplete column, then runs ``cfg.cycles`` sweeps. In a sweep each imputer
    is re-drawn on rows where its target was originally observed (predictors
    from the current completed data) and the target's missing cells are
    redrawn. Outcome columns are left as they are.

    When no imputer has an incomplete predictor, every sweep draws from the
    same distribution, so a single sweep is performed.
    """
    specs = _validate_specs(table, specs, outcome, allow_outcome_predictors)
    if not specs:
        return [table.replace() for _ in range(cfg.M)]
    miss_count = {s.target: int((~table.mask[:, table.index(s.target)]).sum()) for s in specs}
    if cfg.visit_order is not None:
        order = list(cfg.visit_order)
        if sorted(order) != sorted(miss_count):
            raise ValueError("visit_order must list each imputed column exactly once")
        specs = sorted(specs, key=lambda s: order.index(s.target))
    else:
        specs = sorted(specs, key=lambda s: miss_count[s.target])
    imputed_cols = set(miss_count)
    chained = any(imputed_cols & set(s.predictors) for s in specs)
    cycles = cfg.cycles if chained else 1

    cols = table.columns
    mask = table.mask
    plan = []
    for s in specs:
        j = table.index(s.target)
        obs = mask[:, j]
        plan.append((s, j, obs, np.flatnonzero(~obs), cols[j].levels))

    out = []
    for m in range(cfg.M):
        rng = make_rng(child(cfg.seed, m))
        V = np.array(table.values)
        for s, j, obs, mis, _ in plan:
            V[mis, j] = rng.choice(V[obs, j], size=len(mis), replace=True)
        for _ in range(cycles):
            for s, j, obs, mis, levels in plan:
                Z, _ = _predictor_design(V, cols, s.predictors)
                coef, sigma2 = _draw(s, Z[obs], V[obs, j], levels, rng)
                V[mis, j] = _predict(s.family, coef, sigma2, Z[mis], rng)
        imputed = np.zeros_like(mask)
        for s, j, obs, mis, _ in plan:
            imputed[mis, j] = True
        out.append(Table(cols, V, mask | imputed, truth=table.truth, imputed=imputed))
    return out


class ChainedImputer(BaseEstimator, TransformerMixin):
    """Estimator wrapper around :func:`chained_impute`.

    ``fit`` records the imputer specifications for a table; ``transform``
    returns the list of ``n_imputations`` completed tables.
    """

    def __init__(self, n_imputations=50, cycles=10, imputers=None, outcome=(),
                 with_outcome=False, visit_order=None, random_state=0):
        self.n_imputations = n_imputations
        self.cycles = cycles
        self.imputers = imputers
        self.outcome = outcome
        self.with_outcome = with_outcome
        self.visit_order = visit_order
        self.random_state = random_state

    def fit(self, table: Table, y=None):
        specs = self.imputers
        if specs is None:
            specs = default_specs(table, self.outcome, self.with_outcome)
        self.specs_ = _validate_specs(table, specs, self.outcome, self.with_outcome)
        self.columns_ = table.columns
        return self

    def transform(self, table: Table) -> list[Table]:
        check_is_fitted(self, "specs_")
        if table.columns != self.columns_:
            raise TableError("table columns differ from those seen in fit")
        cfg = ChainConfig(self.n_imputations, self.cycles, self.visit_order, self.random_state)
        return chained_impute(table, self.specs_, cfg, self.outcome, self.with_outcome)


# ---------------------------------------------------------------------------
# outcome imputation and importance resampling


def impute_outcome(completed: Table, outcome: OutcomeSpec, params, seed: SeedLike,
                   dispersion: Optional[float] = None) -> Table:
    """Fill missing responses by drawing from f(Y | X; params)."""
    if outcome.family == "cox-ph":
        raise ValueError("unsupported family for outcome imputation: cox-ph")
    j = completed.index(outcome.response[0])
    miss = ~completed.mask[:, j]
    if not miss.any():
        return completed
    others = [completed.index(c) for c in outcome.main_effects]
    if not completed.mask[:, others].all():
        raise TableError("covariates must be complete before imputing the outcome")
    rng = make_rng(seed)
    vals = np.array(completed.values)
    X, _ = outcome.design(np.nan_to_num(vals[miss]), completed.columns)
    if outcome.intercept:
        X = np.column_stack([np.ones(len(X)), X])
    eta = X @ np.asarray(params, dtype=float)
    if outcome.family == "gaussian-identity":
        if dispersion is None:
            raise ValueError("gaussian outcome imputation needs a dispersion")
        vals[miss, j] = eta + np.sqrt(dispersion) * rng.standard_normal(len(eta))
    else:
        vals[miss, j] = (rng.random(len(eta)) < expit(eta)).astype(float)
    imputed = np.array(completed.imputed)
    imputed[miss, j] = True
    mask = np.array(completed.mask)
    mask[miss, j] = True
    return Table(completed.columns, vals, mask, truth=completed.truth, imputed=imputed)


def multinomial_select(densities, seed: SeedLike, log: bool = False) -> np.ndarray:
    """Pick one candidate per subject with probability proportional to its density.

    ``densities`` is (subjects, candidates); returns 0-based candidate indices.
    With ``log=True`` the input holds log densities.
    """
    d = np.atleast_2d(np.asarray(densities, dtype=float))
    if log:
        mx = d.max(axis=1, keepdims=True)
        if not np.all(np.isfinite(mx)):
            raise ValueError("all candidate densities are zero for some subject")
        p = np.exp(d - mx)
    else:
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("densities must be finite and nonnegative")
        p = d
    tot = p.sum(axis=1, keepdims=True)
    if np.any(tot <= 0):
        raise ValueError("all candidate densities are zero for some subject")
    cdf = np.cumsum(p / tot, axis=1)
    u = make_rng(seed).random((len(d), 1))
    return np.minimum((cdf < u).sum(axis=1), d.shape[1] - 1)
