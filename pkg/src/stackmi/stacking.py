"""Stacking multiple imputations and weighting rows by the analysis-model density."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ._rng import SeedLike, child, make_rng
from .models import BaselineHazard, FitResult, OutcomeSpec, fit_table, fit_weighted, log_density
from .table import Column, Table, TableError

STACK_MODES = ("tall", "short")
WEIGHT_MODES = ("mle", "draw", "unit")


def group_sum(values, groups, n_groups):
    """Sum rows of ``values`` (1-d or 2-d+) within integer groups."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        return np.bincount(groups, values, minlength=n_groups)
    flat = values.reshape(len(values), -1)
    out = np.stack([np.bincount(groups, flat[:, k], minlength=n_groups) for k in range(flat.shape[1])], axis=1)
    return out.reshape((n_groups,) + values.shape[1:])


def group_max(values, groups, n_groups):
    out = np.full(n_groups, -np.inf)
    np.maximum.at(out, groups, values)
    return out


@dataclass
class StackedTable:
    """Imputed rows tagged by subject and imputation index.

    ``imp`` is 0-based; in a short stack, subjects with nothing imputed appear
    once with ``imp == 0``. ``complete`` flags rows of such subjects.
    """

    columns: tuple
    values: np.ndarray
    subject: np.ndarray
    imp: np.ndarray
    complete: np.ndarray
    imputed_cells: np.ndarray
    M: int
    n_subjects: int
    mode: str
    weights: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return len(self.values)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def appearances(self) -> np.ndarray:
        """Number of times each row's subject appears in the stack."""
        counts = np.bincount(self.subject, minlength=self.n_subjects)
        return counts[self.subject]

    def with_weights(self, weights, **diagnostics) -> "StackedTable":
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (self.n_rows,):
            raise ValueError("weight vector does not match stacked rows")
        return replace(self, weights=weights, diagnostics={**self.diagnostics, **diagnostics})

    def subject_weight_sums(self) -> np.ndarray:
        return np.bincount(self.subject, self.weights, minlength=self.n_subjects)

    def imputation(self, m: int) -> Table:
        """Rebuild the m-th completed table (short stacks reuse complete subjects)."""
        if self.mode == "tall":
            rows = self.imp == m
        else:
            rows = self.complete | (self.imp == m)
        idx = np.flatnonzero(rows)
        idx = idx[np.argsort(self.subject[idx], kind="stable")]
        if len(idx) != self.n_subjects:
            raise TableError(f"imputation {m} is incomplete in the stack")
        return Table(self.columns, self.values[idx])


def stack(imputed: Sequence[Table], mode: str = "short") -> StackedTable:
    """Stack M completed tables (tall: M*n rows; short: n1 + (n - n1)*M rows)."""
    if mode not in STACK_MODES:
        raise ValueError(f"stack mode must be one of {STACK_MODES}")
    imputed = list(imputed)
    if not imputed:
        raise ValueError("no imputations to stack")
    first = imputed[0]
    n, p = first.shape
    for t in imputed[1:]:
        if t.columns != first.columns or t.shape != (n, p):
            raise TableError("imputed tables differ in columns or dimensions")
        if not np.array_equal(t.imputed, first.imputed):
            raise TableError("imputed tables differ in which cells were imputed")
        src = first.source_mask
        if not np.array_equal(t.values[src], first.values[src]):
            raise TableError("imputed tables differ in observed cells")
    for t in imputed:
        if not t.mask.all():
            raise TableError("stacking requires completed tables (no missing cells)")
    M = len(imputed)
    complete = ~first.imputed.any(axis=1)
    subj, imps, vals, comp, cells = [], [], [], [], []
    for m, t in enumerate(imputed):
        rows = np.arange(n) if (mode == "tall" or m == 0) else np.flatnonzero(~complete)
        subj.append(rows)
        imps.append(np.full(len(rows), m))
        vals.append(t.values[rows])
        comp.append(complete[rows])
        cells.append(t.imputed[rows])
    return StackedTable(
        columns=first.columns,
        values=np.vstack(vals),
        subject=np.concatenate(subj),
        imp=np.concatenate(imps),
        complete=np.concatenate(comp),
        imputed_cells=np.vstack(cells),
        M=M,
        n_subjects=n,
        mode=mode,
    )


def unit_mi_weights(s: StackedTable) -> StackedTable:
    """Plain stacked-MI weights: 1 / number of appearances of the subject."""
    return s.with_weights(1.0 / s.appearances, weight_mode="unit")


@dataclass
class CompleteCaseFit:
    spec: OutcomeSpec
    fit: FitResult
    n_cc: int

    @property
    def params(self) -> np.ndarray:
        return self.fit.params

    @property
    def dispersion(self) -> Optional[float]:
        return self.fit.dispersion

    @property
    def baseline(self) -> Optional[BaselineHazard]:
        return self.fit.baseline

    def draw(self, rng) -> tuple[np.ndarray, Optional[float]]:
        """Parameter draw: asymptotic normal around the MLE; Gaussian dispersion
        from a scaled inverse chi-square."""
        info = self.fit.total_information
        L = np.linalg.cholesky(info)
        q = len(self.params)
        if self.spec.family == "gaussian-identity":
            df = self.n_cc - q
            rss = self.dispersion * self.n_cc
            s2 = rss / rng.chisquare(df)
            # coefficient draw conditional on the drawn dispersion
            scale = np.sqrt(s2 / self.dispersion)
            theta = self.params + scale * np.linalg.solve(L.T, rng.standard_normal(q))
            return theta, s2
        return self.params + np.linalg.solve(L.T, rng.standard_normal(q)), None


def complete_case_fit(table: Table, spec: OutcomeSpec) -> CompleteCaseFit:
    """Fit the analysis model to subjects with no missing cells (R_i = 1)."""
    spec.check_table(table.columns)
    rows = table.source_mask.all(axis=1)
    n_cc = int(rows.sum())
    q = len(spec.coef_names(table.columns))
    if n_cc < q + 2:
        raise TableError(f"too few complete cases ({n_cc}) for {q} parameters")
    fit = fit_table(table.take(rows), spec)
    return CompleteCaseFit(spec, fit, n_cc)


def _response_imputed(s: StackedTable, spec: OutcomeSpec) -> np.ndarray:
    idx = [s.names.index(r) for r in spec.response]
    return s.imputed_cells[:, idx].any(axis=1)


def normalize_log_weights(logw, subject, n_subjects):
    """Per-subject softmax of log densities; all -inf subjects get uniform weights."""
    mx = group_max(logw, subject, n_subjects)
    bad = ~np.isfinite(mx)
    shifted = np.where(bad[subject], 0.0, logw - np.where(bad, 0.0, mx)[subject])
    e = np.exp(shifted)
    tot = np.bincount(subject, e, minlength=n_subjects)
    return e / tot[subject], int(bad[np.unique(subject)].sum())


def compute_weights(s: StackedTable, cc: CompleteCaseFit, spec: OutcomeSpec,
                    mode: str = "mle", seed: SeedLike = 0) -> StackedTable:
    """Weights proportional to f(Y_i | X_im; theta_cc), normalised within subject.

    ``mode='draw'`` uses one complete-case parameter draw per imputation index.
    Subjects with nothing imputed get 1 / appearances. Subjects whose outcome
    was itself imputed are weighted uniformly, since their imputed outcome
    already comes from the outcome model.
    """
    if mode not in ("mle", "draw"):
        raise ValueError("weight mode must be 'mle' or 'draw'")
    spec.check_table(s.columns)
    if mode == "mle":
        logw = log_density(spec, cc.params, s.values, s.columns, cc.dispersion, cc.baseline)
    else:
        rng = make_rng(seed)
        logw = np.empty(s.n_rows)
        for m in range(s.M):
            rows = s.imp == m
            theta, s2 = cc.draw(rng)
            logw[rows] = log_density(spec, theta, s.values[rows], s.columns,
                                     s2 if s2 is not None else cc.dispersion, cc.baseline)
    logw = np.where(np.isnan(logw), -np.inf, logw)
    uniform = s.complete | _response_imputed(s, spec)
    logw[uniform] = 0.0
    w, n_bad = normalize_log_weights(logw, s.subject, s.n_subjects)
    if n_bad:
        warnings.warn(f"{n_bad} subjects had all-zero outcome densities; using uniform weights",
                      RuntimeWarning, stacklevel=2)
    return s.with_weights(w, weight_mode=mode, underflow_subjects=n_bad)


def fit_stacked(s: StackedTable, spec: OutcomeSpec) -> FitResult:
    if s.weights is None:
        raise ValueError("stacked table has no weights")
    return fit_weighted(s.values, s.columns, spec, s.weights)
