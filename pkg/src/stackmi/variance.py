"""Variance estimators for analyses of stacked multiple imputations."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .models import FitResult
from .stacking import StackedTable, group_sum

Z975 = 1.959963984540054
VARIANCE_METHODS = ("louis", "sandwich", "sandwich-cluster", "wood", "rubin", "model")


@dataclass
class VarianceReport:
    method: str
    params: np.ndarray
    cov: np.ndarray
    names: list
    diagnostics: dict = field(default_factory=dict)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def confint(self, z: float = Z975) -> np.ndarray:
        return np.column_stack([self.params - z * self.se, self.params + z * self.se])

    def rows(self):
        ci = self.confint()
        for k, name in enumerate(self.names):
            yield dict(coefficient=name, estimate=self.params[k], se=self.se[k],
                       ci_low=ci[k, 0], ci_high=ci[k, 1], method=self.method)


def write_reports(path, reports: Sequence[VarianceReport]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["coefficient", "estimate", "se", "ci_low", "ci_high", "method"])
        for rep in reports:
            for r in rep.rows():
                w.writerow([r["coefficient"], repr(float(r["estimate"])), repr(float(r["se"])),
                            repr(float(r["ci_low"])), repr(float(r["ci_high"])), r["method"]])


def _inverse_psd(A, floor=1e-10):
    """Inverse of a symmetric matrix; non-PSD input is eigenvalue-clipped first."""
    A = 0.5 * (A + A.T)
    vals, vecs = np.linalg.eigh(A)
    psd = bool(vals.min() > 0)
    if psd:
        return np.linalg.inv(A), True
    vals = np.maximum(vals, floor)
    return (vecs / vals) @ vecs.T, False


def _check(s: StackedTable, fit: FitResult):
    if s.weights is None:
        raise ValueError("stacked table has no weights")
    if fit.score.shape[0] != s.n_rows:
        raise ValueError("fit was not produced on this stacked table")
    if not np.allclose(fit.weights, s.weights, rtol=0, atol=1e-14):
        raise ValueError("fit weights differ from the stack's weights")


def louis_information(s: StackedTable, fit: FitResult) -> tuple[np.ndarray, np.ndarray]:
    """Observed information as weighted complete-data information minus the
    per-subject weighted variance of complete-data scores.

    Returns (I_obs, I_com).
    """
    _check(s, fit)
    w, U = s.weights, fit.score
    I_com = fit.total_information
    wsum = np.bincount(s.subject, w, minlength=s.n_subjects)
    Ubar = group_sum(w[:, None] * U, s.subject, s.n_subjects)
    nz = wsum > 0
    Ubar[nz] /= wsum[nz, None]
    D = U - Ubar[s.subject]
    I_mis = (D * w[:, None]).T @ D
    return I_com - I_mis, I_com


def louis_variance(s: StackedTable, fit: FitResult) -> VarianceReport:
    I_obs, I_com = louis_information(s, fit)
    cov, psd = _inverse_psd(I_obs)
    cov = 0.5 * (cov + cov.T)
    return VarianceReport("louis", fit.params, cov, list(fit.names),
                          {"psd": psd, "I_com": I_com, "I_obs": I_obs})


def sandwich_variance(s: StackedTable, fit: FitResult, cluster: bool = False) -> VarianceReport:
    """A^-1 B A^-1 with A the weighted information.

    By default B treats every row of the tall stack as an independent
    observation, B = sum w^2 U U'. A short-stack row of a complete subject stands
    for M tall rows of weight w/M, so it enters as w^2 U U' / M; the estimate is
    the same for either stack mode. With ``cluster=True`` weighted scores are
    summed within subject first.
    """
    _check(s, fit)
    w, U = s.weights, fit.score
    A = fit.total_information
    if cluster:
        g = group_sum(w[:, None] * U, s.subject, s.n_subjects)
        B = g.T @ g
    else:
        copies = np.where((s.mode == "short") & s.complete, s.M, 1)
        B = (U * (w**2 / copies)[:, None]).T @ U
    Ainv = np.linalg.inv(A)
    cov = Ainv @ B @ Ainv
    cov = 0.5 * (cov + cov.T)
    return VarianceReport("sandwich-cluster" if cluster else "sandwich", fit.params, cov,
                          list(fit.names), {"trace_B": float(np.trace(B))})


def missing_fractions(s: StackedTable, names: Sequence[str]) -> np.ndarray:
    """Fraction of subjects with an imputed cell in each coefficient's covariate(s).

    Interaction and dummy coefficients use their parent columns; the intercept gets 0.
    """
    cols = s.names
    subj_imp = np.zeros((s.n_subjects, len(cols)), dtype=bool)
    np.logical_or.at(subj_imp, s.subject, s.imputed_cells)
    frac = np.zeros(len(names))
    for k, name in enumerate(names):
        parts = [p.split("[")[0] for p in name.split(":")]
        idx = [cols.index(p) for p in parts if p in cols]
        if idx:
            frac[k] = subj_imp[:, idx].any(axis=1).mean()
    return frac


def wood_variance(s: StackedTable, fit: FitResult, fractions: Optional[Sequence[float]] = None) -> VarianceReport:
    """Model-based covariance inflated by 1 / (1 - f_p) per coefficient."""
    _check(s, fit)
    wsum = s.subject_weight_sums()
    present = np.bincount(s.subject, minlength=s.n_subjects) > 0
    if not np.allclose(wsum[present], 1.0, atol=1e-8):
        raise ValueError("Wood scaling expects weights summing to 1 within subject")
    f = missing_fractions(s, fit.names) if fractions is None else np.asarray(fractions, dtype=float)
    if np.any(f >= 1) or np.any(f < 0):
        raise ValueError("missing fractions must lie in [0, 1)")
    V = np.linalg.inv(fit.total_information)
    scale = 1.0 / (1.0 - f)
    cov = V * np.sqrt(np.outer(scale, scale))
    return VarianceReport("wood", fit.params, 0.5 * (cov + cov.T), list(fit.names), {"fractions": f})


def model_variance(fit: FitResult) -> VarianceReport:
    cov = np.linalg.inv(fit.total_information)
    return VarianceReport("model", fit.params, 0.5 * (cov + cov.T), list(fit.names))


def rubin_combine(params: Sequence[np.ndarray], covs: Sequence[np.ndarray],
                  names: Optional[Sequence[str]] = None) -> VarianceReport:
    """Pool M analyses: mean estimate; total = W + (1 + 1/M) B."""
    P = np.asarray([np.asarray(p, dtype=float) for p in params])
    C = np.asarray([np.asarray(c, dtype=float) for c in covs])
    M = len(P)
    if M < 2:
        raise ValueError("Rubin's rules need at least two analyses")
    if C.shape != (M, P.shape[1], P.shape[1]):
        raise ValueError("dimension mismatch between estimates and covariances")
    qbar = P.mean(axis=0)
    W = C.mean(axis=0)
    D = P - qbar
    B = D.T @ D / (M - 1)
    T = W + (1 + 1 / M) * B
    names = list(names) if names is not None else [f"b{k}" for k in range(P.shape[1])]
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(np.diag(T) > 0, (1 + 1 / M) * np.diag(B) / np.diag(T), 0.0)
    return VarianceReport("rubin", qbar, T, names, {"W": W, "B": B, "fraction_missing_info": lam})


def rubin_from_fits(fits: Sequence[FitResult]) -> VarianceReport:
    return rubin_combine([f.params for f in fits], [np.linalg.inv(f.total_information) for f in fits],
                         fits[0].names)


def variance_report(method: str, s: StackedTable, fit: FitResult) -> VarianceReport:
    if method == "louis":
        return louis_variance(s, fit)
    if method == "sandwich":
        return sandwich_variance(s, fit)
    if method == "sandwich-cluster":
        return sandwich_variance(s, fit, cluster=True)
    if method == "wood":
        return wood_variance(s, fit)
    if method == "model":
        return model_variance(fit)
    raise ValueError(f"unknown stacked variance method {method!r}")
