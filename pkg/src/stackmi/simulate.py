"""Synthetic data for the four simulation scenarios and logistic missingness mechanisms."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit, logit

from ._rng import SeedLike, child, make_rng
from .table import Column, Table, TableError

SCENARIOS = (1, 2, 3, 4)

# generating parameters per scenario
SCENARIO_PARAMS = {
    1: dict(cov=[[0.49, 0.12], [0.12, 0.09]], coef=(0.53, 1.25), intercept=0.0, resid_var=0.55),
    2: dict(cov=[[1.0, 0.3, 0.3], [0.3, 1.0, 0.3], [0.3, 0.3, 1.0]], coef=(0.5, 0.5, 0.5), intercept=0.5),
    3: dict(cov=[[0.81, 0.59], [0.59, 1.21]], coef=(1.0, 1.0, 1.0), intercept=0.0, resid_var=1.0),
    4: dict(cov=[[1.0, 0.5], [0.5, 1.0]], coef=(0.5, 0.5), censor=(0.2, 3.0)),
}

# outcome-model coefficients (excluding intercept) used as truth when scoring estimates
TRUE_EFFECTS = {
    1: {"x1": 0.53, "x2": 1.25},
    2: {"x1": 0.5, "x2": 0.5, "x3": 0.5},
    3: {"x1": 1.0, "x2": 1.0, "x1:x2": 1.0},
    4: {"x1": 0.5, "x2": 0.5},
}

DEFAULT_PHI = {
    1: [(0, 0, 0), (0, 1, 0), (0, 0, 1), (0, 1, -1)],
    2: [(0.5, 0, 0), (0.5, 1, 0), (0.5, 0, 1), (0.5, 1, -1)],
    3: [(0, 0, 0), (0, 1, 0), (0, 0, 1), (0, 1, -1)],
    4: [(0.5, 0, 0), (0.5, 1, 0)],
}

SCENARIO2_X3_OBSERVED = 0.7


@dataclass(frozen=True)
class MissingnessMechanism:
    """Row-wise logistic model for the probability that ``target`` is observed.

    ``slopes`` maps fully observed predictor columns to coefficients; an empty
    mapping gives MCAR with P(observed) = expit(intercept).
    """

    target: str
    intercept: float = 0.0
    slopes: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.target in self.slopes:
            raise ValueError(f"mechanism for {self.target!r} cannot use the target as a predictor")

    @property
    def kind(self) -> str:
        return "MCAR" if not any(self.slopes.values()) else "MAR-logit"

    @classmethod
    def mcar(cls, target: str, p_observed: float) -> "MissingnessMechanism":
        return cls(target, float(logit(p_observed)), {})

    def prob_observed(self, table: Table) -> np.ndarray:
        lin = np.full(table.n, float(self.intercept))
        for name, b in self.slopes.items():
            if b == 0:
                continue
            j = table.index(name)
            if not table.mask[:, j].all():
                raise TableError(f"mechanism predictor {name!r} has missing values")
            lin += b * table.values[:, j]
        return expit(lin)


def _mvn(rng, cov, n):
    cov = np.asarray(cov, dtype=float)
    # raises LinAlgError unless symmetric positive definite
    if not np.allclose(cov, cov.T):
        raise ValueError("covariance must be symmetric")
    L = np.linalg.cholesky(cov)
    return rng.standard_normal((n, cov.shape[0])) @ L.T


def generate_scenario(scenario: int, n: int, seed: SeedLike) -> Table:
    """Draw a fully observed dataset from one of the four generating models."""
    if scenario not in SCENARIOS:
        raise ValueError(f"invalid scenario id {scenario!r}; expected one of {SCENARIOS}")
    if n < 1:
        raise ValueError("n must be positive")
    rng = make_rng(seed)
    p = SCENARIO_PARAMS[scenario]
    X = _mvn(rng, p["cov"], n)
    if scenario == 1:
        mu = X @ np.array(p["coef"])
        y = mu + np.sqrt(p["resid_var"]) * rng.standard_normal(n)
        cols = [Column("x1"), Column("x2"), Column("y")]
        return Table(cols, np.column_stack([X, y]))
    if scenario == 2:
        eta = p["intercept"] + X @ np.array(p["coef"])
        y = (rng.random(n) < expit(eta)).astype(float)
        cols = [Column("x1"), Column("x2"), Column("x3"), Column("y", "binary")]
        return Table(cols, np.column_stack([X, y]))
    if scenario == 3:
        mu = X[:, 0] + X[:, 1] + X[:, 0] * X[:, 1]
        y = mu + np.sqrt(p["resid_var"]) * rng.standard_normal(n)
        cols = [Column("x1"), Column("x2"), Column("y")]
        return Table(cols, np.column_stack([X, y]))
    # exponential event times with hazard exp(0.5 x1 + 0.5 x2), uniform censoring
    rate = np.exp(X @ np.array(p["coef"]))
    t = rng.exponential(1.0 / rate)
    c = rng.uniform(*p["censor"], size=n)
    time = np.minimum(t, c)
    event = (t <= c).astype(float)
    cols = [Column("x1"), Column("x2"), Column("time", "event-time"), Column("event", "event-indicator")]
    return Table(cols, np.column_stack([X, time, event]))


def scenario_mechanisms(scenario: int, phi: Sequence[float]) -> list[MissingnessMechanism]:
    """Mechanisms for one phi = (intercept, x1 slope, outcome slope) setting."""
    phi = tuple(float(v) for v in phi)
    if len(phi) == 2:
        phi = phi + (0.0,)
    if len(phi) != 3:
        raise ValueError("phi must have 2 or 3 entries")
    if scenario == 4:
        if phi[2] != 0:
            raise ValueError("scenario 4 does not support outcome-dependent missingness")
        mechs = [MissingnessMechanism("x2", phi[0], {"x1": phi[1]})]
    else:
        mechs = [MissingnessMechanism("x2", phi[0], {"x1": phi[1], "y": phi[2]})]
    if scenario == 2:
        mechs.append(MissingnessMechanism.mcar("x3", SCENARIO2_X3_OBSERVED))
    return mechs


def apply_missingness(table: Table, mechanisms: Sequence[MissingnessMechanism], seed: SeedLike) -> Table:
    """Mask target cells independently with probability 1 - P(observed).

    Observed cells are left untouched; pre-masking values are retained in
    ``Table.truth``.
    """
    truth = table.truth if table.truth is not None else np.where(table.mask, table.values, np.nan)
    mask = table.mask.copy()
    current = table
    for k, mech in enumerate(mechanisms):
        rng = make_rng(child(seed, k))
        p_obs = mech.prob_observed(current)
        j = current.index(mech.target)
        drop = rng.random(current.n) >= p_obs
        mask[:, j] &= ~drop
        current = Table(table.columns, table.values, mask)
    return Table(table.columns, table.values, mask, truth=truth)
