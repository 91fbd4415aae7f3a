import numpy as np
import pytest

from stackmi.models import OutcomeSpec
from stackmi.table import Column, Table

FAMILY_SPECS = {
    "gaussian-identity": OutcomeSpec("gaussian-identity", ("y",), ("x1", "x2", "g")),
    "bernoulli-logit": OutcomeSpec("bernoulli-logit", ("y",), ("x1", "x2", "g")),
    "cox-ph": OutcomeSpec("cox-ph", ("time", "event"), ("x1", "x2", "g")),
}


def random_instance(family, n, rng, ties=False):
    """Complete table with two continuous covariates and a 3-level factor."""
    x = rng.multivariate_normal([0, 0], [[1, 0.4], [0.4, 1]], size=n)
    g = rng.integers(0, 3, size=n).astype(float)
    eta = 0.3 * x[:, 0] - 0.5 * x[:, 1] + 0.4 * (g == 1) - 0.2 * (g == 2)
    base = [Column("x1"), Column("x2"), Column("g", "categorical", 3)]
    if family == "gaussian-identity":
        y = 0.2 + eta + rng.normal(0, 0.8, n)
        return Table(base + [Column("y")], np.column_stack([x, g, y]))
    if family == "bernoulli-logit":
        y = (rng.random(n) < 1 / (1 + np.exp(-(0.1 + eta)))).astype(float)
        return Table(base + [Column("y", "binary")], np.column_stack([x, g, y]))
    t = rng.exponential(1 / np.exp(eta))
    c = rng.uniform(0.2, 3, n)
    time = np.minimum(t, c)
    if ties:
        time = np.ceil(time * 10) / 10
    event = (t <= c).astype(float)
    cols = base + [Column("time", "event-time"), Column("event", "event-indicator")]
    return Table(cols, np.column_stack([x, g, time, event]))


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)
