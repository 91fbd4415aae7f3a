"""Input validation shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array


def check_design(X):
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_min_samples=1,
                    ensure_min_features=0, ensure_all_finite=True)
    return X


def check_sample_weight(w, n):
    """Row weights: finite, nonnegative, not all zero. ``None`` means unit weights."""
    if w is None:
        return np.ones(n)
    w = np.asarray(w, dtype=float).ravel()
    if w.shape != (n,):
        raise ValueError(f"sample_weight has length {w.size}, expected {n}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("sample_weight must be finite and nonnegative")
    if not w.sum() > 0:
        raise ValueError("sample_weight is all zero")
    return w


def check_survival(y, n):
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape != (n, 2):
        raise ValueError("survival response must be an (n, 2) array of (time, event)")
    time, event = y[:, 0], y[:, 1]
    if not np.all(np.isfinite(time)) or np.any(time <= 0):
        raise ValueError("nonpositive event time")
    if not np.isin(event, (0.0, 1.0)).all():
        raise ValueError("event indicator must be 0 or 1")
    return time, event
