"""Small argument validators shared across modules."""

import numbers

import numpy as np


def check_eps(eps):
    if not isinstance(eps, numbers.Real) or not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], got {eps!r}")
    return float(eps)


def check_eps_list(eps_list):
    eps = [check_eps(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError(f"eps values must be strictly decreasing, got {eps}")
    return eps


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_paths(X):
    """2-D float array of paths (rows) on a uniform grid."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError(f"expected a (paths, steps + 1) array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("paths contain non-finite values")
    return X
