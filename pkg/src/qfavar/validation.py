"""Input validation helpers shared by the estimators and analysis functions."""

import numbers

import numpy as np


def check_quantiles(quantiles):
    """Return quantile levels as a float array after validating them.

    Raises
    ------
    ValueError
        If any level lies outside (0, 1) or the levels are not strictly
        increasing.
    """
    q = np.atleast_1d(np.asarray(quantiles, dtype=float))
    if q.ndim != 1 or q.size == 0:
        raise ValueError("quantiles must be a non-empty 1-d sequence")
    if np.any(~np.isfinite(q)) or np.any(q <= 0.0) or np.any(q >= 1.0):
        raise ValueError(f"quantile levels must lie in (0, 1), got {q.tolist()}")
    if np.any(np.diff(q) <= 0.0):
        raise ValueError(f"quantile levels must be strictly increasing, got {q.tolist()}")
    return q


def check_quantile(q):
    if not isinstance(q, numbers.Real) or not 0.0 < float(q) < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q!r}")
    return float(q)


def check_positive(value, name):
    v = np.asarray(value, dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v <= 0.0):
        raise ValueError(f"{name} must be strictly positive, got {value!r}")
    return value


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_matrix(a, name, shape=None, finite=True):
    """Convert to a 2-d float array, optionally enforcing a shape."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if shape is not None:
        for got, want in zip(arr.shape, shape):
            if want is not None and got != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
    if finite and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_square(a, name):
    arr = check_matrix(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise TypeError(f"cannot build a Generator from {seed!r}")
