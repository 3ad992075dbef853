"""Input validation helpers shared by the estimators and free functions."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ConfigurationError


def check_vector(x, name="x", size=None):
    """Return ``x`` as a finite 1-D float64 array, optionally of fixed length."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ConfigurationError(f"{name} must be 1-D, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ConfigurationError(f"{name} must have length {size}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains non-finite values")
    return arr


def check_batch(x, name="x", n_features=None):
    """Return ``x`` as a 2-D float64 array; 1-D input becomes a single row."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ConfigurationError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if n_features is not None and arr.shape[1] != n_features:
        raise ConfigurationError(
            f"{name} has {arr.shape[1]} features, expected {n_features}"
        )
    return arr


def check_same_length(a, b, names=("a", "b")):
    a = check_vector(a, names[0])
    b = check_vector(b, names[1])
    if a.shape != b.shape:
        raise ConfigurationError(
            f"{names[0]} and {names[1]} differ in length: {a.shape[0]} != {b.shape[0]}"
        )
    return a, b


def check_scalar(x, name, *, low=None, high=None, low_inclusive=True,
                 high_inclusive=True, integer=False):
    """Validate a scalar hyperparameter and return it as ``float`` or ``int``."""
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(x, bool) or not isinstance(x, kind):
        raise ConfigurationError(f"{name} must be {'an integer' if integer else 'a real number'}, got {x!r}")
    if not integer and not np.isfinite(x):
        raise ConfigurationError(f"{name} must be finite, got {x!r}")
    if low is not None and (x < low or (x == low and not low_inclusive)):
        raise ConfigurationError(f"{name}={x!r} is below the allowed range")
    if high is not None and (x > high or (x == high and not high_inclusive)):
        raise ConfigurationError(f"{name}={x!r} is above the allowed range")
    return int(x) if integer else float(x)


def check_random_state(seed):
    """Turn ``None``, an int or a Generator into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ConfigurationError(f"cannot build a random generator from {seed!r}")
