"""Input validation helpers used at public entry points."""

import numbers

import numpy as np

from .exceptions import ConfigurationError, EmptyTraceError


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_fraction(value, name, low=0.0, high=1.0):
    value = float(value)
    if not (low <= value <= high):
        raise ConfigurationError(f"{name} must lie in [{low}, {high}], got {value}")
    return value


def check_weights(weights, n=3, tol=1e-9):
    w = tuple(float(x) for x in weights)
    if len(w) != n:
        raise ConfigurationError(f"expected {n} weights, got {len(w)}")
    if any(x < 0 for x in w):
        raise ConfigurationError(f"weights must be non-negative, got {w}")
    if abs(sum(w) - 1.0) > tol:
        raise ConfigurationError(f"weights must sum to 1, got {sum(w)}")
    return w


def check_jobset(jobset, allow_empty=False):
    """Return ``jobset`` after checking it is a non-empty JobSet."""
    from .workload import JobSet

    if not isinstance(jobset, JobSet):
        raise TypeError(f"expected a JobSet, got {type(jobset).__name__}")
    if not allow_empty and len(jobset) == 0:
        raise EmptyTraceError("jobset is empty")
    return jobset


def check_increasing(values, name, strict=True):
    arr = np.asarray(list(values), dtype=float)
    diffs = np.diff(arr)
    bad = (diffs <= 0) if strict else (diffs < 0)
    if bad.any():
        kind = "strictly increasing" if strict else "non-decreasing"
        raise ConfigurationError(f"{name} must be {kind}")
    return arr


def check_random_state(seed):
    """Turn an int seed (or Generator) into a numpy Generator.

    ``None`` is rejected: every run must be seeded explicitly.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ConfigurationError("a seed is required")
    return np.random.default_rng(seed)
