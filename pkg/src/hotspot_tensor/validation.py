"""Input validation helpers in the style of ``sklearn.utils.validation``."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ParameterError, ShapeError


def check_tensor3(X, name: str = "X", min_years: int = 1) -> np.ndarray:
    """Validate a finite float tensor of shape (n_units, n_weeks, n_years)."""
    try:
        arr = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64, input_name=name)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be an order-3 tensor (units, weeks, years); got ndim={arr.ndim}")
    if arr.shape[2] < min_years:
        raise ShapeError(f"{name} needs at least {min_years} year(s), got {arr.shape[2]}")
    return arr


def check_positive(value, name: str, strict: bool = True) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ParameterError(f"{name} must be a finite real number, got {value!r}")
    if value < 0 or (strict and value == 0):
        raise ParameterError(f"{name} must be {'positive' if strict else 'nonnegative'}, got {value}")
    return float(value)


def seed_sequence(seed) -> np.random.SeedSequence:
    """A fresh ``SeedSequence`` for ``seed``.

    Spawning advances a ``SeedSequence`` in place, so a passed-in sequence
    is rebuilt from its entropy and key; reusing a seed then always gives
    the same children.
    """
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
    return np.random.SeedSequence(seed)
