"""Input validation helpers used by the estimator-facing surfaces."""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch


def as_float_vector(x, length: int | None = None, name: str = "x") -> np.ndarray:
    """Coerce to a 1-D float64 array, optionally enforcing its length."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeMismatch(f"{name}: expected 1-D vector, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ShapeMismatch(f"{name}: expected length {length}, got {arr.shape[0]}")
    return arr


def as_float_matrix(x, cols: int | None = None, name: str = "X") -> np.ndarray:
    """Coerce to a 2-D float64 array, optionally enforcing the column count."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name}: expected 2-D matrix, got shape {arr.shape}")
    if cols is not None and arr.shape[1] != cols:
        raise ShapeMismatch(f"{name}: expected {cols} columns, got {arr.shape[1]}")
    return arr


def check_unit_vector(v: np.ndarray, tol: float = 1e-9, name: str = "v") -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > tol:
        raise ShapeMismatch(f"{name}: expected unit norm, got {norm!r}")
    return v


def check_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
