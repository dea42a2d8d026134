"""Input checks and small numeric helpers used across modules."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError, InvalidDataError, ShapeMismatchError


def as_matrix(x, name: str = "weights") -> np.ndarray:
    """Return ``x`` as a finite, non-empty 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidArgumentError(f"{name} is empty")
    check_finite(arr, name)
    return arr


def as_vector(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise InvalidArgumentError(f"{name} is empty")
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise InvalidDataError(f"{name} contains NaN or Inf")


def check_matvec_shapes(shape: tuple[int, int], n: int) -> None:
    if shape[1] != n:
        raise ShapeMismatchError(f"matrix has {shape[1]} columns, vector has {n} entries")


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero.

    Uses ``x - trunc(x)``, which is exact in floating point, so values just
    below a tie (e.g. 0.49999999999999994) are not pushed over it.
    """
    x = np.asarray(x, dtype=np.float64)
    whole = np.trunc(x)
    frac = x - whole
    return whole + np.where(np.abs(frac) >= 0.5, np.sign(frac), 0.0)
