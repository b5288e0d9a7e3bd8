"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def as_float_array(x, name: str, length: int | None = None) -> np.ndarray:
    """Coerce to a 1-D float array, optionally checking its length."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if length is not None and len(arr) != length:
        raise ValueError(f"{name} must have length {length}, got {len(arr)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_length(*named_arrays: tuple[str, np.ndarray]) -> int:
    lengths = {name: len(arr) for name, arr in named_arrays}
    if len(set(lengths.values())) != 1:
        raise ValueError(f"length mismatch: {lengths}")
    return next(iter(lengths.values()))


def check_strict_bounds(lo, hi, name: str) -> None:
    """Require lo < hi elementwise (degenerate bounds are rejected)."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape:
        raise ValueError(f"{name}: bound shapes differ, {lo.shape} vs {hi.shape}")
    if np.any(lo >= hi):
        bad = int(np.argmax(lo >= hi))
        raise ValueError(f"{name}: degenerate bounds at index {bad} (lo={lo[bad]}, hi={hi[bad]})")


def check_positive(value: float, name: str) -> None:
    if value <= 0:
        raise ValueError(f"{name} must be strictly positive, got {value}")
