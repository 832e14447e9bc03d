"""Validation helpers for the nonnegative tensors every routine consumes."""

from __future__ import annotations

import numpy as np


def as_nonneg(x, name: str = "input", ndim: int | None = None) -> np.ndarray:
    """Return `x` as a float64 array after checking it is a valid nonnegative tensor.

    Raises ``ValueError`` for empty arrays, non-finite entries, negative entries,
    or a rank different from `ndim` (when given).
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must have rank {ndim}, got rank {arr.ndim}")
    if arr.size == 0 or 0 in arr.shape:
        raise ValueError(f"{name} must be nonempty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if np.any(arr < 0):
        raise ValueError(f"{name} contains negative values")
    return arr


def check_same_rank(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim != b.ndim:
        raise ValueError(f"rank mismatch: {a.ndim} vs {b.ndim}")


def full_shape(a_shape, b_shape) -> tuple[int, ...]:
    """Extent of a full (linear) convolution along every axis."""
    return tuple(int(p) + int(q) - 1 for p, q in zip(a_shape, b_shape))


def overlap_counts(a_shape, b_shape) -> np.ndarray:
    """Number of aligned products ``k_m`` contributing to each result cell.

    Along one axis the count at index m is ``min(m, p-1) - max(0, m-q+1) + 1``;
    across axes the counts multiply.
    """
    counts = np.ones((), dtype=np.int64)
    for p, q in zip(a_shape, b_shape):
        m = np.arange(p + q - 1)
        c = np.minimum(m, p - 1) - np.maximum(0, m - q + 1) + 1
        counts = np.multiply.outer(counts, c)
    return counts
