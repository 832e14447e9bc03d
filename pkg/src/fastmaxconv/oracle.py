"""Exact quadratic-time max-convolution.

These routines are the reference everything else is checked against, and
`max_convolution_at_index` doubles as the exact anchor evaluator used by the
affine contour correction.
"""

from __future__ import annotations

import itertools

import numpy as np

from .tensors import as_nonneg, check_same_rank, full_shape

# target number of products per skewed block in naive_max_convolve
_BLOCK_ELEMENTS = 1 << 17
# cap on rows per block; the padding wastes about rows/len(L) of the work
_MAX_BLOCK_ROWS = 32


def naive_max_convolve(L, R) -> np.ndarray:
    """Exact max-convolution ``M[m] = max_l L[l] * R[m - l]``.

    Runs in O(len(L) * len(R)). The products are formed block by block and
    reduced along anti-diagonals through a skewed reshape, so the work stays
    in numpy without ever materialising the full outer product.

    Parameters
    ----------
    L, R : array_like
        Nonempty nonnegative vectors.

    Returns
    -------
    ndarray
        Vector of length ``len(L) + len(R) - 1``.
    """
    L = as_nonneg(L, "L", ndim=1)
    R = as_nonneg(R, "R", ndim=1)
    if len(L) < len(R):
        L, R = R, L
    n, q = len(L), len(R)
    out = np.zeros(n + q - 1)
    block = max(1, min(q, _BLOCK_ELEMENTS // n, _MAX_BLOCK_ROWS))
    # row i of `padded` lands shifted right by i after the reshape below; the
    # trailing zero columns are written once and never touched again
    padded = np.zeros((block, n + block))
    for start in range(0, q, block):
        rows = R[start:start + block]
        b = len(rows)
        width = n + b
        buf = padded[:b] if b == block else np.zeros((b, width))
        np.multiply(rows[:, None], L[None, :], out=buf[:, :n])
        skew = buf.ravel()[: b * (width - 1)].reshape(b, width - 1)
        seg = skew.max(axis=0)
        np.maximum(out[start:start + width - 1], seg, out=out[start:start + width - 1])
    return out


def max_convolution_at_index(L, R, m: int) -> float:
    """Exact max-convolution value at a single result index in O(k_m)."""
    L = np.asarray(L, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    size = len(L) + len(R) - 1
    if not 0 <= m < size:
        raise ValueError(f"index {m} out of range for result length {size}")
    lo = max(0, m - len(R) + 1)
    hi = min(m, len(L) - 1)
    # L[lo..hi] pairs with R[m-lo .. m-hi], i.e. R read backwards
    left = L[lo:hi + 1]
    right = R[m - hi:m - lo + 1][::-1]
    return float(np.max(left * right))


def max_convolution_at_indices(L, R, ms) -> np.ndarray:
    """`max_convolution_at_index` for many result indices in one gather.

    Rows are processed in chunks so the padded product block stays near
    ``_BLOCK_ELEMENTS`` entries.
    """
    L = np.asarray(L, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    ms = np.asarray(ms, dtype=np.int64).ravel()
    size = len(L) + len(R) - 1
    if ms.size and (ms.min() < 0 or ms.max() >= size):
        raise ValueError(f"index out of range for result length {size}")
    out = np.empty(ms.size)
    lo_all = np.maximum(0, ms - len(R) + 1)
    hi_all = np.minimum(ms, len(L) - 1)
    width = int((hi_all - lo_all).max(initial=0)) + 1
    step = max(1, _BLOCK_ELEMENTS // width)
    j = np.arange(width)
    for start in range(0, ms.size, step):
        sl = slice(start, start + step)
        lo, hi, m = lo_all[sl, None], hi_all[sl, None], ms[sl, None]
        li = np.minimum(lo + j, hi)
        # padding repeats the last valid pair, which leaves the max unchanged
        out[sl] = (L[li] * R[m - li]).max(axis=1)
    return out


def max_convolution_at_index_nd(L, R, index) -> float:
    """Exact value at one cell of a tensor max-convolution, O(k_m)."""
    L = np.asarray(L, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    index = tuple(int(i) for i in index)
    if len(index) != L.ndim:
        raise ValueError("index rank does not match tensor rank")
    left_sl, right_sl = [], []
    for m, p, q in zip(index, L.shape, R.shape):
        if not 0 <= m < p + q - 1:
            raise ValueError(f"index {index} out of range")
        lo = max(0, m - q + 1)
        hi = min(m, p - 1)
        left_sl.append(slice(lo, hi + 1))
        right_sl.append(slice(m - hi, m - lo + 1))
    right = np.flip(R[tuple(right_sl)])
    return float(np.max(L[tuple(left_sl)] * right))


def naive_max_convolve_nd(L, R) -> np.ndarray:
    """Exact tensor max-convolution in O(|L| * |R|).

    Every cell of the smaller operand scales a shifted copy of the other one,
    and the copies are folded together with an elementwise maximum.
    """
    L = as_nonneg(L, "L")
    R = as_nonneg(R, "R")
    check_same_rank(L, R)
    if L.size < R.size:
        L, R = R, L
    out = np.zeros(full_shape(L.shape, R.shape))
    for idx in itertools.product(*(range(e) for e in R.shape)):
        w = R[idx]
        if w == 0.0:
            continue
        target = tuple(slice(i, i + e) for i, e in zip(idx, L.shape))
        np.maximum(out[target], w * L, out=out[target])
    return out
