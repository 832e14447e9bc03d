"""Numerical max-convolution through p*-norms computed with FFT convolution.

For a unit-scaled problem the max-convolution at index m is the Chebyshev norm
of the product vector ``u[l] = L[l] * R[m - l]``. Its p*-norm raised to p* is
``(L**p * R**p)[m]``, a standard convolution, so all indices come out of one
FFT. Large p* tracks the maximum closely but underflows; the piecewise method
evaluates a ladder of p* values and keeps, per index, the largest one whose
convolution is still above the underflow tolerance.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import oracle
from .fft_engine import ConvolutionPlan
from .tensors import as_nonneg, check_same_rank

TAU = 1e-12
TAU_DIV = 1e-10

METHODS = ("naive", "fixed-pstar", "piecewise", "piecewise-affine", "projection", "projection-affine")


@dataclass(frozen=True)
class PStarLadder:
    """Ascending p* values evaluated by the piecewise drivers."""

    values: tuple[float, ...]
    interleaved: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size == 0 or np.any(v <= 0) or np.any(np.diff(v) <= 0):
            raise ValueError("ladder values must be positive and strictly ascending")

    @classmethod
    def powers_of_two(cls, pstar_max: float) -> "PStarLadder":
        """``2**0, 2**1, ..., 2**ceil(log2(pstar_max))``."""
        return _powers_of_two(_top_exponent(pstar_max))

    @classmethod
    def interleaved_powers(cls, pstar_max: float, start_exponent: int = 0) -> "PStarLadder":
        """Powers of two with the mean of each adjacent pair inserted.

        ``start_exponent=0`` gives 1, 1.5, 2, 3, 4, 6, 8, ...; ``-1`` prepends
        0.5, 0.75. Powers of two sit at even ladder indices, so any even index
        i >= 4 has entries i-4, i-2, i-1, i at maxP/4, maxP/2, 3maxP/4, maxP.
        """
        top = _top_exponent(pstar_max)
        if start_exponent > top:
            raise ValueError("start_exponent exceeds the top of the ladder")
        return _interleaved(start_exponent, top)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]


# ladders are immutable, so drivers called in a loop can share them
@functools.lru_cache(maxsize=None)
def _powers_of_two(top: int) -> PStarLadder:
    return PStarLadder(tuple(2.0 ** e for e in range(top + 1)), interleaved=False)


@functools.lru_cache(maxsize=None)
def _interleaved(start: int, top: int) -> PStarLadder:
    values = []
    for e in range(start, top + 1):
        values.append(2.0 ** e)
        if e < top:
            values.append(1.5 * 2.0 ** e)
    return PStarLadder(tuple(values), interleaved=True)


def _top_exponent(pstar_max: float) -> int:
    if not pstar_max >= 1:
        raise ValueError(f"pstar_max must be >= 1, got {pstar_max}")
    # tolerate float noise on exact powers of two
    return max(0, math.ceil(math.log2(pstar_max) - 1e-12))


@dataclass
class ContourAssignment:
    """Per-index choice of the largest underflow-stable ladder rung.

    `index` holds the ladder index, `witness` the convolution value
    ``||u||_p**p`` at that rung and `stable` is False where no rung cleared
    the tolerance (those indices fall back to rung 0).
    """

    index: np.ndarray
    witness: np.ndarray
    stable: np.ndarray

    def used(self) -> list[int]:
        return sorted(int(i) for i in np.unique(self.index))

    def members(self, rung: int) -> np.ndarray:
        """Flat result indices assigned to `rung`, ascending."""
        return np.flatnonzero(self.index.ravel() == rung)


@dataclass
class MaxConvResult:
    """Approximate max-convolution plus the diagnostics that produced it."""

    values: np.ndarray
    method: str
    contour: ContourAssignment | None = None
    ladder: PStarLadder | None = None
    scale: tuple[float, float] = (1.0, 1.0)
    raw: np.ndarray | None = None
    n_convolutions: int = 0
    n_exact_evaluations: int = 0

    @property
    def pstar(self) -> np.ndarray:
        """p* used at every index (the assigned rung's value)."""
        if self.contour is None or self.ladder is None:
            return np.full(self.values.shape, np.nan)
        return np.asarray(self.ladder.values)[self.contour.index]

    @property
    def stable(self) -> np.ndarray:
        if self.contour is None:
            return np.ones(self.values.shape, dtype=bool)
        return self.contour.stable


# ---------------------------------------------------------------------------
# parameter selection and error bounds


def select_pstar_max(k: int, tau: float = TAU) -> float:
    """Largest useful p*: ``log(k) / log(1 + tau**(1/4))``.

    Balances the top-contour bleed-in bound ``k**(1/p) - 1`` against the
    worst middle-contour bound at p* = 1, roughly ``sqrt(sqrt(tau))``.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    _check_unit_interval(tau, "tau")
    return math.log(k) / math.log1p(tau ** 0.25)


def pstar_mode_piecewise(k: int, tau: float = TAU) -> float:
    """p* maximising the middle-contour bound ``tau**(1/2p) (1 - k**(-1/p))``."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    _check_unit_interval(tau, "tau")
    lk = math.log2(k)
    lt = math.log2(tau)
    inner = -(2.0 * lk - lt) / lt
    if inner <= 0:
        raise ValueError("p*_mode undefined for these arguments")
    denom = math.log2(inner)
    if denom <= 0:
        raise ValueError("p*_mode undefined for these arguments")
    return lk / denom


def error_bound_fixed(k_m, pstar):
    """Worst-case scaled absolute error ``k_m**(1/p*) - 1`` at a stable p*."""
    k_m = np.asarray(k_m, dtype=float)
    if np.any(k_m < 1) or np.any(np.asarray(pstar) <= 0):
        raise ValueError("need k_m >= 1 and p* > 0")
    out = np.power(k_m, 1.0 / np.asarray(pstar, dtype=float)) - 1.0
    return float(out) if out.ndim == 0 else out


def error_bound_middle_contour(k_m, pstar, tau: float = TAU):
    """Scaled absolute error bound when the next rung underflows.

    ``tau**(1/(2 p*)) * (1 - k_m**(-1/p*))``.
    """
    _check_unit_interval(tau, "tau")
    k_m = np.asarray(k_m, dtype=float)
    p = np.asarray(pstar, dtype=float)
    if np.any(k_m < 1) or np.any(p <= 0):
        raise ValueError("need k_m >= 1 and p* > 0")
    out = np.power(tau, 1.0 / (2.0 * p)) * (1.0 - np.power(k_m, -1.0 / p))
    return float(out) if out.ndim == 0 else out


def _check_unit_interval(x: float, name: str) -> None:
    if not 0.0 < x < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {x}")


# ---------------------------------------------------------------------------
# building blocks


def scale_inputs(L, R):
    """Divide each operand by its maximum; returns (L', R', L_max, R_max)."""
    L = as_nonneg(L, "L")
    R = as_nonneg(R, "R")
    check_same_rank(L, R)
    lmax = float(L.max())
    rmax = float(R.max())
    if lmax == 0.0 or rmax == 0.0:
        raise ValueError("inputs must contain a strictly positive element")
    return L / lmax, R / rmax, lmax, rmax


def _check_unit_scaled(x: np.ndarray, name: str) -> None:
    if abs(float(x.max()) - 1.0) > 1e-12:
        raise ValueError(f"{name} must be scaled to maximum 1 (got {x.max()!r})")


def pstar_moments(Ls: np.ndarray, Rs: np.ndarray, pstar: float, plan: ConvolutionPlan | None = None):
    """``||u^(m)||_p**p`` for every m: FFT convolution of the p*-th powers.

    Negative round-off is clamped to zero.
    """
    plan = plan or ConvolutionPlan.for_arrays(Ls, Rs)
    with np.errstate(under="ignore"):
        vl = np.power(Ls, pstar)
        vr = np.power(Rs, pstar)
    out = plan.convolve(vl, vr)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite convolution at p*={pstar}")
    np.maximum(out, 0.0, out=out)
    return out


def max_convolve_given_pstar(Ls, Rs, pstar: float) -> np.ndarray:
    """Fixed-p* estimate ``(L'**p * R'**p) ** (1/p)`` on unit-scaled inputs.

    Parameters
    ----------
    Ls, Rs : array_like
        Nonnegative tensors of equal rank, each with maximum exactly 1.
    pstar : float
        Norm order, at least 0.5.
    """
    Ls = as_nonneg(Ls, "L'")
    Rs = as_nonneg(Rs, "R'")
    check_same_rank(Ls, Rs)
    if pstar < 0.5:
        raise ValueError(f"p* must be >= 0.5, got {pstar}")
    _check_unit_scaled(Ls, "L'")
    _check_unit_scaled(Rs, "R'")
    return np.power(pstar_moments(Ls, Rs, pstar), 1.0 / pstar)


def ladder_moments(Ls: np.ndarray, Rs: np.ndarray, ladder: PStarLadder) -> np.ndarray:
    """One FFT convolution per rung; row i holds ``||u||_p**p`` at ladder[i].

    All rungs go through a single batched transform. Negative round-off is
    clamped to zero.
    """
    plan = ConvolutionPlan.for_arrays(Ls, Rs)
    vl = _ladder_powers(Ls, ladder.values)
    vr = _ladder_powers(Rs, ladder.values)
    out = plan.convolve_batch(vl, vr)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite convolution on the p* ladder")
    np.maximum(out, 0.0, out=out)
    return out


def _ladder_powers(x: np.ndarray, values) -> np.ndarray:
    """Row i holds ``x ** values[i]``; a rung twice an earlier one is a squaring."""
    out = np.empty((len(values),) + x.shape)
    row = {}
    with np.errstate(under="ignore"):
        for i, p in enumerate(values):
            half = row.get(p / 2.0)
            if half is None:
                np.power(x, p, out=out[i])
            else:
                np.square(out[half], out=out[i])
            row[p] = i
    return out


def pick_rungs(stack: np.ndarray, index: np.ndarray) -> np.ndarray:
    """``stack[index[m], m]`` for every result index m."""
    flat = stack.reshape(stack.shape[0], -1)
    return flat[index.ravel(), np.arange(flat.shape[1])].reshape(index.shape)


def assign_contours(moments: Sequence[np.ndarray], tau: float = TAU) -> ContourAssignment:
    """Largest rung i with ``moments[i][m] >= tau`` at every m.

    Indices where no rung is stable get rung 0 and ``stable=False``.
    """
    stack = np.asarray(moments)
    ok = stack >= tau
    n = stack.shape[0]
    top = n - 1 - np.argmax(ok[::-1], axis=0)
    stable = ok.any(axis=0)
    index = np.where(stable, top, 0)
    witness = pick_rungs(stack, index)
    return ContourAssignment(index=index, witness=witness, stable=stable)


def norms_at_rungs(moments: Sequence[np.ndarray], ladder: PStarLadder) -> list[np.ndarray]:
    return [np.power(m, 1.0 / p) for m, p in zip(moments, ladder.values)]


def select_by_contour(per_rung: Sequence[np.ndarray], contour: ContourAssignment) -> np.ndarray:
    stack = np.stack(per_rung)
    return pick_rungs(stack, contour.index)


def affine_correct(
    approx: Sequence[np.ndarray] | np.ndarray,
    contour: ContourAssignment,
    exact_at: Callable,
    exact_batch: Callable | None = None,
) -> tuple[np.ndarray, int]:
    """Remap every contour affinely through exact values at its extreme indices.

    `approx` is either the per-rung list of estimates (the value at index m is
    read from the rung assigned to m) or one array already holding those
    values. Within a contour the anchors are the indices of the smallest and
    largest approximate value, lowest index first on ties. `exact_at` gets an
    int for vectors and a tuple for tensors. `exact_batch`, if given, maps an
    array of flat indices to their exact values in one call and is used
    instead.

    Returns the corrected values and the number of `exact_at` calls.
    """
    if isinstance(approx, np.ndarray):
        x_all = approx
    else:
        x_all = select_by_contour(approx, contour)
    shape = x_all.shape
    x_flat = x_all.ravel()
    rung_flat = contour.index.ravel()
    out = np.array(x_flat, copy=True)

    def call(flat_idx: int) -> float:
        if len(shape) == 1:
            return float(exact_at(int(flat_idx)))
        return float(exact_at(np.unravel_index(flat_idx, shape)))

    # group members by rung; the stable sort keeps each group in index order
    order = np.argsort(rung_flat, kind="stable")
    sorted_rungs = rung_flat[order]
    starts = np.flatnonzero(np.concatenate(([True], sorted_rungs[1:] != sorted_rungs[:-1])))
    sizes = np.diff(np.append(starts, order.size))
    group = np.repeat(np.arange(starts.size), sizes)
    xs = x_flat[order]
    lows = _first_in_group(xs == np.minimum.reduceat(xs, starts)[group], group, starts.size)
    highs = _first_in_group(xs == np.maximum.reduceat(xs, starts)[group], group, starts.size)
    m_min, m_max = order[lows], order[highs]
    same = m_min == m_max
    anchors = np.concatenate((m_min, m_max[~same]))
    if exact_batch is not None:
        y = np.asarray(exact_batch(anchors), dtype=float)
    else:
        y = np.array([call(i) for i in anchors], dtype=float)
    evals = int(anchors.size)
    y_min = y[:starts.size]
    y_max = y_min.copy()
    y_max[~same] = y[starts.size:]
    x_min, x_max = x_flat[m_min], x_flat[m_max]
    spread = x_max > x_min
    lifted = x_max > 0
    slope = np.where(spread, (y_max - y_min) / np.where(spread, x_max - x_min, 1.0),
                     np.where(lifted, y_max / np.where(lifted, x_max, 1.0), 0.0))
    # a contour whose estimates all underflowed to zero maps to its exact value
    bias = np.where(spread, y_min - slope * x_min, np.where(lifted, 0.0, y_max))
    out[order] = xs * slope[group] + bias[group]
    # the affine map reproduces the anchors only up to rounding
    out[m_min], out[m_max] = y_min, y_max
    np.maximum(out, 0.0, out=out)
    return out.reshape(shape), evals


def _first_in_group(hit: np.ndarray, group: np.ndarray, n_groups: int) -> np.ndarray:
    """Position of the first True of `hit` within each consecutive group."""
    pos = np.flatnonzero(hit)
    return pos[np.searchsorted(group[pos], np.arange(n_groups))]


def _exact_batch(Ls: np.ndarray, Rs: np.ndarray) -> Callable | None:
    if Ls.ndim == 1:
        return lambda ms: oracle.max_convolution_at_indices(Ls, Rs, ms)
    return None


def _exact_evaluator(Ls: np.ndarray, Rs: np.ndarray) -> Callable:
    if Ls.ndim == 1:
        return lambda m: oracle.max_convolution_at_index(Ls, Rs, m)
    return lambda idx: oracle.max_convolution_at_index_nd(Ls, Rs, idx)


def default_pstar_max(shape_l, shape_r, tau: float = TAU) -> float:
    """`select_pstar_max` for the size of the full result."""
    size = int(np.prod([p + q - 1 for p, q in zip(shape_l, shape_r)]))
    return select_pstar_max(max(size, 2), tau)


# ---------------------------------------------------------------------------
# drivers


def _piecewise(L, R, pstar_max, tau, affine: bool) -> MaxConvResult:
    Ls, Rs, lmax, rmax = scale_inputs(L, R)
    if pstar_max is None:
        pstar_max = default_pstar_max(Ls.shape, Rs.shape, tau)
    ladder = PStarLadder.powers_of_two(pstar_max)
    moments = ladder_moments(Ls, Rs, ladder)
    contour = assign_contours(moments, tau)
    p_used = np.asarray(ladder.values)[contour.index]
    raw = np.power(contour.witness, 1.0 / p_used)
    evals = 0
    if affine:
        scaled, evals = affine_correct(raw, contour, _exact_evaluator(Ls, Rs), _exact_batch(Ls, Rs))
        method = "piecewise-affine"
    else:
        scaled = raw
        method = "piecewise"
    return MaxConvResult(
        values=lmax * rmax * scaled,
        method=method,
        contour=contour,
        ladder=ladder,
        scale=(lmax, rmax),
        raw=raw,
        n_convolutions=len(moments),
        n_exact_evaluations=evals,
    )


def piecewise_max_convolve(L, R, pstar_max: float | None = None, tau: float = TAU) -> MaxConvResult:
    """Piecewise numerical max-convolution on the ladder 1, 2, 4, ..., 2**ceil(log2 p*_max).

    `pstar_max` defaults to `select_pstar_max` for the result size.
    """
    return _piecewise(L, R, pstar_max, tau, affine=False)


def piecewise_affine_max_convolve(L, R, pstar_max: float | None = None, tau: float = TAU) -> MaxConvResult:
    """Piecewise method followed by per-contour affine correction.

    Two exact O(k) evaluations per contour anchor the correction, so the
    asymptotic cost is unchanged.
    """
    return _piecewise(L, R, pstar_max, tau, affine=True)


def fixed_pstar_max_convolve(L, R, pstar: float = 8.0) -> MaxConvResult:
    """Single-p* method on unscaled inputs (scales, convolves, rescales)."""
    Ls, Rs, lmax, rmax = scale_inputs(L, R)
    est = max_convolve_given_pstar(Ls, Rs, pstar)
    ladder = PStarLadder((float(pstar),))
    contour = ContourAssignment(
        index=np.zeros(est.shape, dtype=int),
        witness=np.power(est, pstar),
        stable=np.power(est, pstar) >= TAU,
    )
    return MaxConvResult(
        values=lmax * rmax * est,
        method="fixed",
        contour=contour,
        ladder=ladder,
        scale=(lmax, rmax),
        raw=est,
        n_convolutions=1,
    )


def max_convolve_nd(L, R, method: str = "piecewise-affine", pstar_max: float | None = None, tau: float = TAU):
    """Max-convolution of equal-rank tensors with any of the numerical methods.

    The pipeline is the vector one; the p*-norm of each overlap tensor is its
    entrywise (Frobenius-type) norm, which a tensor FFT convolution produces.
    """
    L = as_nonneg(L, "L")
    R = as_nonneg(R, "R")
    check_same_rank(L, R)
    return max_convolve(L, R, method=method, pstar_max=pstar_max, tau=tau)


def max_convolve(L, R, method: str = "piecewise-affine", pstar_max: float | None = None,
                 tau: float = TAU, tau_div: float = TAU_DIV, pstar: float = 8.0) -> MaxConvResult:
    """Dispatch to one of the numerical methods, or to the exact oracle."""
    if method == "naive":
        L = as_nonneg(L, "L")
        R = as_nonneg(R, "R")
        check_same_rank(L, R)
        if L.ndim == 1:
            vals = oracle.naive_max_convolve(L, R)
        else:
            vals = oracle.naive_max_convolve_nd(L, R)
        return MaxConvResult(values=vals, method="naive")
    if method in ("fixed", "fixed-pstar"):
        return fixed_pstar_max_convolve(L, R, pstar)
    if method == "piecewise":
        return piecewise_max_convolve(L, R, pstar_max, tau)
    if method == "piecewise-affine":
        return piecewise_affine_max_convolve(L, R, pstar_max, tau)
    if method in ("projection", "projection-affine"):
        from .projection import projection_max_convolve

        return projection_max_convolve(L, R, 64.0 if pstar_max is None else pstar_max, tau, tau_div,
                                       affine=method == "projection-affine")
    raise ValueError(f"unknown method {method!r}")



@dataclass
class DeconvolutionResult:
    values: np.ndarray
    unstable: bool


def max_deconvolve(M, L, pstar: float, tau_div: float = TAU_DIV) -> DeconvolutionResult:
    """Approximately solve ``M = L (max-conv) R`` for R at a fixed p*.

    Divides the transform of ``M**p`` by that of the zero-padded ``L**p`` and
    inverts. Division is far less forgiving than multiplication: any
    frequency where the denominator magnitude drops below `tau_div` sets
    ``unstable`` (those frequencies are zeroed rather than divided).
    """
    M = as_nonneg(M, "M", ndim=1)
    L = as_nonneg(L, "L", ndim=1)
    if len(M) < len(L):
        raise ValueError("M must be at least as long as L")
    if pstar <= 0:
        raise ValueError("p* must be positive")
    mmax, lmax = float(M.max()), float(L.max())
    if mmax == 0.0 or lmax == 0.0:
        raise ValueError("inputs must contain a strictly positive element")
    n = len(M)
    with np.errstate(under="ignore"):
        fm = np.fft.rfft(np.power(M / mmax, pstar), n)
        fl = np.fft.rfft(np.power(L / lmax, pstar), n)
    small = np.abs(fl) < tau_div
    ratio = np.zeros_like(fm)
    np.divide(fm, fl, out=ratio, where=~small)
    rp = np.fft.irfft(ratio, n)[: n - len(L) + 1]
    np.maximum(rp, 0.0, out=rp)
    values = (mmax / lmax) * np.power(rp, 1.0 / pstar)
    return DeconvolutionResult(values=values, unstable=bool(small.any()))
