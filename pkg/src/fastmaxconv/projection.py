"""Chebyshev-norm estimation from evenly spaced p-norm moments.

If ``u`` held only two distinct values a > b, the moments
``e_i = sum(u**(i*s))`` for i = 1..4 would satisfy a linear recurrence whose
characteristic quadratic ``g0 + g1 x + g2 x**2`` has roots ``a**s`` and
``b**s``. For general ``u`` the same quadratic (its coefficients span the
null space of the 2x3 Hankel matrix of moments) still gives a root close to
``max(u)**s``; empirically the ratio of that root to the true value stays in
(0.7, 1], so the relative error after the ``1/s`` root is at most
``1 - 0.7**(1/s)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pnorm import (
    TAU,
    TAU_DIV,
    MaxConvResult,
    PStarLadder,
    _check_unit_interval,
    _exact_batch,
    _exact_evaluator,
    affine_correct,
    assign_contours,
    ContourAssignment,
    ladder_moments,
    pick_rungs,
    scale_inputs,
)

# 0.7 is the conjectured floor of the root ratio
T_FLOOR = 0.7


@dataclass(frozen=True)
class MomentQuartet:
    """``est_i = ||u||_{i s} ** (i s)`` for i = 1..4 at spacing ``s``."""

    est1: float
    est2: float
    est3: float
    est4: float
    spacing: float

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if min(self.est1, self.est2, self.est3, self.est4) < 0:
            raise ValueError("moments must be nonnegative")

    @classmethod
    def from_vector(cls, u, spacing: float = 1.0) -> "MomentQuartet":
        u = np.asarray(u, dtype=float)
        with np.errstate(under="ignore"):
            e = [float(np.sum(u ** (i * spacing))) for i in range(1, 5)]
        return cls(*e, spacing=spacing)


@dataclass(frozen=True)
class GammaCoefficients:
    gamma0: float
    gamma1: float
    gamma2: float


def gamma_from_moments(q: MomentQuartet) -> GammaCoefficients:
    g2, g1, g0 = _gammas(q.est1, q.est2, q.est3, q.est4)
    return GammaCoefficients(gamma0=float(g0), gamma1=float(g1), gamma2=float(g2))


def _gammas(e1, e2, e3, e4):
    g2 = e1 * e3 - e2 * e2
    g1 = e2 * e3 - e1 * e4
    g0 = e2 * e4 - e3 * e3
    return g2, g1, g0


def _linear_root(e3, e4, tau_div):
    e3 = np.asarray(e3, dtype=float)
    e4 = np.asarray(e4, dtype=float)
    ok = np.abs(e3) > tau_div
    safe = np.where(ok, e3, 1.0)
    return np.where(ok, e4 / safe, e4)


def _quadratic_root(e1, e2, e3, e4, tau_div):
    """Larger root of the moment quadratic, or the linear ratio where unstable."""
    g2, g1, g0 = _gammas(*(np.asarray(e, dtype=float) for e in (e1, e2, e3, e4)))
    pre = g1 * g1 - 4.0 * g2 * g0
    ok = (g2 > tau_div) & (pre >= 0.0)
    denom = np.where(ok, 2.0 * g2, 1.0)
    quad = (-g1 + np.sqrt(np.where(ok, pre, 0.0))) / denom
    return np.where(ok, quad, _linear_root(e3, e4, tau_div)), ok


def max_lin(est3: float, est4: float, spacing: float, tau_div: float = TAU_DIV) -> float:
    """``(est4 / est3) ** (1/spacing)``, or ``est4 ** (1/spacing)`` if est3 ~ 0."""
    if est3 < 0 or est4 < 0:
        raise ValueError("moments must be nonnegative")
    return float(_linear_root(est3, est4, tau_div) ** (1.0 / spacing))


def max_quad(q: MomentQuartet, tau_div: float = TAU_DIV) -> float:
    """Projected maximum from four evenly spaced moments.

    Takes the larger root of ``g0 + g1 x + g2 x**2`` (``g2 >= 0`` for moments
    of any real vector, so the ``+sqrt`` branch is the larger one) and raises
    it to ``1/spacing``. Falls back to `max_lin` when ``g2 <= tau_div`` or the
    discriminant is negative.
    """
    x, _ = _quadratic_root(q.est1, q.est2, q.est3, q.est4, tau_div)
    return float(np.power(x, 1.0 / q.spacing))


def t_ratio(v, spacing: float = 1.0, tau_div: float = TAU_DIV) -> float:
    """Quadratic-root value for the moments of a unit-scaled vector.

    Since ``max(v) == 1`` this is the ratio of the projected estimate to the
    true maximum before the final root is taken. Vectors with a single
    distinct value leave the quadratic undefined and return 1.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("v must be a nonempty vector")
    if abs(float(v.max()) - 1.0) > 1e-12 or float(v.min()) < 0:
        raise ValueError("v must be nonnegative with maximum 1")
    q = MomentQuartet.from_vector(v, spacing)
    x, ok = _quadratic_root(q.est1, q.est2, q.est3, q.est4, tau_div)
    return float(x) if bool(ok) else 1.0


def t_ratios(V, spacing: float = 1.0, counts=None, tau_div: float = TAU_DIV) -> np.ndarray:
    """`t_ratio` for every row of `V` at once.

    Rows must be nonnegative with maximum 1; degenerate rows give 1.
    `counts`, if given, holds the multiplicity of each column, so a long
    vector with few distinct values can be passed compactly.
    """
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[1] == 0:
        raise ValueError("V must be a nonempty 2-D array")
    if np.any(np.abs(V.max(axis=1) - 1.0) > 1e-12) or V.min() < 0:
        raise ValueError("rows must be nonnegative with maximum 1")
    w = np.ones(V.shape[1]) if counts is None else np.asarray(counts, dtype=float)
    if w.shape != (V.shape[1],) or np.any(w <= 0):
        raise ValueError("counts must be positive, one per column")
    with np.errstate(under="ignore"):
        e = [(V ** (i * spacing)) @ w for i in range(1, 5)]
    x, ok = _quadratic_root(*e, tau_div)
    return np.where(ok, x, 1.0)


def projection_pstar_max_for_error(eps: float) -> float:
    """Top rung needed for a top-contour relative error of `eps`.

    Solves ``1 - 0.7**(4/p) = eps``.
    """
    # 1 - T_FLOOR is 0.30000000000000004 in binary, so spell the limit out
    if not 0.0 < eps < 0.3:
        raise ValueError(f"eps must lie in (0, 0.3), got {eps}")
    return 4.0 * math.log(T_FLOOR) / math.log1p(-eps)


def projection_error_bound(pstar, tau: float = TAU):
    """Absolute error bound ``tau**(1/(2p)) * (1 - 0.7**(4/p))`` on the scaled problem."""
    p = np.asarray(pstar, dtype=float)
    out = np.power(tau, 1.0 / (2.0 * p)) * (1.0 - np.power(T_FLOOR, 4.0 / p))
    return float(out) if out.ndim == 0 else out


def projection_error_mode(tau: float = TAU) -> float:
    """p* at which `projection_error_bound` peaks (about 14.52 for tau = 1e-12)."""
    _check_unit_interval(tau, "tau")
    lt = math.log(tau)
    inner = 1.0 - 2.8534 / lt
    if inner <= 1.0:
        raise ValueError("tau outside the domain of the closed form")
    return (1.4267 * lt - 4.07094) / ((lt - 2.8534) * math.log(inner))


def projection_max_convolve(L, R, pstar_max: float = 64.0, tau: float = TAU,
                            tau_div: float = TAU_DIV, affine: bool = True) -> MaxConvResult:
    """Piecewise max-convolution with null-space projection at every index.

    The ladder interleaves powers of two with their midpoints. Each index is
    assigned its largest stable rung, rounded down to a power of two maxP.
    From maxP = 4 upward the moments at maxP/4, maxP/2, 3maxP/4 and maxP feed
    the quadratic projection; at maxP = 2 the linear projection uses the
    rungs 1.5 and 2; indices stuck at p* = 1 keep the plain 1-norm. Estimates
    are clamped to [0, 1] and, with `affine`, corrected per contour.
    """
    Ls, Rs, lmax, rmax = scale_inputs(L, R)
    ladder = PStarLadder.interleaved_powers(pstar_max)
    moments = ladder_moments(Ls, Rs, ladder)
    base = assign_contours(moments, tau)
    rung = base.index - base.index % 2
    stack = moments
    values = np.asarray(ladder.values)

    def at(offset):
        return pick_rungs(stack, np.maximum(rung - offset, 0))

    max_p = values[rung]
    spacing = max_p / 4.0
    e4, e3, e2, e1 = at(0), at(1), at(2), at(4)
    quad, _ = _quadratic_root(e1, e2, e3, e4, tau_div)
    lin = _linear_root(e3, e4, tau_div)
    x = np.where(rung >= 4, quad, np.where(rung >= 2, lin, e4))
    exponent = np.where(rung >= 2, 1.0 / spacing, 1.0 / max_p)
    with np.errstate(under="ignore"):
        est = np.power(np.maximum(x, 0.0), exponent)
    np.clip(est, 0.0, 1.0, out=est)

    contour = ContourAssignment(
        index=rung,
        witness=pick_rungs(stack, rung),
        stable=base.stable,
    )
    evals = 0
    if affine:
        scaled, evals = affine_correct(est, contour, _exact_evaluator(Ls, Rs), _exact_batch(Ls, Rs))
    else:
        scaled = est
    return MaxConvResult(
        values=lmax * rmax * scaled,
        method="projection-affine" if affine else "projection",
        contour=contour,
        ladder=ladder,
        scale=(lmax, rmax),
        raw=est,
        n_convolutions=len(moments),
        n_exact_evaluations=evals,
    )
