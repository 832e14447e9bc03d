"""Real-valued linear convolution of vectors and tensors through the FFT."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .tensors import full_shape


@dataclass(frozen=True)
class ConvolutionPlan:
    """Transform extents for convolving tensors of two fixed shapes.

    The plan only records shapes; scipy keeps its own twiddle caches, so a
    plan reused on same-shaped inputs gives bit-identical results to a fresh
    one.
    """

    shape_a: tuple[int, ...]
    shape_b: tuple[int, ...]
    out_shape: tuple[int, ...] = field(init=False)
    fft_shape: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if len(self.shape_a) != len(self.shape_b):
            raise ValueError(f"rank mismatch: {len(self.shape_a)} vs {len(self.shape_b)}")
        if any(e < 1 for e in self.shape_a + self.shape_b):
            raise ValueError("all extents must be positive")
        out = full_shape(self.shape_a, self.shape_b)
        object.__setattr__(self, "out_shape", out)
        object.__setattr__(
            self, "fft_shape", tuple(sfft.next_fast_len(e, real=True) for e in out)
        )

    @classmethod
    def for_arrays(cls, a: np.ndarray, b: np.ndarray) -> "ConvolutionPlan":
        return cls(tuple(a.shape), tuple(b.shape))

    def convolve(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Full linear convolution of `a` and `b`.

        Small negative round-off is left in place; callers decide whether to
        clamp.
        """
        if a.shape != self.shape_a or b.shape != self.shape_b:
            raise ValueError("array shapes do not match the plan")
        axes = tuple(range(len(self.fft_shape)))
        fa = sfft.rfftn(a, s=self.fft_shape, axes=axes)
        fb = sfft.rfftn(b, s=self.fft_shape, axes=axes)
        full = sfft.irfftn(fa * fb, s=self.fft_shape, axes=axes)
        return full[tuple(slice(0, e) for e in self.out_shape)]

    def convolve_batch(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Convolve ``a[i]`` with ``b[i]`` for every i along a leading batch axis.

        One transform call covers the whole batch, which matters when the
        individual convolutions are small.
        """
        if a.shape[1:] != self.shape_a or b.shape[1:] != self.shape_b or len(a) != len(b):
            raise ValueError("array shapes do not match the plan")
        axes = tuple(range(1, len(self.fft_shape) + 1))
        fa = sfft.rfftn(a, s=self.fft_shape, axes=axes)
        fb = sfft.rfftn(b, s=self.fft_shape, axes=axes)
        full = sfft.irfftn(fa * fb, s=self.fft_shape, axes=axes)
        return full[(slice(None),) + tuple(slice(0, e) for e in self.out_shape)]


def _as_finite(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.size == 0:
        raise ValueError(f"{name} must be nonempty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def fft_convolve(a, b) -> np.ndarray:
    """Linear convolution of two real vectors, length ``len(a) + len(b) - 1``."""
    a = _as_finite(a, "a")
    b = _as_finite(b, "b")
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("fft_convolve expects vectors; use fft_convolve_nd for tensors")
    return ConvolutionPlan.for_arrays(a, b).convolve(a, b)


def fft_convolve_nd(a, b) -> np.ndarray:
    """Linear convolution of two real tensors of equal rank."""
    a = _as_finite(a, "a")
    b = _as_finite(b, "b")
    return ConvolutionPlan.for_arrays(a, b).convolve(a, b)

