"""Fast numerical max-convolution through p*-norms and FFT convolution."""

from .fft_engine import ConvolutionPlan, fft_convolve, fft_convolve_nd
from .hmm import (
    AdditiveHmmModel,
    BinnedSeries,
    compare_paths,
    discretize,
    estimate_empirical_model,
    viterbi_additive,
)
from .oracle import (
    max_convolution_at_index,
    max_convolution_at_index_nd,
    naive_max_convolve,
    naive_max_convolve_nd,
)
from .pnorm import (
    TAU,
    TAU_DIV,
    ContourAssignment,
    MaxConvResult,
    PStarLadder,
    affine_correct,
    error_bound_fixed,
    error_bound_middle_contour,
    fixed_pstar_max_convolve,
    max_convolve,
    max_convolve_nd,
    max_deconvolve,
    piecewise_affine_max_convolve,
    piecewise_max_convolve,
    pstar_mode_piecewise,
    select_pstar_max,
)
from .projection import (
    max_lin,
    max_quad,
    projection_error_mode,
    projection_max_convolve,
    projection_pstar_max_for_error,
    t_ratio,
    t_ratios,
)

__version__ = "0.1.0"
