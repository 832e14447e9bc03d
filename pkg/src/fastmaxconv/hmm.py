"""Viterbi decoding for HMMs with additive (Toeplitz) transitions.

When ``Pr(X[i+1] = a | X[i] = b)`` depends only on ``a - b`` the transition
step of the Viterbi recurrence is a max-convolution of the running message
with the transition kernel, so any of the numerical max-convolution methods
can stand in for the O(k**2) inner loop.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import oracle
from .pnorm import max_convolve


@dataclass
class AdditiveHmmModel:
    """Prior (k,), likelihood (a, k) indexed ``[observation bin, state]`` and
    transition kernel delta (2k-1,) with zero displacement at offset k-1."""

    prior: np.ndarray
    likelihood: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        self.prior = np.asarray(self.prior, dtype=float)
        self.likelihood = np.atleast_2d(np.asarray(self.likelihood, dtype=float))
        self.delta = np.asarray(self.delta, dtype=float)
        k = self.prior.shape[0]
        if self.prior.ndim != 1 or k < 1:
            raise ValueError("prior must be a nonempty vector")
        if self.delta.shape != (2 * k - 1,):
            raise ValueError(f"delta must have length 2k-1 = {2 * k - 1}")
        if self.likelihood.ndim != 2 or self.likelihood.shape[1] != k:
            raise ValueError(f"likelihood must have shape (bins, {k})")
        for name, arr in (("prior", self.prior), ("likelihood", self.likelihood), ("delta", self.delta)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"{name} must be finite and nonnegative")
        if self.prior.max() <= 0 or self.delta.max() <= 0:
            raise ValueError("prior and delta need a positive entry")
        if np.any(self.likelihood.max(axis=1) <= 0):
            raise ValueError("every likelihood row needs a positive entry")

    @property
    def n_states(self) -> int:
        return self.prior.shape[0]

    @property
    def n_bins(self) -> int:
        return self.likelihood.shape[0]

    def transition_matrix(self) -> np.ndarray:
        """Dense Toeplitz matrix ``T[a, b] = delta[a - b + k - 1]``."""
        k = self.n_states
        a = np.arange(k)
        return self.delta[a[:, None] - a[None, :] + k - 1]


@dataclass
class BinnedSeries:
    bins: int
    edges: np.ndarray
    indices: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def __len__(self) -> int:
        return len(self.indices)

    def head(self, n: int) -> "BinnedSeries":
        return BinnedSeries(self.bins, self.edges, self.indices[:n])


@dataclass(frozen=True)
class PathAgreement:
    agreement: float
    max_discrepancy: int
    mean_abs_discrepancy: float


def discretize(series, bins: int) -> BinnedSeries:
    """Equal-width binning over ``[min, max]``; the maximum lands in the top bin."""
    x = np.asarray(series, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("series must be nonempty")
    if bins < 2:
        raise ValueError("need at least 2 bins")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    lo, hi = float(x.min()), float(x.max())
    width = (hi - lo) / bins if hi > lo else 1.0
    edges = lo + width * np.arange(bins + 1)
    idx = np.floor((x - lo) / width).astype(np.int64)
    np.clip(idx, 0, bins - 1, out=idx)
    return BinnedSeries(bins=bins, edges=edges, indices=idx)


def estimate_empirical_model(latent: BinnedSeries, observed: BinnedSeries,
                             smoothing: float = 1.0) -> AdditiveHmmModel:
    """Count-based prior, transition kernel and likelihood table.

    The prior is the histogram of latent states, delta the histogram of
    successive differences (offset by k-1) and likelihood row d the histogram
    of latent states seen together with observation bin d. `smoothing` is
    added to every count before normalising.
    """
    if len(latent) != len(observed):
        raise ValueError("latent and observed series must have equal length")
    if len(latent) < 2:
        raise ValueError("need at least two time points")
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    k, a = latent.bins, observed.bins
    x = np.asarray(latent.indices)
    d = np.asarray(observed.indices)

    prior = np.bincount(x, minlength=k).astype(float) + smoothing
    delta = np.bincount(np.diff(x) + k - 1, minlength=2 * k - 1).astype(float) + smoothing
    joint = np.zeros((a, k))
    np.add.at(joint, (d, x), 1.0)
    joint += smoothing

    rows = joint.sum(axis=1, keepdims=True)
    # bins never observed (and smoothing 0) get a flat row
    likelihood = np.divide(joint, rows, out=np.full_like(joint, 1.0 / k), where=rows > 0)
    return AdditiveHmmModel(prior=prior / prior.sum(), likelihood=likelihood, delta=delta / delta.sum())


KernelFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def resolve_kernel(maxconv="naive", pstar_max: float | None = None) -> KernelFn:
    """Turn a method name (or a callable) into ``f(message, delta) -> values``."""
    if callable(maxconv):
        return maxconv
    if maxconv in ("naive", "exact"):
        return oracle.naive_max_convolve

    def kernel(a, b):
        return max_convolve(a, b, method=maxconv, pstar_max=pstar_max).values

    return kernel


def _check_data(model: AdditiveHmmModel, data) -> np.ndarray:
    obs = np.asarray(data.indices if isinstance(data, BinnedSeries) else data, dtype=np.int64)
    if obs.ndim != 1 or obs.size == 0:
        raise ValueError("need at least one observation")
    if obs.min() < 0 or obs.max() >= model.n_bins:
        raise ValueError("observation bin out of range for the likelihood table")
    return obs


def _normalise(msg: np.ndarray, i: int) -> np.ndarray:
    top = msg.max()
    if not top > 0:
        raise ValueError(f"observations have zero probability at step {i}")
    return msg / top


def viterbi_additive(model: AdditiveHmmModel, data, maxconv="naive",
                     pstar_max: float | None = None) -> np.ndarray:
    """Most probable latent path under additive transitions.

    The forward message is renormalised to maximum 1 after every likelihood
    product (argmax-invariant, and it keeps n steps from underflowing). The
    max-convolution of a length-k message with the length 2k-1 kernel is
    read on the window ``[k-1, 2k-1)``, where both states are valid.
    Backtracking takes ``argmax_l fromLeft[i][l] * delta[x[i+1] - l + k - 1]``,
    lowest state on ties.
    """
    obs = _check_data(model, data)
    kernel = resolve_kernel(maxconv, pstar_max)
    k, n = model.n_states, obs.size
    from_left = np.empty((n, k))
    msg = model.prior
    for i in range(n - 1):
        msg = _normalise(msg * model.likelihood[obs[i]], i)
        from_left[i] = msg
        full = np.asarray(kernel(msg, model.delta), dtype=float)
        msg = full[k - 1:2 * k - 1]
    from_left[n - 1] = _normalise(msg * model.likelihood[obs[n - 1]], n - 1)
    return _backtrack(from_left, lambda nxt: model.delta[nxt - np.arange(k) + k - 1])


def _backtrack(from_left: np.ndarray, incoming: Callable[[int], np.ndarray]) -> np.ndarray:
    n = from_left.shape[0]
    path = np.empty(n, dtype=np.int64)
    path[-1] = int(np.argmax(from_left[-1]))
    for i in range(n - 2, -1, -1):
        path[i] = int(np.argmax(from_left[i] * incoming(path[i + 1])))
    return path


def viterbi_dense(prior, likelihood, transition, data) -> np.ndarray:
    """Textbook O(n k**2) Viterbi with ``transition[a, b] = Pr(next=a | cur=b)``.

    Uses the same renormalisation as `viterbi_additive` so both agree
    exactly when the transition matrix is Toeplitz.
    """
    prior = np.asarray(prior, dtype=float)
    likelihood = np.atleast_2d(np.asarray(likelihood, dtype=float))
    T = np.asarray(transition, dtype=float)
    obs = np.asarray(data, dtype=np.int64)
    n, k = obs.size, prior.size
    from_left = np.empty((n, k))
    msg = prior
    for i in range(n - 1):
        msg = _normalise(msg * likelihood[obs[i]], i)
        from_left[i] = msg
        msg = (T * msg[None, :]).max(axis=1)
    from_left[n - 1] = _normalise(msg * likelihood[obs[n - 1]], n - 1)
    return _backtrack(from_left, lambda nxt: T[nxt])


def path_log_score(model: AdditiveHmmModel, data, path) -> float:
    """Log joint probability of a latent path and the observations."""
    obs = _check_data(model, data)
    path = np.asarray(path, dtype=np.int64)
    if path.shape != obs.shape:
        raise ValueError("path and data lengths differ")
    k = model.n_states
    with np.errstate(divide="ignore"):
        score = np.log(model.prior[path[0]])
        score += np.log(model.likelihood[obs, path]).sum()
        score += np.log(model.delta[np.diff(path) + k - 1]).sum()
    return float(score)


def compare_paths(exact, approx) -> PathAgreement:
    exact = np.asarray(exact, dtype=np.int64)
    approx = np.asarray(approx, dtype=np.int64)
    if exact.shape != approx.shape:
        raise ValueError("paths must have equal length")
    if exact.size == 0:
        return PathAgreement(1.0, 0, 0.0)
    diff = np.abs(exact - approx)
    return PathAgreement(
        agreement=float(np.mean(diff == 0)),
        max_discrepancy=int(diff.max()),
        mean_abs_discrepancy=float(diff.mean()),
    )


def synthetic_model(k: int, n_bins: int, seed: int = 0, step_scale: float | None = None,
                    noise_scale: float | None = None, jitter: float = 0.3) -> AdditiveHmmModel:
    """Random-walk model with Gaussian step kernel and Gaussian emissions.

    Observation bin d is centred on state ``d * k / n_bins``; the prior is a
    broad bump with a seeded random offset. Every parameter is multiplied by
    ``exp(jitter * N(0, 1))`` so that symmetric states do not tie exactly.
    """
    rng = np.random.default_rng(seed)
    step_scale = step_scale if step_scale is not None else max(1.0, k / 64)
    noise_scale = noise_scale if noise_scale is not None else max(1.0, n_bins / 16)
    offsets = np.arange(-(k - 1), k)
    delta = np.exp(-0.5 * (offsets / step_scale) ** 2)
    states = np.arange(k)
    centre = rng.uniform(0.3, 0.7) * (k - 1)
    prior = np.exp(-0.5 * ((states - centre) / max(1.0, k / 4)) ** 2)
    obs_pos = states * (n_bins / max(k, 1))
    bins = np.arange(n_bins)
    likelihood = np.exp(-0.5 * ((bins[:, None] + 0.5 - obs_pos[None, :]) / noise_scale) ** 2)
    if jitter > 0:
        delta *= np.exp(jitter * rng.standard_normal(delta.shape))
        prior *= np.exp(jitter * rng.standard_normal(prior.shape))
        likelihood *= np.exp(jitter * rng.standard_normal(likelihood.shape))
    likelihood /= likelihood.sum(axis=0, keepdims=True)
    return AdditiveHmmModel(prior=prior / prior.sum(), likelihood=likelihood, delta=delta / delta.sum())


def sample_hmm(model: AdditiveHmmModel, n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Draw a latent path and observation bins of length `n` from `model`."""
    rng = np.random.default_rng(seed)
    k = model.n_states
    latent = np.empty(n, dtype=np.int64)
    obs = np.empty(n, dtype=np.int64)
    latent[0] = rng.choice(k, p=model.prior / model.prior.sum())
    for i in range(n):
        if i > 0:
            w = model.delta[np.arange(k) - latent[i - 1] + k - 1]
            latent[i] = rng.choice(k, p=w / w.sum())
        col = model.likelihood[:, latent[i]]
        obs[i] = rng.choice(model.n_bins, p=col / col.sum())
    return latent, obs


def read_series_csv(path) -> np.ndarray:
    """Numeric column of a one- or two-column (timestamp, value) CSV.

    A non-numeric first row is treated as a header. Errors name the line.
    """
    values = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row if c.strip() != ""]
            if not cells or cells[0].startswith("#"):
                continue
            if len(cells) > 2:
                raise ValueError(f"{path}:{lineno}: expected one or two columns, got {len(cells)}")
            try:
                values.append(float(cells[-1]))
            except ValueError:
                if not values and lineno == 1:
                    continue
                raise ValueError(f"{path}:{lineno}: not a number: {cells[-1]!r}") from None
    if not values:
        raise ValueError(f"{path}: no numeric values")
    return np.asarray(values)


def write_path_csv(path, states, centers) -> None:
    states = np.asarray(states, dtype=np.int64)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "state", "bin_center"])
        for i, s in enumerate(states):
            w.writerow([i, int(s), repr(float(centers[s]))])
