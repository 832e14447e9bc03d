"""Shared fixtures and seeded data generators for the test suite."""

import numpy as np
import pytest


def brute_max_convolve(L, R):
    """Double loop over all pairs; deliberately shares no code with the package."""
    L = list(map(float, L))
    R = list(map(float, R))
    out = [0.0] * (len(L) + len(R) - 1)
    for i, a in enumerate(L):
        for j, b in enumerate(R):
            if a * b > out[i + j]:
                out[i + j] = a * b
    return np.array(out)


def brute_max_convolve_2d(L, R):
    p0, p1 = L.shape
    q0, q1 = R.shape
    out = np.zeros((p0 + q0 - 1, p1 + q1 - 1))
    for a in range(p0):
        for b in range(p1):
            for c in range(q0):
                for d in range(q1):
                    out[a + c, b + d] = max(out[a + c, b + d], L[a, b] * R[c, d])
    return out


def direct_convolve_nd(a, b):
    """Direct-sum linear convolution of equal-rank arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.zeros(tuple(p + q - 1 for p, q in zip(a.shape, b.shape)))
    for idx in np.ndindex(*b.shape):
        target = tuple(slice(i, i + e) for i, e in zip(idx, a.shape))
        out[target] += b[idx] * a
    return out


def overlap_lengths(n, q):
    """k_m for a length-n by length-q vector max-convolution."""
    m = np.arange(n + q - 1)
    return np.minimum(m, n - 1) - np.maximum(0, m - q + 1) + 1


def random_problem(rng, n=None, q=None, kind=None):
    """Random nonnegative vector pair; lengths 4..2048, uniform or beta entries."""
    n = n if n is not None else int(rng.integers(4, 2049))
    q = q if q is not None else int(rng.integers(4, 2049))
    kind = kind if kind is not None else ("uniform", "beta")[int(rng.integers(2))]
    if kind == "uniform":
        return rng.uniform(size=n), rng.uniform(size=q)
    a, b = rng.uniform(0.3, 3.0, size=2)
    return rng.beta(a, b, size=n), rng.beta(a, b, size=q)


def random_walk_series(n, seed=0, noise=2.0):
    """Gaussian random-walk latent series and a noisy observation of it."""
    rng = np.random.default_rng(seed)
    latent = np.cumsum(rng.normal(size=n))
    observed = latent + noise * rng.normal(size=n)
    return latent, observed


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = {}


@pytest.fixture
def acceptance(request):
    """Record one acceptance outcome; returns `ok` so tests can assert on it."""

    def record(criterion, ok, detail=""):
        _ACCEPTANCE[request.node.name] = (criterion, bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, (criterion, ok, detail) in sorted(_ACCEPTANCE.items(), key=lambda kv: kv[1][0]):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{status}  {criterion:<44} {detail}  [{name}]")
