import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import brute_max_convolve, direct_convolve_nd, overlap_lengths
from fastmaxconv import (
    PStarLadder,
    fft_convolve,
    fft_convolve_nd,
    naive_max_convolve,
    naive_max_convolve_nd,
    piecewise_affine_max_convolve,
    piecewise_max_convolve,
)
from fastmaxconv.fft_engine import ConvolutionPlan
from fastmaxconv.hmm import AdditiveHmmModel, viterbi_additive
from fastmaxconv.pnorm import TAU, TAU_DIV, ladder_moments, scale_inputs
from fastmaxconv.projection import (
    MomentQuartet,
    _gammas,
    gamma_from_moments,
    max_quad,
    projection_max_convolve,
)

EPS = np.finfo(float).eps
SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])

# zero or far from the subnormal range, so no product underflows
unit = st.one_of(st.just(0.0), st.floats(1e-100, 1.0))


def vectors(min_size=1, max_size=40, elements=unit):
    return st.integers(min_size, max_size).flatmap(
        lambda n: arrays(np.float64, n, elements=elements))


def positive_vectors(min_size=1, max_size=40):
    return vectors(min_size, max_size, st.floats(1e-3, 1.0))


def fft_moment_slack(Ls, Rs):
    n = max(Ls.size + Rs.size, 2)
    return 10 * EPS * math.log2(n) * math.sqrt(np.sum(Ls ** 2) * np.sum(Rs ** 2))


class TestOracleProperties:
    @SETTINGS
    @given(vectors(), vectors())
    def test_commutative(self, L, R):
        np.testing.assert_array_equal(naive_max_convolve(L, R), naive_max_convolve(R, L))

    @SETTINGS
    @given(vectors(), vectors(), st.integers(-20, 20))
    def test_scaling_power_of_two_exact(self, L, R, e):
        c = 2.0 ** e
        np.testing.assert_array_equal(naive_max_convolve(c * L, R), c * naive_max_convolve(L, R))

    @SETTINGS
    @given(vectors(), vectors(), st.floats(1e-6, 1e6))
    def test_scaling(self, L, R, c):
        # rounding c*L[l] then multiplying by R can differ from c*(L[l]*R) by two ulps
        np.testing.assert_allclose(naive_max_convolve(c * L, R), c * naive_max_convolve(L, R),
                                   rtol=4 * EPS, atol=0)

    @SETTINGS
    @given(vectors(), vectors(), st.data())
    def test_dominance(self, L, R, data):
        out = naive_max_convolve(L, R)
        l = data.draw(st.integers(0, L.size - 1))
        r = data.draw(st.integers(0, R.size - 1))
        assert out[l + r] >= L[l] * R[r]

    @SETTINGS
    @given(vectors(max_size=25), vectors(max_size=25))
    def test_matches_brute(self, L, R):
        np.testing.assert_array_equal(naive_max_convolve(L, R), brute_max_convolve(L, R))

    @SETTINGS
    @given(vectors(max_size=12), vectors(max_size=12))
    def test_rank_one_nd(self, L, R):
        np.testing.assert_array_equal(naive_max_convolve_nd(L[:, None], R[:, None])[:, 0],
                                      naive_max_convolve(L, R))
        np.testing.assert_array_equal(naive_max_convolve_nd(L[None], R[None])[0],
                                      naive_max_convolve(L, R))


class TestFftProperties:
    @SETTINGS
    @given(positive_vectors(), positive_vectors(), st.floats(1e-6, 1e6))
    def test_linearity(self, a, b, c):
        # FFT round-off is relative to the largest output entry, not to each entry
        ref = c * fft_convolve(a, b)
        np.testing.assert_allclose(fft_convolve(c * a, b), ref, rtol=0, atol=1e-12 * ref.max())

    @SETTINGS
    @given(st.lists(st.integers(1, 16), min_size=1, max_size=3), st.lists(st.integers(1, 16), min_size=1,
           max_size=3), st.integers(0, 2 ** 32 - 1))
    def test_direct_sum(self, sa, sb, seed):
        ndim = min(len(sa), len(sb))
        sa, sb = tuple(sa[:ndim]), tuple(sb[:ndim])
        rng = np.random.default_rng(seed)
        a = rng.uniform(size=sa)
        b = rng.uniform(size=sb)
        assert a.size <= 4096 and b.size <= 4096
        np.testing.assert_allclose(fft_convolve_nd(a, b), direct_convolve_nd(a, b), rtol=0, atol=1e-9)

    @SETTINGS
    @given(vectors(max_size=300), vectors(max_size=300))
    def test_argument_order(self, a, b):
        np.testing.assert_allclose(fft_convolve(a, b), fft_convolve(b, a), rtol=0, atol=1e-12)

    @SETTINGS
    @given(positive_vectors(max_size=100))
    def test_plan_batch_matches_single(self, a):
        plan = ConvolutionPlan.for_arrays(a, a)
        batch = plan.convolve_batch(np.stack([a, a ** 2]), np.stack([a, a ** 2]))
        np.testing.assert_allclose(batch[1], plan.convolve(a ** 2, a ** 2), rtol=1e-12)


class TestPiecewiseProperties:
    @SETTINGS
    @given(positive_vectors(4, 200), vectors(4, 200), st.sampled_from([4.0, 16.0, 64.0, 256.0]))
    def test_envelope(self, L, R, pstar_max):
        if R.max() == 0:
            R = R + 1.0
        res = piecewise_max_convolve(L, R, pstar_max=pstar_max)
        Ls, Rs, *_ = scale_inputs(L, R)
        exact = naive_max_convolve(Ls, Rs)
        k_m = overlap_lengths(L.size, R.size)
        p = res.pstar
        allow = (1 + fft_moment_slack(Ls, Rs) / np.maximum(res.contour.witness, TAU)) ** (1 / p)
        stable = res.stable
        assert np.all(exact[stable] <= res.raw[stable] * allow[stable] * (1 + 1e-9))
        lower = res.raw[stable] * k_m[stable] ** (-1 / p[stable])
        assert np.all(exact[stable] * allow[stable] * (1 + 1e-12) >= lower)

    @SETTINGS
    @given(positive_vectors(4, 200), positive_vectors(4, 200), st.sampled_from([8.0, 64.0, 512.0]))
    def test_contour_monotone(self, L, R, pstar_max):
        res = piecewise_max_convolve(L, R, pstar_max=pstar_max)
        Ls, Rs, *_ = scale_inputs(L, R)
        moments = ladder_moments(Ls, Rs, res.ladder)
        idx = res.contour.index
        stable = res.stable
        assert np.all(res.contour.witness[stable] >= TAU)
        nxt = idx + 1
        has_next = stable & (nxt < len(res.ladder))
        above = np.take_along_axis(moments, np.minimum(nxt, len(res.ladder) - 1)[None], 0)[0]
        assert np.all(above[has_next] < TAU)
        assert res.n_convolutions == len(res.ladder) == math.ceil(math.log2(pstar_max)) + 1

    @SETTINGS
    @given(vectors(4, 150), vectors(4, 150))
    def test_affine_exact_at_anchors(self, L, R):
        if L.max() == 0 or R.max() == 0:
            return
        res = piecewise_affine_max_convolve(L, R, pstar_max=64)
        Ls, Rs, *_ = scale_inputs(L, R)
        exact = naive_max_convolve(Ls, Rs)
        corrected = res.values / (res.scale[0] * res.scale[1])
        for rung in res.contour.used():
            members = res.contour.members(rung)
            xs = res.raw[members]
            for anchor in (members[np.argmin(xs)], members[np.argmax(xs)]):
                assert corrected[anchor] == pytest.approx(exact[anchor], rel=1e-12, abs=1e-300)
        assert res.n_exact_evaluations <= 2 * len(res.contour.used())

    @SETTINGS
    @given(vectors(1, 60), vectors(1, 60))
    def test_nonnegative_and_total(self, L, R):
        for fn in (piecewise_max_convolve, piecewise_affine_max_convolve, projection_max_convolve):
            if L.max() == 0 or R.max() == 0:
                with pytest.raises(ValueError):
                    fn(L, R)
                continue
            out = fn(L, R).values
            assert out.shape == (L.size + R.size - 1,)
            assert np.all(np.isfinite(out)) and np.all(out >= 0)


class TestProjectionProperties:
    @SETTINGS
    @given(arrays(np.float64, st.integers(1, 200), elements=unit), st.sampled_from([1.0, 2.0, 4.0, 16.0]))
    def test_gamma2_nonnegative(self, v, s):
        g = gamma_from_moments(MomentQuartet.from_vector(v, s))
        scale = max(1.0, MomentQuartet.from_vector(v, s).est1 ** 2)
        assert g.gamma2 >= -1e-12 * scale

    @SETTINGS
    @given(st.floats(0.05, 0.95), st.integers(1, 20), st.integers(1, 20), st.sampled_from([1.0, 2.0, 4.0]))
    def test_two_values_exact(self, b, n_a, n_b, s):
        v = np.array([1.0] * n_a + [b] * n_b)
        assert max_quad(MomentQuartet.from_vector(v, s)) == pytest.approx(1.0, rel=1e-9)
        w = 0.37 * v
        assert max_quad(MomentQuartet.from_vector(w, s)) == pytest.approx(0.37, rel=1e-9)

    @SETTINGS
    @given(arrays(np.float64, st.integers(3, 100), elements=unit), st.sampled_from([1.0, 2.0, 8.0]))
    def test_larger_root(self, v, s):
        q = MomentQuartet.from_vector(v, s)
        g2, g1, g0 = _gammas(q.est1, q.est2, q.est3, q.est4)
        pre = g1 * g1 - 4 * g2 * g0
        if g2 > TAU_DIV and pre >= 0:
            other = (-g1 - math.sqrt(pre)) / (2 * g2)
            assert max_quad(q) ** s >= other

    @SETTINGS
    @given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=4, max_size=4), st.floats(0.1, 64))
    def test_fallback_total(self, e, s):
        value = max_quad(MomentQuartet(*e, spacing=s))
        assert math.isfinite(value) and value >= 0

    @SETTINGS
    @given(st.integers(2, 14))
    def test_interleaved_spacing(self, top):
        ladder = PStarLadder.interleaved_powers(2.0 ** top)
        for i in range(4, len(ladder), 2):
            p = ladder[i]
            assert (ladder[i - 4], ladder[i - 2], ladder[i - 1], ladder[i]) == (p / 4, p / 2, 3 * p / 4, p)


class TestHmmProperties:
    @staticmethod
    def model(seed, k, bins):
        rng = np.random.default_rng(seed)
        return AdditiveHmmModel(rng.uniform(0.1, 1, k), rng.uniform(0.01, 1, (bins, k)),
                                rng.uniform(0.01, 1, 2 * k - 1))

    @SETTINGS
    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 24), st.integers(1, 30))
    def test_argmax_invariance(self, seed, k, n):
        m = self.model(seed, k, 4)
        data = np.random.default_rng(seed).integers(0, 4, n)
        scaled = AdditiveHmmModel(3.7 * m.prior, 1e-3 * m.likelihood, 250.0 * m.delta)
        np.testing.assert_array_equal(viterbi_additive(m, data), viterbi_additive(scaled, data))

    @SETTINGS
    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 24), st.integers(1, 20),
           st.sampled_from(["piecewise", "piecewise-affine", "projection-affine", "fixed-pstar"]))
    def test_kernel_interchangeable(self, seed, k, n, method):
        m = self.model(seed, k, 4)
        data = np.random.default_rng(seed).integers(0, 4, n)
        path = viterbi_additive(m, data, maxconv=method, pstar_max=32)
        assert path.shape == (n,) and path.dtype.kind == "i"
        assert path.min() >= 0 and path.max() < k
