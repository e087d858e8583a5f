import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desmil.hsic import (
    KernelConfig,
    corr_loss_grad_weights,
    empirical_hsic,
    gram,
    hsic_from_grams,
    median_bandwidth,
    pairwise_hsic,
    rbf_kernel,
    update_weights,
    weighted_corr_loss,
)
from desmil.numerics import finite_diff_grad

from oracles import hsic_expanded, hsic_trace


class TestRbf:
    def test_identical(self):
        assert rbf_kernel([1.0, 2.0], [1.0, 2.0], 0.7) == 1.0

    def test_distance_equal_bandwidth(self):
        assert rbf_kernel([0.0, 0.0], [3.0, 4.0], 5.0) == pytest.approx(math.exp(-1), abs=1e-15)
        assert math.exp(-1) == pytest.approx(0.367879, abs=1e-6)

    def test_monotone_in_sigma(self):
        vals = [rbf_kernel([0.0], [1.0], s) for s in (0.5, 1, 2, 4, 8, 100)]
        assert all(a < b for a, b in zip(vals, vals[1:]))
        assert vals[-1] > 0.9999

    def test_bad_sigma(self):
        with pytest.raises(ValueError):
            rbf_kernel([0.0], [1.0], 0.0)


class TestGram:
    def test_single_point(self):
        np.testing.assert_array_equal(gram(np.array([[1.0, 2.0]]), 1.0), [[1.0]])

    def test_duplicates(self):
        K = gram(np.array([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]]), 1.0)
        assert K[0, 1] == 1.0

    def test_symmetric_psd(self):
        X = np.random.default_rng(0).normal(size=(5, 3))
        K = gram(X, 1.3)
        np.testing.assert_allclose(K, K.T, atol=1e-15)
        assert np.linalg.eigvalsh(K).min() >= -1e-10
        assert np.all(np.diag(K) == 1.0)
        assert np.all((K > 0) & (K <= 1))


class TestMedianBandwidth:
    def test_two_points(self):
        assert median_bandwidth(np.array([[0.0, 0.0], [0.0, 3.0]])) == pytest.approx(3.0)

    def test_identical_points_hit_floor(self):
        assert median_bandwidth(np.ones((4, 2)), floor=1e-8) == 1e-8

    def test_line(self):
        assert median_bandwidth(np.array([0.0, 1.0, 2.0])) == pytest.approx(1.0)


class TestEmpiricalHsic:
    def test_m2_closed_form(self):
        U = np.array([[0.0], [1.0]])
        V = np.array([[0.5, 0.5], [0.0, 2.0]])
        cfg = KernelConfig(sigma=1.1)
        a = rbf_kernel(U[0], U[1], 1.1)
        b = rbf_kernel(V[0], V[1], 1.1)
        assert empirical_hsic(U, V, cfg) == pytest.approx((1 - a) * (1 - b), abs=1e-12)

    def test_constant_v(self):
        U = np.random.default_rng(1).normal(size=(7, 2))
        assert abs(empirical_hsic(U, np.zeros((7, 2)))) < 1e-12

    @pytest.mark.parametrize("m", [2, 3, 7, 16])
    def test_matches_expanded_sum(self, m):
        rng = np.random.default_rng(m)
        U, V = rng.normal(size=(m, 3)), rng.normal(size=(m, 2))
        su, sv = median_bandwidth(U), median_bandwidth(V)
        expected = hsic_expanded(U.tolist(), V.tolist(), su, sv)
        assert empirical_hsic(U, V) == pytest.approx(expected, abs=1e-10)
        assert hsic_from_grams(gram(U, su), gram(V, sv)) == pytest.approx(hsic_trace(gram(U, su), gram(V, sv)), abs=1e-12)

    def test_too_few(self):
        with pytest.raises(ValueError):
            empirical_hsic(np.zeros((1, 2)), np.zeros((1, 2)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 10_000))
    def test_symmetry_and_permutation(self, m, seed):
        rng = np.random.default_rng(seed)
        U, V = rng.normal(size=(m, 2)), rng.normal(size=(m, 3))
        h = empirical_hsic(U, V)
        assert empirical_hsic(V, U) == pytest.approx(h, abs=1e-12)
        perm = rng.permutation(m)
        assert empirical_hsic(U[perm], V[perm]) == pytest.approx(h, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 10_000))
    def test_self_dependence_positive(self, m, seed):
        U = np.random.default_rng(seed).normal(size=(m, 2))
        assert empirical_hsic(U, U) > 0


def _batch(m=6, c=3, d=4, seed=0):
    return np.random.default_rng(seed).normal(size=(m, c, d))


class TestWeightedCorrLoss:
    def test_zero_lambda(self):
        assert weighted_corr_loss(_batch(), np.ones(6), 0.0) == 0.0

    def test_single_interest(self):
        assert weighted_corr_loss(_batch(c=1), np.ones(6), 1.0) == 0.0

    def test_unit_weights_two_interests(self):
        M = _batch(c=2)
        assert weighted_corr_loss(M, np.ones(6), 2.5) == pytest.approx(2.5 * empirical_hsic(M[:, 0], M[:, 1]), abs=1e-14)

    def test_pairwise_sum(self):
        M = _batch(c=3)
        expected = sum(empirical_hsic(M[:, j], M[:, k]) for j in range(3) for k in range(j + 1, 3))
        assert pairwise_hsic(M) == pytest.approx(expected, abs=1e-14)
        assert weighted_corr_loss(M, np.ones(6), 1.0) == pytest.approx(expected, abs=1e-14)

    def test_reweighting_scales_vectors(self):
        M = _batch(c=2)
        w = np.linspace(0.2, 1.0, 6)
        cfg = KernelConfig(sigma=1.7)
        expected = empirical_hsic(w[:, None] * M[:, 0], w[:, None] * M[:, 1], cfg)
        assert weighted_corr_loss(M, w, 1.0, cfg) == pytest.approx(expected, abs=1e-14)


class TestCorrGradient:
    def test_zero_lambda(self):
        np.testing.assert_array_equal(corr_loss_grad_weights(_batch(), np.ones(6), 0.0), np.zeros(6))

    @pytest.mark.parametrize("sigma", [None, 0.9])
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed, sigma):
        M = _batch(m=4, c=2, d=3, seed=seed)
        w = np.random.default_rng(100 + seed).uniform(0.3, 1.0, 4)
        cfg = KernelConfig(sigma=sigma)
        analytic = corr_loss_grad_weights(M, w, 1.3, cfg)
        # bandwidths are constants of the evaluation point
        sig = [cfg.bandwidth(w[:, None] * M[:, j]) for j in range(2)]

        def f(ww):
            return 1.3 * hsic_from_grams(gram(ww[:, None] * M[:, 0], sig[0]), gram(ww[:, None] * M[:, 1], sig[1]))

        fd = finite_diff_grad(f, w.copy(), 1e-5)
        np.testing.assert_allclose(analytic, fd, rtol=1e-4, atol=1e-10)

    def test_three_interests(self):
        M = _batch(m=5, c=3, d=2, seed=3)
        w = np.full(5, 0.8)
        cfg = KernelConfig(sigma=1.0)
        fd = finite_diff_grad(lambda ww: weighted_corr_loss(M, ww, 1.0, cfg), w.copy())
        np.testing.assert_allclose(corr_loss_grad_weights(M, w, 1.0, cfg), fd, rtol=1e-4, atol=1e-10)

    def test_duplicate_samples_share_gradient(self):
        M = _batch(m=5, c=2, d=3, seed=4)
        M[3] = M[1]
        g = corr_loss_grad_weights(M, np.ones(5), 1.0)
        assert g[1] == pytest.approx(g[3], abs=1e-14)


class TestUpdateWeights:
    def test_zero_grad(self):
        w = np.array([0.3, 1.0])
        np.testing.assert_array_equal(update_weights(w, np.zeros(2), 0.5), w)

    def test_clipped(self):
        np.testing.assert_array_equal(update_weights([1.0], np.array([100.0]), 0.1, 1, (0.0, 1.0)), [0.0])

    def test_plain_step(self):
        w = np.array([0.5, 0.6])
        g = np.array([0.25, -0.5])
        np.testing.assert_array_equal(update_weights(w, g, 0.1), w - 0.1 * g)

    def test_gradient_recomputed_each_step(self):
        calls = []

        def grad(w):
            calls.append(w.copy())
            return w - 0.5

        out = update_weights(np.array([1.0]), grad, 0.5, steps=3)
        assert len(calls) == 3
        assert out[0] == pytest.approx(0.5 + 0.5 * 0.5**3)

    def test_bounds_order(self):
        with pytest.raises(ValueError):
            update_weights([0.5], np.zeros(1), 0.1, 1, (1.0, 0.0))
