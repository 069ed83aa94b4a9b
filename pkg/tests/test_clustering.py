import itertools
import math

import numpy as np
import pytest

from deepmvc import tensor as T
from deepmvc.clustering import (
    ClusterAssignment,
    DdcParams,
    ddc_forward,
    ddc_loss,
    gaussian_kernel,
    harden,
    kernel_bandwidth,
    kmeans,
)
from deepmvc.errors import ContractViolation, DegenerateInputError, DimensionError
from deepmvc.evaluation import accuracy
from deepmvc.tensor import grad_check

from .oracles import ddc_loop, median_bandwidth_loop


def simplex_rows(rng, n, k):
    e = np.exp(rng.normal(size=(n, k)))
    return e / e.sum(axis=1, keepdims=True)


class TestForward:
    def test_zero_params(self):
        p = DdcParams.init(5, 3, 0)
        for t in p.parameters():
            t.data = np.zeros_like(t.data)
        hidden, alpha = ddc_forward(p, np.ones((4, 5)))
        assert np.all(hidden.data == 0) and np.allclose(alpha.data, 1 / 3)

    def test_shapes_and_simplex(self, rng):
        p = DdcParams.init(7, 4, 1)
        hidden, alpha = ddc_forward(p, rng.normal(size=(9, 7)))
        assert hidden.shape == (9, 100) and alpha.shape == (9, 4)
        np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(alpha.data >= 0)

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            ddc_forward(DdcParams.init(3, 2, 0), np.ones((2, 4)))


class TestBandwidth:
    def test_two_points(self):
        assert kernel_bandwidth(np.array([[0.0, 0.0], [2.0, 0.0]])) == pytest.approx(0.3)

    def test_collinear(self):
        assert kernel_bandwidth(np.array([[0.0], [1.0], [2.0], [3.0]])) == pytest.approx(0.15)

    def test_homogeneity(self, rng):
        h = rng.normal(size=(10, 4))
        assert kernel_bandwidth(3.5 * h) == pytest.approx(3.5 * kernel_bandwidth(h), rel=1e-12)

    def test_matches_loop(self, rng):
        h = rng.normal(size=(11, 3))
        assert kernel_bandwidth(h) == pytest.approx(median_bandwidth_loop(h), rel=1e-12)

    def test_errors(self):
        with pytest.raises(ContractViolation):
            kernel_bandwidth(np.ones((1, 3)))
        with pytest.raises(DegenerateInputError):
            kernel_bandwidth(np.ones((4, 3)))


class TestKernel:
    def test_unit_diagonal_symmetric(self, rng):
        K = gaussian_kernel(rng.normal(size=(6, 3)), 0.7).data
        assert np.allclose(np.diag(K), 1.0) and np.array_equal(K, K.T)
        assert np.all((K > 0) & (K <= 1))

    def test_distance_sigma_sqrt2(self):
        sigma = 0.4
        h = np.array([[0.0, 0.0], [sigma * math.sqrt(2), 0.0]])
        assert gaussian_kernel(h, sigma).data[0, 1] == pytest.approx(math.exp(-1), rel=1e-12)

    def test_bad_sigma(self):
        with pytest.raises(ContractViolation):
            gaussian_kernel(np.ones((2, 2)), 0.0)


class TestDdcLoss:
    def test_far_points_distinct_clusters(self):
        h = np.array([[0.0, 0.0], [100.0, 0.0]])
        out = ddc_loss(np.eye(2), h, sigma=1.0)
        assert out.l1.item() == pytest.approx(0.0, abs=1e-12)
        assert out.l2.item() == 0.0
        # with kappa = I the corner memberships still overlap: m_1 = (1, e^-2), m_2 = (e^-2, 1)
        e2 = math.exp(-2)
        assert out.l3.item() == pytest.approx(2 * e2 / (1 + e2 * e2), rel=1e-12)

    def test_identical_one_hot_rows(self, rng):
        alpha = np.tile([1.0, 0.0], (5, 1))
        out = ddc_loss(alpha, rng.normal(size=(5, 3)))
        assert out.l2.item() == pytest.approx(1.0)
        assert out.clamped
        assert np.isfinite(out.total.item())

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_loop(self, seed):
        r = np.random.default_rng(seed)
        alpha, h = simplex_rows(r, 6, 3), r.normal(size=(6, 4))
        sigma = median_bandwidth_loop(h)
        out = ddc_loss(alpha, h)
        for got, want in zip((out.l1, out.l2, out.l3), ddc_loop(alpha, h, sigma)):
            assert abs(got.item() - want) < 1e-10

    def test_ranges(self, rng):
        for _ in range(20):
            out = ddc_loss(simplex_rows(rng, 8, 4), rng.normal(size=(8, 5)))
            for term in (out.l1, out.l2, out.l3):
                assert -1e-9 <= term.item() <= 1 + 1e-9

    def test_column_permutation_invariance(self, rng):
        alpha, h = simplex_rows(rng, 8, 4), rng.normal(size=(8, 5))
        base = ddc_loss(alpha, h)
        for perm in itertools.permutations(range(4)):
            out = ddc_loss(alpha[:, perm], h)
            for a, b in zip(base[:3], out[:3]):
                assert a.item() == pytest.approx(b.item(), abs=1e-14)

    def test_needs_two(self):
        with pytest.raises(ContractViolation):
            ddc_loss(np.ones((3, 1)), np.ones((3, 2)))

    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize("term", ["l1", "l2", "l3", "total"])
    def test_gradients_wrt_alpha(self, seed, term):
        # data-driven bandwidth, as in training
        r = np.random.default_rng(seed)
        logits, h = r.normal(size=(6, 3)), r.normal(size=(6, 4))
        sigma = kernel_bandwidth(h)

        def f(t):
            out = ddc_loss(T.softmax(t, axis=1), h, sigma=sigma)
            return out.total if term == "total" else getattr(out, term)

        assert grad_check(f, logits) < 1e-4

    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize("term", ["l1", "l2", "l3", "total"])
    def test_gradients_wrt_alpha_and_hidden(self, seed, term):
        # sigma = 1 keeps kernel entries (and their gradients) well above
        # finite-difference round-off; at 0.15 x median most entries are ~e^-22
        r = np.random.default_rng(seed)
        logits, h = r.normal(size=(6, 3)), r.normal(size=(6, 4))

        def f(t):
            out = ddc_loss(T.softmax(t[0], axis=1), t[1], sigma=1.0)
            return out.total if term == "total" else getattr(out, term)

        assert grad_check(f, [logits, h]) < 1e-4


class TestHarden:
    def test_uniform_tie(self):
        assert harden(np.full((2, 3), 1 / 3)).tolist() == [0, 0]

    def test_one_hot(self):
        assert harden(np.eye(4)).tolist() == [0, 1, 2, 3]

    def test_scripted(self, rng):
        alpha = simplex_rows(rng, 20, 5)
        expected = [max(range(5), key=lambda c: (alpha[i, c], -c)) for i in range(20)]
        assert harden(alpha).tolist() == expected

    def test_assignment_defaults(self, rng):
        a = ClusterAssignment(simplex_rows(rng, 5, 3))
        assert a.hard_labels.tolist() == harden(a.alpha).tolist()


class TestKMeans:
    def test_two_singletons(self):
        res = kmeans(np.array([[-10.0], [10.0]]), 2, seed=0)
        assert sorted(res.labels.tolist()) == [0, 1] and res.inertia == 0.0

    def test_k_equals_n(self, rng):
        x = rng.normal(size=(6, 2))
        res = kmeans(x, 6, seed=3)
        assert len(set(res.labels.tolist())) == 6 and res.inertia == pytest.approx(0.0, abs=1e-20)

    def test_blobs(self, rng):
        centers = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]])
        y = np.repeat(np.arange(3), 100)
        x = centers[y] + 0.1 * rng.normal(size=(300, 2))
        assert accuracy(kmeans(x, 3, seed=0).labels, y) >= 0.98

    def test_deterministic(self, rng):
        x = rng.normal(size=(50, 3))
        a, b = kmeans(x, 4, seed=7), kmeans(x, 4, seed=7)
        assert np.array_equal(a.labels, b.labels) and np.array_equal(a.centroids, b.centroids)

    @pytest.mark.parametrize("seed", range(10))
    def test_inertia_non_increasing(self, seed):
        r = np.random.default_rng(seed)
        res = kmeans(r.normal(size=(80, 2)), 5, seed=seed)
        hist = res.inertia_history
        assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))

    def test_assignment_is_one_hot(self, rng):
        res = kmeans(rng.normal(size=(30, 2)), 3)
        assert np.array_equal(res.assignment.alpha.argmax(axis=1), res.labels)
        assert np.all(res.assignment.alpha.sum(axis=1) == 1.0)

    def test_n_less_than_k(self):
        with pytest.raises(ContractViolation):
            kmeans(np.ones((2, 2)), 3)
