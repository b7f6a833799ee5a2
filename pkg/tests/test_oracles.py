import numpy as np
import pytest

from a2gnn import graphcore as gc
from a2gnn.oracles import eig_symmetric, finite_diff_grad, spectral_filter_oracle

from .helpers import random_connected_adjacency


class TestJacobi:
    def test_diagonal(self):
        d = np.diag([3.0, -1.0, 2.0])
        eig = eig_symmetric(d)
        np.testing.assert_allclose(eig.eigenvalues, [-1, 2, 3])
        np.testing.assert_allclose(np.abs(eig.eigenvectors), np.eye(3)[:, [1, 2, 0]])

    def test_two_node_laplacian(self):
        eig = eig_symmetric(gc.normalized_laplacian([[0, 1], [1, 0]]))
        np.testing.assert_allclose(eig.eigenvalues, [0, 2], atol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_reconstruction_random_8x8(self, seed):
        m = np.random.default_rng(seed).normal(size=(8, 8))
        m = m + m.T
        eig = eig_symmetric(m)
        u = eig.eigenvectors
        assert np.max(np.abs(u.T @ u - np.eye(8))) < 1e-9
        assert np.max(np.abs(eig.reconstruct() - m)) < 1e-8

    def test_agrees_with_lapack(self):
        m = np.random.default_rng(11).normal(size=(12, 12))
        m = m @ m.T
        np.testing.assert_allclose(eig_symmetric(m).eigenvalues, np.linalg.eigvalsh(m), rtol=1e-10, atol=1e-10)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            eig_symmetric([[1.0, 2.0], [0.0, 1.0]])

    def test_nonconvergence(self):
        m = np.random.default_rng(0).normal(size=(6, 6))
        with pytest.raises(RuntimeError):
            eig_symmetric(m + m.T, tol=0.0, max_sweeps=1)


class TestSpectralFilterOracle:
    def test_order_one_is_plain_projection(self):
        rng = np.random.default_rng(2)
        lap = gc.normalized_laplacian(random_connected_adjacency(rng, 5))
        x, theta = rng.normal(size=(5, 3)), rng.normal(size=(3, 4))
        np.testing.assert_allclose(spectral_filter_oracle(lap, x, theta, 1), x @ theta, atol=1e-12)

    def test_zero_theta(self):
        rng = np.random.default_rng(3)
        lap = gc.normalized_laplacian(random_connected_adjacency(rng, 5))
        out = spectral_filter_oracle(lap, rng.normal(size=(5, 2)), np.zeros((6, 3)), 3)
        np.testing.assert_array_equal(out, 0)

    def test_wrong_theta_rows(self):
        with pytest.raises(ValueError):
            spectral_filter_oracle(np.eye(3), np.ones((3, 2)), np.ones((5, 1)), 3)


class TestFiniteDiff:
    def test_quadratic(self):
        p = np.array([1.0, -2.0, 0.5])
        grad = finite_diff_grad(lambda: float(np.sum(p ** 2)), p)
        np.testing.assert_allclose(grad, 2 * p, rtol=1e-8)

    def test_restores_param(self):
        p = np.array([[1.0, 2.0]])
        finite_diff_grad(lambda: float(np.sum(np.sin(p))), p)
        np.testing.assert_array_equal(p, [[1.0, 2.0]])

    def test_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda: 0.0, np.zeros(2), step=0)

    def test_nonfinite_loss(self):
        p = np.zeros(1)
        with pytest.raises(FloatingPointError):
            finite_diff_grad(lambda: float("inf") + p[0], p)
