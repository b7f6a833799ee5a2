"""Slow, independent reference computations used by the test-suite.

Nothing here shares code with the fast paths it checks: the eigensolver is a
cyclic Jacobi sweep and spectral filtering goes through the eigenbasis.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray   # ascending
    eigenvectors: np.ndarray  # columns, orthonormal

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T


def eig_symmetric(m, tol: float = 1e-14, max_sweeps: int = 100) -> EigenDecomposition:
    """Cyclic Jacobi eigendecomposition of a small symmetric matrix."""
    a = np.array(m, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"expected a square matrix, got {a.shape}")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10:
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = max(np.linalg.norm(a), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) plane rotation
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise RuntimeError(f"Jacobi did not converge in {max_sweeps} sweeps")
    vals = np.diag(a).copy()
    order = np.argsort(vals, kind="stable")
    return EigenDecomposition(vals[order], v[:, order])


def _cheb_values(k, x):
    # closed form on [-1, 1]: T_k(cos t) = cos(k t)
    return np.cos(k * np.arccos(np.clip(x, -1.0, 1.0)))


def spectral_filter_oracle(norm_lap, x, theta, order: int, lambda_max: float = 2.0) -> np.ndarray:
    """Filter in the graph Fourier basis.

    For every input/output channel pair the frequency response
    ``g(lam) = sum_k theta[k*d_in + c, o] T_k(2 lam / lambda_max - 1)`` is
    evaluated on the eigenvalues, then ``U diag(g) U^T x_c`` is accumulated.
    """
    eig = eig_symmetric(norm_lap)
    u, lam = eig.eigenvectors, eig.eigenvalues
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    d_in = x.shape[1]
    if theta.shape[0] != order * d_in:
        raise ValueError(f"theta has {theta.shape[0]} rows, expected {order * d_in}")
    lam_scaled = 2.0 * lam / lambda_max - 1.0
    basis = np.stack([_cheb_values(k, lam_scaled) for k in range(order)])  # K x N
    x_hat = u.T @ x                                                         # N x d_in
    out = np.zeros((x.shape[0], theta.shape[1]))
    for o in range(theta.shape[1]):
        for c in range(d_in):
            response = theta[c::d_in, o] @ basis       # rows k*d_in + c
            out[:, o] += u @ (response * x_hat[:, c])
    return out


def finite_diff_grad(loss_fn: Callable[[], float], param: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. ``param``, perturbed in place."""
    if not step > 0:
        raise ValueError("step must be positive")
    grad = np.zeros_like(param, dtype=float)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn()
        flat[i] = orig - step
        down = loss_fn()
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError(f"non-finite loss at coordinate {i}")
        gflat[i] = (up - down) / (2.0 * step)
    return grad
