"""Skeleton graphs, normalized/scaled Laplacians and the Chebyshev basis."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class GraphError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Power iteration ran out of iterations; ``estimate`` holds the last value."""

    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


def _check_symmetric(a: np.ndarray, name="adjacency"):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphError(f"{name} must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise GraphError(f"{name} is not symmetric")


def adjacency_from_edges(num_nodes: int, edges: Sequence[tuple[int, int]]) -> np.ndarray:
    """Binary symmetric adjacency with unit weight per bone."""
    if num_nodes < 1:
        raise GraphError("num_nodes must be positive")
    a = np.zeros((num_nodes, num_nodes))
    seen = set()
    for i, j in edges:
        i, j = int(i), int(j)
        if not (0 <= i < num_nodes and 0 <= j < num_nodes):
            raise GraphError(f"edge ({i}, {j}) out of range for {num_nodes} nodes")
        if i == j:
            raise GraphError(f"self-loop on node {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(f"duplicate edge {key}")
        seen.add(key)
        a[i, j] = a[j, i] = 1.0
    return a


def is_connected(adjacency: np.ndarray) -> bool:
    n = adjacency.shape[0]
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in np.nonzero(adjacency[i])[0]:
            if j not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    return len(seen) == n


@dataclass(frozen=True)
class SkeletonGraph:
    adjacency: np.ndarray
    signals: np.ndarray | None = None

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=float)
        _check_symmetric(a)
        if np.any(a < 0):
            raise GraphError("adjacency has negative entries")
        if np.any(np.diag(a) != 0):
            raise GraphError("adjacency has self-loops")
        if np.any(a.sum(axis=1) <= 0):
            raise GraphError("isolated node")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        if self.signals is not None:
            x = np.array(self.signals, dtype=float)
            if x.shape[0] != a.shape[0]:
                raise GraphError(f"signals have {x.shape[0]} rows for {a.shape[0]} nodes")
            x.setflags(write=False)
            object.__setattr__(self, "signals", x)

    @classmethod
    def from_edges(cls, num_nodes, edges, signals=None):
        return cls(adjacency_from_edges(num_nodes, edges), signals)

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True)
class LaplacianPair:
    normalized: np.ndarray
    scaled: np.ndarray
    lambda_max: float

    @classmethod
    def from_adjacency(cls, adjacency, lambda_max: float | None = 2.0):
        """``lambda_max=None`` estimates it by power iteration."""
        norm = normalized_laplacian(adjacency)
        lam = estimate_lambda_max(norm) if lambda_max is None else lambda_max
        return cls(norm, scaled_laplacian(norm, lam), lam)


def normalized_laplacian(adjacency) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2`` with ``D`` the diagonal of row sums."""
    a = np.asarray(adjacency, dtype=float)
    _check_symmetric(a)
    if np.any(a < 0):
        raise GraphError("adjacency has negative entries")
    deg = a.sum(axis=1)
    if np.any(deg <= 0):
        raise GraphError(f"isolated node {int(np.argmin(deg))}")
    s = 1.0 / np.sqrt(deg)
    lap = np.eye(a.shape[0]) - s[:, None] * a * s[None, :]
    # exact symmetry despite rounding in the products
    return 0.5 * (lap + lap.T)


def scaled_laplacian(norm_lap, lambda_max: float) -> np.ndarray:
    """Map the spectrum into [-1, 1]: ``(2 / lambda_max) L - I``."""
    if not lambda_max > 0:
        raise GraphError(f"lambda_max must be positive, got {lambda_max}")
    norm_lap = np.asarray(norm_lap, dtype=float)
    return (2.0 / lambda_max) * norm_lap - np.eye(norm_lap.shape[0])


def power_iteration(matrix, tol: float = 1e-10, max_iters: int = 10_000, start=None):
    """Dominant eigenpair of a symmetric PSD matrix as ``(value, unit vector)``.

    Convergence is declared when successive Rayleigh quotients agree to
    relative tolerance ``tol``.
    """
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    v = np.ones(n) if start is None else np.asarray(start, dtype=float).copy()
    # break symmetric starts that are orthogonal to the top eigenvector
    v = v + np.linspace(0.1, 0.2, n)
    v /= np.linalg.norm(v)
    estimate = float(v @ m @ v)
    for _ in range(max_iters):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            raise ConvergenceError("power iteration hit the zero vector", 0.0)
        v = w / norm
        new = float(v @ m @ v)
        if abs(new - estimate) <= tol * max(abs(new), 1e-300):
            return new, v
        estimate = new
    raise ConvergenceError(f"power iteration did not converge in {max_iters} iterations "
                           f"(last estimate {estimate:.12g})", estimate)


def estimate_lambda_max(norm_lap, tol: float = 1e-10, max_iters: int = 10_000) -> float:
    """Largest eigenvalue of a normalized Laplacian by power iteration."""
    m = np.asarray(norm_lap, dtype=float)
    if not np.any(m):
        raise ConvergenceError("all-zero matrix has no dominant eigenvalue", 0.0)
    value, _ = power_iteration(m, tol, max_iters)
    return value


def chebyshev_apply(scaled_lap, x, order: int) -> list[np.ndarray]:
    """``[T_0(L)X, ..., T_{K-1}(L)X]`` via the three-term recurrence."""
    if order < 1:
        raise GraphError(f"Chebyshev order K must be >= 1, got {order}")
    lap = np.asarray(scaled_lap, dtype=float)
    x = np.asarray(x, dtype=float)
    if lap.shape[-1] != x.shape[-2]:
        raise GraphError(f"Laplacian {lap.shape} does not conform with signals {x.shape}")
    terms = [x]
    if order > 1:
        terms.append(lap @ x)
    for _ in range(2, order):
        terms.append(2.0 * (lap @ terms[-1]) - terms[-2])
    return terms


def chebyshev_scalar(k: int, x):
    """Scalar Chebyshev polynomial ``T_k(x)`` by the same recurrence."""
    prev, cur = np.ones_like(np.asarray(x, dtype=float)), np.asarray(x, dtype=float)
    if k == 0:
        return prev
    for _ in range(1, k):
        prev, cur = cur, 2.0 * x * cur - prev
    return cur


def permutation_matrix(perm) -> np.ndarray:
    """``P`` with ``(P @ X)[i] == X[perm[i]]``."""
    perm = np.asarray(perm)
    p = np.zeros((perm.size, perm.size))
    p[np.arange(perm.size), perm] = 1.0
    return p
