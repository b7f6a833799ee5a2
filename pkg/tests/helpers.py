import numpy as np

from a2gnn.dataio import STICK_EDGES


def random_tree_edges(rng, n):
    return [(int(rng.integers(0, i)), i) for i in range(1, n)]


def random_connected_adjacency(rng, n, extra_edges=None, weighted=False):
    """Random spanning tree plus a few chords; unit or positive random weights."""
    a = np.zeros((n, n))
    for i, j in random_tree_edges(rng, n):
        a[i, j] = a[j, i] = 1.0
    extra = rng.integers(0, n) if extra_edges is None else extra_edges
    for _ in range(extra):
        i, j = rng.choice(n, size=2, replace=False)
        a[i, j] = a[j, i] = 1.0
    if weighted:
        w = rng.uniform(0.2, 2.0, size=(n, n))
        a = a * np.triu(w, 1)
        a = a + a.T
    return a


def permute_edges(edges, perm):
    """Relabel edges for node order ``perm`` (new node i is old node perm[i])."""
    inv = np.argsort(perm)
    return [(int(inv[i]), int(inv[j])) for i, j in edges]


def small_template(n=6):
    return [(0, 1), (1, 2), (1, 3), (3, 4), (2, 5)][: n - 1] if n <= 6 else random_tree_edges(np.random.default_rng(n), n)


__all__ = ["STICK_EDGES", "random_tree_edges", "random_connected_adjacency", "permute_edges", "small_template"]
