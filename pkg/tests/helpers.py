"""Shared test utilities: random graph builders and brute-force baselines."""

import numpy as np

from graphsim.graphs import AffinityMatrix, BinaryGraph


def random_connected_adjacency(rng, n):
    """Random symmetric 0/1 adjacency with a path backbone so it is connected."""
    adj = (rng.random((n, n)) < 0.25).astype(np.int64)
    adj = adj | adj.T
    np.fill_diagonal(adj, 0)
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = 1
    return adj


def random_connected_graph(rng, n):
    return BinaryGraph(random_connected_adjacency(rng, n))


def random_affinity(rng, n):
    """Random valid affinity matrix: symmetric, entries in [0,1], unit diagonal."""
    m = rng.random((n, n))
    m = 0.5 * (m + m.T)
    np.fill_diagonal(m, 1.0)
    return AffinityMatrix(m)
