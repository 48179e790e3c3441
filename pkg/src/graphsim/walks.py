"""Random-walk co-occurrence statistics and the walk-augmented graph.

The pipeline: take the k-nn graph of the cohort mean affinity, run uniform
random walks from every node for several passes, count windowed
co-occurrences of node pairs along the walks, build a second k-nn graph from
those counts, and union it with the original graph. The union picks up
longer-range structure that pointwise affinity misses.

Determinism: every random draw is derived from (seed, pass, node) or
(seed, pass) through named SeedSequence spawn keys, so results do not depend
on scheduling and a logged walk set can be replayed exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .graphs import BinaryGraph, LaplacianSet, AffinityMatrix, knn_graph, laplacians, mean_affinity

# Namespace tags keeping the independent random streams apart.
_NS_SHUFFLE = 101
_NS_WALK = 102


@dataclass(frozen=True)
class WalkParams:
    """Walk schedule: passes over the node set, walk length, window width."""

    num_walks: int
    walk_length: int
    window: int

    def __post_init__(self):
        if self.num_walks < 1:
            raise ValidationError(f"num_walks must be >= 1, got {self.num_walks}")
        if self.walk_length < 2:
            raise ValidationError(f"walk_length must be >= 2, got {self.walk_length}")
        if not 1 <= self.window < self.walk_length:
            raise ValidationError(
                f"window must satisfy 1 <= window < walk_length, got window={self.window} "
                f"for walk_length={self.walk_length}"
            )


@dataclass(frozen=True)
class Walk:
    """A single walk as the visited node sequence; consecutive nodes share an edge."""

    vertices: tuple[int, ...]

    def __post_init__(self):
        if len(self.vertices) < 2:
            raise ValidationError("a walk must visit at least 2 positions")


@dataclass(frozen=True)
class FrequencyMatrix:
    """Symmetric non-negative integer co-occurrence counts with zero diagonal."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.dtype.kind not in "iu":
            raise ValidationError("co-occurrence counts must be integers")
        counts = counts.astype(np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValidationError(f"counts must be square, got shape {counts.shape}")
        if (counts < 0).any():
            raise ValidationError("co-occurrence counts must be non-negative")
        if not np.array_equal(counts, counts.T):
            raise ValidationError("co-occurrence counts must be symmetric")
        if np.diag(counts).any():
            raise ValidationError("co-occurrence counts must have a zero diagonal")
        frozen = np.ascontiguousarray(counts)
        frozen.setflags(write=False)
        object.__setattr__(self, "counts", frozen)

    @property
    def n_nodes(self) -> int:
        return self.counts.shape[0]


def random_walk(graph: BinaryGraph, root: int, length: int, rng: np.random.Generator) -> Walk:
    """Uniform random walk of the given length starting at root.

    Each step picks uniformly among the current node's neighbours using a
    single rng.integers draw, so the walk is a pure function of the rng state.
    """
    if not 0 <= root < graph.n_nodes:
        raise ValidationError(f"root {root} out of range for {graph.n_nodes} nodes")
    if length < 2:
        raise ValidationError(f"walk length must be >= 2, got {length}")
    adjacency = graph.adjacency
    vertices = np.empty(length, dtype=np.int64)
    vertices[0] = root
    current = root
    for step in range(1, length):
        neighbours = np.flatnonzero(adjacency[current])
        if neighbours.size == 0:
            raise ValidationError(f"node {current} is isolated; cannot continue the walk")
        current = int(neighbours[int(rng.integers(neighbours.size))])
        vertices[step] = current
    return Walk(tuple(int(v) for v in vertices))


def _accumulate(counts: np.ndarray, vertices: Sequence[int], window: int) -> None:
    length = len(vertices)
    for p in range(length):
        vp = vertices[p]
        for q in range(p + 1, min(p + window, length - 1) + 1):
            vq = vertices[q]
            if vp == vq:
                continue
            counts[vp, vq] += 1
            counts[vq, vp] += 1


def accumulate_cooccurrence(freq: FrequencyMatrix, walk: Walk, window: int) -> FrequencyMatrix:
    """Add one walk's windowed co-occurrences, returning a new count matrix.

    Every unordered pair of distinct nodes at positions within the window of
    each other contributes 1 to both symmetric slots. Repeated visits count
    each time; a node paired with itself does not count.
    """
    if window < 1:
        raise ValidationError(f"window must be >= 1, got {window}")
    n = freq.n_nodes
    for v in walk.vertices:
        if not 0 <= v < n:
            raise ValidationError(f"walk visits node {v}, outside the {n}-node graph")
    counts = freq.counts.copy()
    _accumulate(counts, walk.vertices, window)
    return FrequencyMatrix(counts)


def _walk_rng(seed: int, pass_index: int, node: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(_NS_WALK, pass_index, node))))


def _shuffle_rng(seed: int, pass_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(_NS_SHUFFLE, pass_index))))


def _run_pass(graph: BinaryGraph, params: WalkParams, seed: int, pass_index: int):
    order = _shuffle_rng(seed, pass_index).permutation(graph.n_nodes)
    counts = np.zeros((graph.n_nodes, graph.n_nodes), dtype=np.int64)
    walks = []
    for node in order:
        walk = random_walk(graph, int(node), params.walk_length, _walk_rng(seed, pass_index, int(node)))
        _accumulate(counts, walk.vertices, params.window)
        walks.append(walk)
    return counts, walks


def build_frequency(
    graph: BinaryGraph,
    params: WalkParams,
    seed: int,
    walk_log=None,
    threads: int = 1,
) -> FrequencyMatrix:
    """Run the full walk schedule and return the co-occurrence count matrix.

    Each pass visits every node once in a pass-specific shuffled order; each
    walk draws from its own (seed, pass, node) stream, so the counts are
    independent of both the shuffle and the thread count. When walk_log is
    given, all walks are written there one per line, space-separated, in
    pass order then shuffled visit order.

    Parameters
    ----------
    graph : BinaryGraph
        Graph to walk on; must have no isolated nodes.
    params : WalkParams
        Number of passes, walk length, and co-occurrence window.
    seed : int
        Root seed for all walk and shuffle streams.
    walk_log : path or None
        Optional destination for the replayable walk log.
    threads : int
        Worker threads across passes. Results are identical for any value.
    """
    if threads < 1:
        raise ValidationError(f"threads must be >= 1, got {threads}")
    if threads == 1 or params.num_walks == 1:
        results = [_run_pass(graph, params, seed, i) for i in range(params.num_walks)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda i: _run_pass(graph, params, seed, i), range(params.num_walks)))
    counts = np.zeros((graph.n_nodes, graph.n_nodes), dtype=np.int64)
    for pass_counts, _ in results:
        counts += pass_counts
    if walk_log is not None:
        with open(walk_log, "w", encoding="ascii") as fh:
            for _, walks in results:
                for walk in walks:
                    fh.write(" ".join(str(v) for v in walk.vertices))
                    fh.write("\n")
    return FrequencyMatrix(counts)


def read_walk_log(path) -> list[Walk]:
    """Parse a walk log written by build_frequency."""
    walks = []
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                vertices = tuple(int(tok) for tok in line.split())
            except ValueError:
                raise ValidationError(f"{path}: line {line_no} is not a space-separated node list") from None
            walks.append(Walk(vertices))
    return walks


def knn_from_frequency(freq: FrequencyMatrix, k: int) -> BinaryGraph:
    """k-nn graph under co-occurrence counts, largest first.

    Ties break toward the lower node index and nodes with zero co-occurrence
    are never selected, so rows can contribute fewer than k links. The
    directed selection is symmetrized by union.
    """
    n = freq.n_nodes
    if not 1 <= k < n:
        raise ValidationError(f"k must satisfy 1 <= k < n_nodes, got k={k} for {n} nodes")
    counts = freq.counts
    adj = np.zeros((n, n), dtype=np.int64)
    ids = np.arange(n)
    for i in range(n):
        order = np.lexsort((ids, -counts[i]))
        chosen = order[:k]
        chosen = chosen[counts[i, chosen] > 0]
        adj[i, chosen] = 1
    adj = adj | adj.T
    return BinaryGraph(adj)


def merge_graphs(base: BinaryGraph, augment: BinaryGraph) -> BinaryGraph:
    """Edgewise union of two graphs on the same node set."""
    if base.n_nodes != augment.n_nodes:
        raise ValidationError(
            f"cannot merge graphs with {base.n_nodes} and {augment.n_nodes} nodes"
        )
    return BinaryGraph(base.adjacency | augment.adjacency)


def higher_order_representation(
    cohort: Sequence[AffinityMatrix],
    k: int,
    params: WalkParams,
    seed: int,
    walk_log=None,
    threads: int = 1,
) -> tuple[BinaryGraph, LaplacianSet]:
    """Walk-augmented shared graph for a cohort, with its Laplacians.

    Builds the k-nn graph of the cohort mean affinity, augments it with the
    k-nn graph of random-walk co-occurrence counts, and returns the union
    together with its normalized and rescaled Laplacians.
    """
    base = knn_graph(mean_affinity(cohort), k)
    freq = build_frequency(base, params, seed, walk_log=walk_log, threads=threads)
    augmented = merge_graphs(base, knn_from_frequency(freq, k))
    return augmented, laplacians(augmented)
