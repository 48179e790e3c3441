"""Random-walk co-occurrence layer: forced-walk cases, log replay, graph merging."""

import numpy as np
import pytest

from graphsim.errors import ValidationError
from graphsim.graphs import BinaryGraph, knn_graph, mean_affinity
from graphsim.synthetic import SynthSpec, community_labels, generate_cohort
from graphsim.walks import (
    FrequencyMatrix,
    Walk,
    WalkParams,
    accumulate_cooccurrence,
    build_frequency,
    higher_order_representation,
    knn_from_frequency,
    merge_graphs,
    random_walk,
    read_walk_log,
)

from helpers import random_affinity, random_connected_graph


def path_graph(n):
    adj = np.zeros((n, n), dtype=np.int64)
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = 1
    return BinaryGraph(adj)


def count_pairs_bruteforce(walks, n, window):
    """Reference co-occurrence count: every unordered position pair within the window."""
    counts = np.zeros((n, n), dtype=np.int64)
    for walk in walks:
        v = walk.vertices
        for p in range(len(v)):
            for q in range(p + 1, min(p + window, len(v) - 1) + 1):
                if v[p] != v[q]:
                    counts[v[p], v[q]] += 1
                    counts[v[q], v[p]] += 1
    return counts


# ------------------------------------------------------------------ random_walk

def test_walk_starts_at_root_and_has_length():
    rng = np.random.default_rng(0)
    g = path_graph(5)
    walk = random_walk(g, 2, 7, rng)
    assert walk.vertices[0] == 2
    assert len(walk.vertices) == 7


def test_walk_steps_follow_edges():
    for seed in range(6):
        rng = np.random.default_rng(seed)
        g = random_connected_graph(rng, 15)
        walk = random_walk(g, int(rng.integers(15)), 20, rng)
        for a, b in zip(walk.vertices, walk.vertices[1:]):
            assert g.adjacency[a, b] == 1


def test_walk_deterministic_given_stream():
    g = path_graph(6)
    w1 = random_walk(g, 0, 30, np.random.default_rng(42))
    w2 = random_walk(g, 0, 30, np.random.default_rng(42))
    assert w1.vertices == w2.vertices


def test_walk_from_isolated_node_errors():
    adj = np.zeros((3, 3), dtype=np.int64)
    adj[0, 1] = adj[1, 0] = 1
    g = BinaryGraph(adj)
    with pytest.raises(ValidationError):
        random_walk(g, 2, 4, np.random.default_rng(0))


def test_walk_midpoint_split_is_uniform():
    # From the middle of a 3-node path both neighbours should appear equally
    # often: 10,000 two-step walks land within 4 sigma of a fair coin.
    g = path_graph(3)
    rng = np.random.default_rng(0)
    left = 0
    trials = 10_000
    for _ in range(trials):
        walk = random_walk(g, 1, 2, rng)
        assert walk.vertices[1] in (0, 2)
        if walk.vertices[1] == 0:
            left += 1
    assert abs(left / trials - 0.5) <= 0.02


# ------------------------------------------------------------- pair accumulation

def test_accumulate_window_one_adjacent_pairs():
    freq = FrequencyMatrix(np.zeros((3, 3), dtype=np.int64))
    got = accumulate_cooccurrence(freq, Walk((0, 1, 2)), window=1)
    want = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=np.int64)
    assert np.array_equal(got.counts, want)
    # copy on write: the input matrix is untouched
    assert got is not freq and freq.counts.sum() == 0


def test_accumulate_window_two_reaches_endpoints():
    freq = FrequencyMatrix(np.zeros((3, 3), dtype=np.int64))
    got = accumulate_cooccurrence(freq, Walk((0, 1, 2)), window=2)
    want = np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]], dtype=np.int64)
    assert np.array_equal(got.counts, want)


def test_accumulate_skips_equal_node_pairs():
    # Walk 0,1,0,1 with a full window: of the six position pairs, two hit the
    # same node at both ends and are skipped, leaving four 0-1 co-occurrences.
    freq = FrequencyMatrix(np.zeros((2, 2), dtype=np.int64))
    got = accumulate_cooccurrence(freq, Walk((0, 1, 0, 1)), window=3)
    assert got.counts[0, 1] == 4
    assert got.counts[1, 0] == 4


def test_accumulate_matches_bruteforce_sweep():
    for seed in range(8):
        rng = np.random.default_rng(700 + seed)
        g = random_connected_graph(rng, 12)
        window = int(rng.integers(1, 6))
        walk = random_walk(g, int(rng.integers(12)), 15, rng)
        freq = accumulate_cooccurrence(
            FrequencyMatrix(np.zeros((12, 12), dtype=np.int64)), walk, window
        )
        want = count_pairs_bruteforce([walk], 12, window)
        assert np.array_equal(freq.counts, want), f"seed {seed}"


# ---------------------------------------------------------------- build_frequency

def test_frequency_two_node_graph_exact_count():
    # One pass of length-3 walks on a single edge: both walks alternate
    # endpoints, giving two adjacent pairs each, so F[0,1] = 4.
    g = path_graph(2)
    freq = build_frequency(g, WalkParams(1, 3, 1), seed=0)
    assert freq.counts[0, 1] == 4
    assert freq.counts[1, 0] == 4


def test_frequency_replay_from_walk_log(tmp_path):
    rng = np.random.default_rng(1)
    g = random_connected_graph(rng, 14)
    params = WalkParams(3, 12, 4)
    log = tmp_path / "walks.txt"
    freq = build_frequency(g, params, seed=5, walk_log=log)
    walks = read_walk_log(log)
    assert len(walks) == params.num_walks * g.n_nodes
    assert all(len(w.vertices) == params.walk_length for w in walks)
    replay = count_pairs_bruteforce(walks, g.n_nodes, params.window)
    assert np.array_equal(freq.counts, replay)


def test_frequency_total_counts_window_pairs(tmp_path):
    rng = np.random.default_rng(2)
    g = random_connected_graph(rng, 10)
    params = WalkParams(2, 9, 3)
    log = tmp_path / "walks.txt"
    freq = build_frequency(g, params, seed=9, walk_log=log)
    valid_pairs = 0
    for walk in read_walk_log(log):
        v = walk.vertices
        for p in range(len(v)):
            for q in range(p + 1, min(p + params.window, len(v) - 1) + 1):
                if v[p] != v[q]:
                    valid_pairs += 1
    assert freq.counts.sum() == 2 * valid_pairs


def test_frequency_symmetric_zero_diagonal():
    rng = np.random.default_rng(3)
    g = random_connected_graph(rng, 11)
    freq = build_frequency(g, WalkParams(2, 8, 2), seed=3)
    assert np.array_equal(freq.counts, freq.counts.T)
    assert not np.diag(freq.counts).any()
    assert (freq.counts >= 0).all()


def test_frequency_thread_count_does_not_change_counts():
    rng = np.random.default_rng(4)
    g = random_connected_graph(rng, 13)
    params = WalkParams(4, 10, 3)
    a = build_frequency(g, params, seed=11, threads=1)
    b = build_frequency(g, params, seed=11, threads=4)
    assert np.array_equal(a.counts, b.counts)


def test_frequency_deterministic_including_log(tmp_path):
    rng = np.random.default_rng(5)
    g = random_connected_graph(rng, 9)
    params = WalkParams(3, 7, 2)
    log_a = tmp_path / "a.txt"
    log_b = tmp_path / "b.txt"
    a = build_frequency(g, params, seed=21, walk_log=log_a)
    b = build_frequency(g, params, seed=21, walk_log=log_b)
    assert np.array_equal(a.counts, b.counts)
    assert log_a.read_bytes() == log_b.read_bytes()


# ------------------------------------------------------------- knn_from_frequency

def test_knn_frequency_single_pair():
    counts = np.zeros((4, 4), dtype=np.int64)
    counts[1, 3] = counts[3, 1] = 7
    g = knn_from_frequency(FrequencyMatrix(counts), k=2)
    want = np.zeros((4, 4), dtype=np.int64)
    want[1, 3] = want[3, 1] = 1
    assert np.array_equal(g.adjacency, want)


def test_knn_frequency_all_zero_counts():
    g = knn_from_frequency(FrequencyMatrix(np.zeros((5, 5), dtype=np.int64)), k=2)
    assert g.edge_count == 0


def test_knn_frequency_matches_selection_oracle():
    for seed in range(8):
        rng = np.random.default_rng(800 + seed)
        n, k = 16, 3
        counts = rng.integers(0, 6, size=(n, n))
        counts = counts + counts.T
        np.fill_diagonal(counts, 0)
        g = knn_from_frequency(FrequencyMatrix(counts.astype(np.int64)), k)
        want = np.zeros((n, n), dtype=np.int64)
        for i in range(n):
            ranked = sorted((j for j in range(n) if j != i and counts[i, j] > 0),
                            key=lambda j: (-counts[i, j], j))
            for j in ranked[:k]:
                want[i, j] = 1
                want[j, i] = 1
        assert np.array_equal(g.adjacency, want), f"seed {seed}"


# ----------------------------------------------------------------- merge_graphs

def test_merge_identity_and_idempotent():
    rng = np.random.default_rng(6)
    g = random_connected_graph(rng, 10)
    assert np.array_equal(merge_graphs(g, g).adjacency, g.adjacency)
    empty = BinaryGraph(np.zeros((10, 10), dtype=np.int64))
    assert np.array_equal(merge_graphs(g, empty).adjacency, g.adjacency)


def test_merge_is_edge_set_union():
    for seed in range(8):
        rng = np.random.default_rng(900 + seed)
        a = random_connected_graph(rng, 12)
        b = random_connected_graph(rng, 12)
        merged = merge_graphs(a, b)
        assert np.array_equal(merged.adjacency, a.adjacency | b.adjacency)
        assert merged.edge_count >= max(a.edge_count, b.edge_count)


def test_merge_rejects_size_mismatch():
    rng = np.random.default_rng(7)
    with pytest.raises(ValidationError):
        merge_graphs(random_connected_graph(rng, 5), random_connected_graph(rng, 6))


# ------------------------------------------------- higher_order_representation

def test_higher_order_graph_contains_base_graph():
    for seed in range(5):
        rng = np.random.default_rng(1000 + seed)
        cohort = [random_affinity(rng, 18) for _ in range(4)]
        k = 3
        base = knn_graph(mean_affinity(cohort), k)
        merged, lap = higher_order_representation(cohort, k, WalkParams(2, 10, 3), seed=seed)
        assert np.all(merged.adjacency >= base.adjacency), f"seed {seed}"
        assert lap.n_nodes == 18


def test_higher_order_representation_deterministic():
    rng = np.random.default_rng(8)
    cohort = [random_affinity(rng, 12) for _ in range(3)]
    params = WalkParams(2, 8, 2)
    a, lap_a = higher_order_representation(cohort, 2, params, seed=4)
    b, lap_b = higher_order_representation(cohort, 2, params, seed=4)
    assert np.array_equal(a.adjacency, b.adjacency)
    assert lap_a.lambda_max == lap_b.lambda_max


def test_walk_augmentation_sharpens_community_structure():
    """On a noisy planted-community cohort the augmented graph should keep a
    larger fraction of its edges inside communities than the base knn graph:
    walks revisit dense regions, so co-occurrence favours within-block pairs.
    """
    spec = SynthSpec(
        n_nodes=60,
        n_communities=4,
        w_in=0.4,
        w_out=0.25,
        noise_sd=0.2,
        subjects_per_class=3,
        class_structure="block_merge",
        seed=33,
    )
    cohort, _ = generate_cohort(spec)
    blocks = community_labels(spec, class_id=0)
    affinities = [s.affinity for s in cohort.subjects]
    k = 6
    base = knn_graph(mean_affinity(affinities), k)
    # A wide window makes multi-hop pairs count, which is where the walk
    # signal beats the noisy one-hop picks of the plain knn graph.
    merged, _ = higher_order_representation(affinities, k, WalkParams(10, 40, 8), seed=33)

    def within_fraction(graph):
        i, j = np.nonzero(np.triu(graph.adjacency))
        return float(np.mean(blocks[i] == blocks[j]))

    base_frac = within_fraction(base)
    merged_frac = within_fraction(merged)
    assert base_frac < 1.0, "cohort too easy to exercise the claim"
    assert merged_frac > base_frac, f"{merged_frac:.3f} vs {base_frac:.3f}"
