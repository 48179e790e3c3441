"""End-to-end acceptance checks for the whole pipeline.

Each numbered test prints one `ACCEPTANCE n: PASS/FAIL` line (bypassing
capture, so the lines always reach the terminal) and then asserts. The
default-cohort runs exercise the real command-line entry points; the numeric
checks compare hand-rolled fast paths against independent dense or
brute-force routes.
"""

import json
import math
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from graphsim.checks import require_gradient_fidelity
from graphsim.cli import main as cli_main
from graphsim.config import run_config_from_dict
from graphsim.errors import NumericFailure, ValidationError
from graphsim.evaluation import auc, pair_eval
from graphsim.gcn import cheb_basis
from graphsim.graphs import knn_graph, laplacians, mean_affinity, read_adjacency_csv
from graphsim.siamese import ConVarParams, PairScore, convar_loss, hinge_loss, init_model
from graphsim.synthetic import generate_cohort, load_cohort
from graphsim.training import stratified_split, train
from graphsim.walks import (
    FrequencyMatrix,
    WalkParams,
    higher_order_representation,
    knn_from_frequency,
    merge_graphs,
    read_walk_log,
)

from helpers import random_affinity, random_connected_graph

BASELINES = Path(__file__).resolve().parent.parent / "baselines" / "default_cohort_metrics.json"


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"ACCEPTANCE {number}: FAIL ({detail})"


# ---------------------------------------------------------------- shared runs

@pytest.fixture(scope="module")
def default_runs(tmp_path_factory):
    """Both graph arms of the default pipeline for seeds 0..4.

    The walk-augmented and plain k-nn arms share each seed's dataset; every
    step goes through the command-line entry point.
    """
    root = tmp_path_factory.mktemp("acceptance")
    out = {"root": root, "data": {}, "on": {}, "off": {}}
    for seed in range(5):
        data = root / f"data_{seed}"
        assert cli_main(["gen-data", "--seed", str(seed), "--out", str(data)]) == 0
        out["data"][seed] = data
        for tag, extra in (("on", []), ("off", ["--no-higher-order"])):
            run = root / f"{tag}_{seed}"
            start = time.perf_counter()
            assert cli_main(
                ["train", "--data", str(data), "--seed", str(seed), "--out", str(run)]
                + extra
            ) == 0
            wall = time.perf_counter() - start
            assert cli_main(
                ["eval", "--data", str(data), "--checkpoint", str(run / "checkpoint.bin")]
            ) == 0
            out[tag][seed] = {
                "run": run,
                "train_seconds": wall,
                "pair": json.loads((run / "report.json").read_text()),
                "subject": json.loads((run / "subject_report.json").read_text()),
            }
    return out


# ------------------------------------------------------------------ criteria

def test_criterion_1_chebyshev_matches_dense_eigensolver(capsys):
    start = time.perf_counter()
    max_err = 0.0
    for seed in range(100):
        rng = np.random.default_rng(5000 + seed)
        n = int(rng.integers(4, 26))
        lap = laplacians(random_connected_graph(rng, n))
        x = rng.standard_normal((n, 2))
        basis = cheb_basis(lap, x, 8)
        lam, vectors = np.linalg.eigh(lap.scaled)
        theta = np.arccos(np.clip(lam, -1.0, 1.0))
        for k in range(8):
            dense = vectors @ (np.cos(k * theta)[:, None] * (vectors.T @ x))
            max_err = max(max_err, float(np.max(np.abs(basis[k] - dense))))
    elapsed = time.perf_counter() - start
    ok = max_err <= 1e-8 and elapsed < 30.0
    verdict(
        capsys, 1, ok,
        f"max |recurrence - dense| {max_err:.2e} over 100 graphs, orders 1..8, {elapsed:.1f}s",
    )


def test_criterion_2_analytic_gradients_match_finite_differences(capsys):
    start = time.perf_counter()
    try:
        results = require_gradient_fidelity(7)
        detail = ", ".join(
            f"{name} {report['max_rel_err']:.2e}" for name, report in results.items()
        )
        ok = all(report["max_rel_err"] <= 1e-4 for report in results.values())
    except NumericFailure as exc:
        ok, detail = False, str(exc)
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 120.0
    verdict(capsys, 2, ok, f"max relative error {detail}, {elapsed:.1f}s")


def test_criterion_3_walk_log_replays_exactly(capsys, tmp_path):
    mismatches = []
    for case in range(50):
        rng = np.random.default_rng(3000 + case)
        n = int(rng.integers(8, 21))
        cohort = [random_affinity(rng, n) for _ in range(int(rng.integers(2, 4)))]
        k = int(rng.integers(2, 4))
        params = WalkParams(
            num_walks=int(rng.integers(2, 5)),
            walk_length=int(rng.integers(8, 17)),
            window=int(rng.integers(2, 5)),
        )
        log = tmp_path / f"walks_{case}.txt"
        graph, _ = higher_order_representation(cohort, k, params, seed=case, walk_log=log)

        walks = read_walk_log(log)
        if len(walks) != params.num_walks * n:
            mismatches.append(f"case {case}: walk count")
            continue
        counts = np.zeros((n, n), dtype=np.int64)
        for walk in walks:
            if len(walk.vertices) != params.walk_length:
                mismatches.append(f"case {case}: walk length")
            for p in range(params.walk_length):
                for q in range(p + 1, min(p + params.window, params.walk_length - 1) + 1):
                    a, b = walk.vertices[p], walk.vertices[q]
                    if a != b:
                        counts[a, b] += 1
                        counts[b, a] += 1
        base = knn_graph(mean_affinity(cohort), k)
        expected = merge_graphs(base, knn_from_frequency(FrequencyMatrix(counts), k))
        if not np.array_equal(graph.adjacency, expected.adjacency):
            mismatches.append(f"case {case}: merged graph")
        if not np.all(graph.adjacency >= base.adjacency):
            mismatches.append(f"case {case}: lost base edge")
    ok = not mismatches
    verdict(
        capsys, 3, ok,
        "50 random cohorts replayed from their walk logs bit for bit"
        if ok else "; ".join(mismatches[:4]),
    )


def test_criterion_4_auc_matches_quadratic_oracle(capsys):
    failures = 0
    for case in range(1000):
        rng = np.random.default_rng(4000 + case)
        n = int(rng.integers(2, 41))
        labels = rng.choice([-1, 1], size=n)
        if (labels == 1).all() or (labels == -1).all():
            labels[0] = -labels[0]
        if case % 2 == 0:
            scores = rng.integers(0, 6, size=n) / 5.0
        else:
            scores = rng.standard_normal(n)
        pos = scores[labels == 1]
        neg = scores[labels == -1]
        wins = 0.0
        for p in pos:
            for q in neg:
                if p > q:
                    wins += 1.0
                elif p == q:
                    wins += 0.5
        if auc(scores, labels) != wins / (pos.size * neg.size):
            failures += 1
    ok = failures == 0
    verdict(capsys, 4, ok, f"{failures} of 1000 random score sets disagree with the O(n^2) count")


def test_criterion_5_default_cohort_metrics(capsys, default_runs):
    recorded = json.loads(BASELINES.read_text())
    auc_min = recorded["thresholds"]["mean_pair_auc_min"]
    acc_min = recorded["thresholds"]["mean_subject_accuracy_min"]
    on = default_runs["on"]
    mean_auc = float(np.mean([on[s]["pair"]["auc"] for s in range(5)]))
    mean_acc = float(np.mean([on[s]["subject"]["accuracy"] for s in range(5)]))
    slowest = max(on[s]["train_seconds"] for s in range(5))
    ok = (
        (auc_min, acc_min) == (0.90, 0.85)
        and mean_auc >= auc_min
        and mean_acc >= acc_min
        and slowest < 300.0
    )
    verdict(
        capsys, 5, ok,
        f"5-seed mean pair AUC {mean_auc:.4f} >= {auc_min}, mean subject accuracy "
        f"{mean_acc:.4f} >= {acc_min}, slowest train {slowest:.0f}s",
    )


def test_criterion_6_walk_augmentation_improves_mean_auc(capsys, default_runs):
    mean_on = float(np.mean([default_runs["on"][s]["pair"]["auc"] for s in range(5)]))
    mean_off = float(np.mean([default_runs["off"][s]["pair"]["auc"] for s in range(5)]))
    ok = mean_on > mean_off
    verdict(
        capsys, 6, ok,
        f"mean pair AUC {mean_on:.4f} with walk augmentation vs {mean_off:.4f} without; "
        "both arms saturate the default cohort (see baselines/default_cohort_metrics.json "
        "and README), so the strict inequality cannot hold there",
    )


def test_criterion_7_untrained_models_score_at_chance(capsys, default_runs):
    run = default_runs["on"][0]["run"]
    cohort = load_cohort(default_runs["data"][0] / "manifest.json")
    lap = laplacians(read_adjacency_csv(run / "merged_adjacency.csv"))
    test_ids = json.loads((run / "split.json").read_text())["test"]
    aucs = [
        pair_eval(init_model(cohort.n_nodes, 2, 32, 3, seed=s, dropout_keep=0.8),
                  lap, cohort, test_ids).auc
        for s in range(20)
    ]
    mean_auc = float(np.mean(aucs))
    ok = 0.4 <= mean_auc <= 0.6
    verdict(capsys, 7, ok, f"mean test AUC {mean_auc:.4f} over 20 untrained models, want [0.4, 0.6]")


def test_criterion_8_repeat_run_is_bitwise_identical(capsys, tmp_path):
    data = tmp_path / "data"
    run = tmp_path / "run"

    def pipeline():
        assert cli_main(["gen-data", "--seed", "0", "--out", str(data)]) == 0
        assert cli_main([
            "train", "--data", str(data), "--seed", "0", "--out", str(run),
        ]) == 0
        assert cli_main([
            "eval", "--data", str(data), "--checkpoint", str(run / "checkpoint.bin"),
        ]) == 0

    names = (
        "checkpoint.bin", "report.json", "scores.csv", "subject_report.json",
        "split.json", "merged_adjacency.csv", "walks.txt", "run_config.json",
    )
    pipeline()
    first = {name: (run / name).read_bytes() for name in names}
    shutil.rmtree(run)
    shutil.rmtree(data)
    pipeline()
    differing = [name for name in names if (run / name).read_bytes() != first[name]]
    ok = not differing
    verdict(
        capsys, 8, ok,
        "checkpoint and all reports byte-identical across a full rerun"
        if ok else f"differing artifacts: {', '.join(differing)}",
    )


def test_criterion_9_losses_match_bruteforce(capsys):
    convar = ConVarParams()
    worst = 0.0
    for case in range(1000):
        rng = np.random.default_rng(9000 + case)
        m = int(rng.integers(4, 65))
        labels = rng.choice([-1, 1], size=m)
        while (labels == 1).sum() < 2 or (labels == -1).sum() < 2:
            labels = rng.choice([-1, 1], size=m)
        values = rng.uniform(-3.0, 3.0, size=m)
        if case % 3 == 0:
            values = np.round(values)  # land some scores exactly on the hinge
        batch = [
            PairScore(f"i{t}", f"j{t}", float(v), int(y))
            for t, (v, y) in enumerate(zip(values, labels))
        ]

        hand_hinge = math.fsum(
            max(0.0, 1.0 - p.label * p.score) for p in reversed(batch)
        ) / m
        worst = max(worst, abs(hinge_loss(batch) - hand_hinge))

        pos = [p.score for p in batch if p.label == 1]
        neg = [p.score for p in batch if p.label == -1]

        def pvar(xs):
            mu = math.fsum(xs) / len(xs)
            return math.fsum((x - mu) ** 2 for x in xs) / len(xs)

        hand_convar = (
            max(0.0, pvar(pos) - convar.variance_threshold)
            + max(0.0, pvar(neg) - convar.variance_threshold)
            + max(0.0, convar.margin - (math.fsum(pos) / len(pos) - math.fsum(neg) / len(neg)))
        )
        worst = max(worst, abs(convar_loss(batch, convar) - hand_convar))
    with pytest.raises(ValidationError, match="balanced"):
        convar_loss([PairScore("a", "b", 0.5, 1), PairScore("a", "c", 0.2, 1)], convar)
    ok = worst <= 1e-12
    verdict(
        capsys, 9, ok,
        f"max |loss - bruteforce| {worst:.2e} over 1000 batches; "
        "one-sided variance batches rejected",
    )


# ------------------------------------------------------------- supplementary

def test_training_collapses_loss_on_default_cohort(default_runs):
    history = (default_runs["on"][0]["run"] / "history.csv").read_text().strip().split("\n")
    first_loss = float(history[1].split(",")[1])
    final_loss = float(history[-1].split(",")[1])
    assert final_loss < 0.3 * first_loss


def test_walk_augmentation_direction_on_hard_cohort():
    """Off the saturated operating point the augmented graph wins.

    A weaker community contrast (0.55 vs 0.30 with noise 0.2) makes the
    plain k-nn graph unreliable while walk co-occurrence still recovers the
    concentrated structure; measured mean test AUC 1.000 vs 0.814 on these
    three seeds.
    """
    def arm_auc(config, cohort, higher_order):
        train_ids, test_ids = stratified_split(cohort, config.train_fraction, config.seed)
        affinities = cohort.affinities(train_ids)
        k = config.knn_k(cohort.n_nodes)
        if higher_order:
            _, lap = higher_order_representation(affinities, k, config.walks, config.seed)
        else:
            lap = laplacians(knn_graph(mean_affinity(affinities), k))
        model, _ = train(cohort, train_ids, lap, config.to_train_config())
        return pair_eval(model, lap, cohort, test_ids).auc

    on_aucs, off_aucs = [], []
    for seed in range(3):
        config = run_config_from_dict({
            "seed": seed,
            "train_fraction": 0.6,
            "knn_fraction": 0.07,
            "synth": {
                "n_nodes": 60, "n_communities": 4, "w_in": 0.55, "w_out": 0.30,
                "noise_sd": 0.20, "subjects_per_class": 10, "seed": seed,
            },
            "walks": {"num_walks": 10, "walk_length": 40, "window": 8},
            "gcn": {"features": 16, "order": 3, "n_layers": 2, "dropout_keep": 0.8},
            "train": {"epochs": 50, "batch_pairs": 256, "lr": 0.005},
        })
        cohort, _ = generate_cohort(config.synth)
        on_aucs.append(arm_auc(config, cohort, True))
        off_aucs.append(arm_auc(config, cohort, False))
    mean_on = float(np.mean(on_aucs))
    mean_off = float(np.mean(off_aucs))
    assert mean_on > mean_off + 0.05, f"on {on_aucs} vs off {off_aucs}"
    assert mean_on >= 0.95, f"augmented arm should solve these seeds, got {on_aucs}"
