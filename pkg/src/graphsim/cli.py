"""Command-line pipeline: gen-data, train, eval, sweep, grad-check.

Every command is deterministic given its config and seed. Exit codes:
0 success, 2 configuration problem, 3 data problem, 4 numeric failure.
Report-producing commands render a PNG next to each delimited output so a
run directory reads at a glance.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .checks import require_gradient_fidelity
from .config import RunConfig, apply_overrides, load_run_config
from .errors import ConfigError, DataError, NumericFailure, ValidationError
from .evaluation import pair_eval, subject_eval
from .figures import save_loss_curve, save_score_histogram, save_sweep_chart
from .graphs import (
    knn_graph,
    laplacians,
    mean_affinity,
    read_adjacency_csv,
    write_adjacency_csv,
)
from .siamese import load_model, save_model
from .synthetic import generate_cohort, load_cohort
from .training import stratified_split, train, write_history_csv
from .walks import higher_order_representation

SWEEPABLE = {
    "order": ("gcn", "order"),
    "n_layers": ("gcn", "n_layers"),
    "walk_length": ("walks", "walk_length"),
    "window": ("walks", "window"),
}


def _load_config(args) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    higher_order = False if getattr(args, "no_higher_order", False) else None
    return apply_overrides(
        config,
        seed=getattr(args, "seed", None),
        out_dir=getattr(args, "out", None),
        loss=getattr(args, "loss", None),
        threads=getattr(args, "threads", None),
        higher_order=higher_order,
        epochs=getattr(args, "epochs", None),
    )


def _manifest_path(data_arg) -> Path:
    path = Path(data_arg)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    return path


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _shared_graph(config, cohort, train_ids, out_dir=None, walk_log=None):
    """The training-set graph either walk-augmented or plain k-nn."""
    affinities = cohort.affinities(train_ids)
    k = config.knn_k(cohort.n_nodes)
    if config.higher_order:
        return higher_order_representation(
            affinities,
            k,
            config.walks,
            config.seed,
            walk_log=walk_log,
            threads=config.threads,
        )
    graph = knn_graph(mean_affinity(affinities), k)
    return graph, laplacians(graph)


def cmd_gen_data(args) -> int:
    config = _load_config(args)
    out_dir = Path(args.out if args.out else config.out_dir)
    spec = config.synth
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    _, manifest = generate_cohort(spec, out_dir=out_dir)
    print(f"wrote {len(manifest['subjects'])} subjects to {out_dir / 'manifest.json'}")
    return 0


def _train_pipeline(config, cohort, out_dir: Path):
    train_ids, test_ids = stratified_split(cohort, config.train_fraction, config.seed)
    graph, lap = _shared_graph(
        config, cohort, train_ids, walk_log=out_dir / "walks.txt" if config.higher_order else None
    )
    model, history = train(cohort, train_ids, lap, config.to_train_config())
    return train_ids, test_ids, graph, lap, model, history


def cmd_train(args) -> int:
    config = _load_config(args)
    out_dir = Path(args.out if args.out else config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cohort = load_cohort(_manifest_path(args.data))
    train_ids, test_ids, graph, lap, model, history = _train_pipeline(config, cohort, out_dir)
    save_model(out_dir / "checkpoint.bin", model)
    write_history_csv(out_dir / "history.csv", history)
    save_loss_curve(history, out_dir / "loss_curve.png")
    write_adjacency_csv(out_dir / "merged_adjacency.csv", graph)
    _write_json(out_dir / "split.json", {"train": train_ids, "test": test_ids})
    _write_json(out_dir / "run_config.json", config.to_dict())
    final = history[-1].mean_loss if history else float("nan")
    print(
        f"trained on {len(train_ids)} subjects "
        f"({len(history)} epochs, final mean loss {final:.6f})"
    )
    print(f"checkpoint: {out_dir / 'checkpoint.bin'}")
    return 0


def cmd_eval(args) -> int:
    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise DataError(f"no checkpoint at {checkpoint}")
    run_dir = checkpoint.parent
    model = load_model(checkpoint)
    split_path = run_dir / "split.json"
    if not split_path.exists():
        raise DataError(f"no split file at {split_path}; it is written at training time")
    with open(split_path, "r", encoding="ascii") as fh:
        split = json.load(fh)
    adjacency_path = run_dir / "merged_adjacency.csv"
    if not adjacency_path.exists():
        raise DataError(f"no shared graph at {adjacency_path}; it is written at training time")
    lap = laplacians(read_adjacency_csv(adjacency_path))
    cohort = load_cohort(_manifest_path(args.data))
    out_dir = Path(args.out) if args.out else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = {}
    config_path = run_dir / "run_config.json"
    if config_path.exists():
        with open(config_path, "r", encoding="ascii") as fh:
            echo = json.load(fh)
    pair_report = pair_eval(model, lap, cohort, split["test"], config=echo)
    pair_report.save(
        out_dir / "report.json", scores_path=out_dir / "scores.csv", scores_name="scores.csv"
    )
    save_score_histogram(pair_report.per_pair_scores, out_dir / "score_histogram.png")
    subject_report = subject_eval(model, lap, cohort, split["train"], split["test"], config=echo)
    _write_json(out_dir / "subject_report.json", subject_report.to_json_dict())
    print(
        f"pair auc {pair_report.auc:.4f}, pair accuracy {pair_report.accuracy:.4f} "
        f"({pair_report.n_pairs} pairs)"
    )
    print(f"subject accuracy {subject_report.accuracy:.4f} ({len(split['test'])} subjects)")
    return 0


def _parse_sweep(text: str):
    if "=" not in text:
        raise ConfigError(f"sweep spec must look like name=v1,v2,..., got {text!r}")
    name, _, values = text.partition("=")
    name = name.strip()
    if name not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {name!r}; choose from {sorted(SWEEPABLE)}")
    try:
        parsed = [int(tok) for tok in values.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"sweep values for {name!r} must be integers, got {values!r}") from None
    if not parsed:
        raise ConfigError(f"sweep spec for {name!r} lists no values")
    return name, parsed


def cmd_sweep(args) -> int:
    config = _load_config(args)
    out_dir = Path(args.out if args.out else config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    param, values = _parse_sweep(args.sweep)
    if args.data:
        cohort = load_cohort(_manifest_path(args.data))
    else:
        cohort, _ = generate_cohort(config.synth, out_dir=out_dir / "dataset")
    section, fieldname = SWEEPABLE[param]
    rows = []
    for value in values:
        try:
            inner = dataclasses.replace(getattr(config, section), **{fieldname: value})
            cell = dataclasses.replace(config, **{section: inner})
        except ValidationError as exc:
            raise ConfigError(str(exc)) from None
        _, test_ids, _, lap, model, _ = _train_pipeline(cell, cohort, out_dir)
        report = pair_eval(model, lap, cohort, test_ids)
        rows.append({param: value, "auc": report.auc})
        print(f"{param}={value}: pair auc {report.auc:.4f}")
    with open(out_dir / "sweep.csv", "w", encoding="ascii") as fh:
        fh.write(f"{param},auc\n")
        for row in rows:
            fh.write(f"{row[param]},{row['auc']:.17g}\n")
    save_sweep_chart(rows, param, out_dir / "sweep.png")
    print(f"wrote {len(rows)} rows to {out_dir / 'sweep.csv'}")
    return 0


def cmd_grad_check(args) -> int:
    seed = args.seed if args.seed is not None else 7
    results = require_gradient_fidelity(seed)
    for loss_name, report in results.items():
        worst = report["worst"]
        print(
            f"{loss_name}: max relative error {report['max_rel_err']:.3e} over "
            f"{report['n_parameters']} parameters "
            f"(worst at {worst['tensor']}{list(worst['coordinate'])})"
        )
    print("gradient check passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphsim",
        description="Similarity learning between connectivity graphs with walk-augmented spectral filters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, train_flags=False):
        p.add_argument("--config", help="TOML or JSON run configuration")
        p.add_argument("--seed", type=int, help="override the run seed (unsigned 64-bit)")
        p.add_argument("--out", help="output directory")
        if data:
            p.add_argument("--data", required=True, help="dataset directory or manifest.json")
        if train_flags:
            p.add_argument("--threads", type=int, help="worker threads for the walk stage")
            p.add_argument(
                "--no-higher-order",
                action="store_true",
                help="skip the walk augmentation and use the plain k-nn graph",
            )
            p.add_argument("--loss", choices=["hinge", "convar"], help="training loss")
            p.add_argument("--epochs", type=int, help="override the epoch count")

    p_gen = sub.add_parser("gen-data", help="generate a synthetic two-class cohort")
    common(p_gen)
    p_gen.set_defaults(handler=cmd_gen_data)

    p_train = sub.add_parser("train", help="train a model on a dataset")
    common(p_train, data=True, train_flags=True)
    p_train.set_defaults(handler=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a trained checkpoint")
    common(p_eval, data=True)
    p_eval.add_argument("--checkpoint", required=True, help="path to checkpoint.bin")
    p_eval.set_defaults(handler=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="train and evaluate across one parameter")
    common(p_sweep, train_flags=True)
    p_sweep.add_argument("--data", help="dataset directory; generated from config when omitted")
    p_sweep.add_argument(
        "--sweep",
        required=True,
        help=f"spec like order=1,2,3; sweepable: {', '.join(sorted(SWEEPABLE))}",
    )
    p_sweep.set_defaults(handler=cmd_sweep)

    p_check = sub.add_parser("grad-check", help="verify analytic gradients by finite differences")
    common(p_check)
    p_check.set_defaults(handler=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ValidationError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
