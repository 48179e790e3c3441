"""Figure rendering for run artifacts.

Every report-producing command drops a PNG next to its delimited output so a
run directory can be skimmed without loading anything into a notebook. All
rendering uses the Agg backend and writes to files; nothing here opens a
window.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .siamese import PairScore
from .training import EpochStats


def save_loss_curve(history: Sequence[EpochStats], path) -> None:
    """Training loss against epoch."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    if history:
        epochs = [row.epoch for row in history]
        losses = [row.mean_loss for row in history]
        ax.plot(epochs, losses, lw=1.5, color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_score_histogram(scores: Sequence[PairScore], path) -> None:
    """Overlaid score histograms for same-class and different-class pairs."""
    same = [p.score for p in scores if p.label == 1]
    diff = [p.score for p in scores if p.label == -1]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    lo = min(same + diff, default=-1.0)
    hi = max(same + diff, default=1.0)
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    bins = np.linspace(lo, hi, 40)
    if same:
        ax.hist(same, bins=bins, alpha=0.6, label="same class", color="tab:green")
    if diff:
        ax.hist(diff, bins=bins, alpha=0.6, label="different class", color="tab:red")
    ax.axvline(0.0, color="k", lw=1.0, ls="--")
    ax.set_xlabel("pair score")
    ax.set_ylabel("count")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_chart(rows: Sequence[dict], param: str, path) -> None:
    """AUC against one swept parameter, one bar per value."""
    values = [str(row[param]) for row in rows]
    aucs = [float(row["auc"]) for row in rows]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    xs = np.arange(len(values))
    ax.bar(xs, aucs, color="tab:blue", width=0.7)
    ax.set_xticks(xs)
    ax.set_xticklabels(values)
    ax.set_ylim(0.0, 1.05)
    ax.set_xlabel(param)
    ax.set_ylabel("pair AUC")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
