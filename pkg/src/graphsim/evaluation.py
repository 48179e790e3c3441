"""Evaluation: ranking quality, pair accuracy, and subject classification.

The AUC here is the exact Mann-Whitney statistic with ties counted as half,
computed from integer win counts so it agrees with the quadratic definition
to the last bit. Subject classification follows a weighted nearest-neighbour
vote: each class accumulates the positive similarity scores of its training
members, and the heaviest class wins.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError
from .graphs import LaplacianSet
from .siamese import PairScore, SiameseModel
from .training import Cohort, make_pairs, score_pairs_batch


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability that a random positive outscores a random negative.

    Ties contribute 1/2. Both classes must be present. The count of
    (positive, negative) orderings is accumulated in integer half-units, so
    the result is exactly the naive all-pairs average.
    """
    values = np.asarray(scores, dtype=np.float64)
    marks = np.asarray(labels)
    if values.ndim != 1 or values.shape != marks.shape:
        raise ValidationError(
            f"scores and labels must be equal-length vectors, got {values.shape} and {marks.shape}"
        )
    if not np.isin(marks, (-1, 1)).all():
        raise ValidationError("labels must be +1 or -1")
    n_pos = int((marks == 1).sum())
    n_neg = int((marks == -1).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs at least one positive and one negative label")
    order = np.argsort(values, kind="stable")
    doubled_wins = 0
    negatives_below = 0
    i = 0
    n = values.size
    while i < n:
        j = i
        group_pos = 0
        group_neg = 0
        while j < n and values[order[j]] == values[order[i]]:
            if marks[order[j]] == 1:
                group_pos += 1
            else:
                group_neg += 1
            j += 1
        doubled_wins += 2 * group_pos * negatives_below + group_pos * group_neg
        negatives_below += group_neg
        i = j
    return doubled_wins / (2 * n_pos * n_neg)


@dataclass
class EvalReport:
    """Scores plus summary metrics for one evaluation run."""

    auc: float
    accuracy: float
    per_pair_scores: list[PairScore]
    config: dict = field(default_factory=dict)

    @property
    def n_pairs(self) -> int:
        return len(self.per_pair_scores)

    def to_json_dict(self, scores_path: str | None = None) -> dict:
        out = {
            "auc": self.auc,
            "accuracy": self.accuracy,
            "n_pairs": self.n_pairs,
            "config": self.config,
        }
        if scores_path is not None:
            out["scores_path"] = scores_path
        return out

    def save(self, report_path, scores_path=None, scores_name=None) -> None:
        """Write the JSON report, and the per-pair score CSV when asked.

        The report records scores_name when given (use a name relative to
        the report's directory for a relocatable run folder), otherwise the
        scores_path as passed.
        """
        recorded = None
        if scores_path is not None:
            recorded = scores_name if scores_name is not None else str(scores_path)
            with open(scores_path, "w", encoding="ascii", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["i", "j", "label", "score"])
                for pair in self.per_pair_scores:
                    writer.writerow([pair.i, pair.j, pair.label, f"{pair.score:.17g}"])
        with open(report_path, "w", encoding="ascii") as fh:
            json.dump(self.to_json_dict(recorded), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _scored_pairs(model, lap, cohort, pairs) -> list[PairScore]:
    ids = sorted({k for p in pairs for k in (p.i, p.j)}, key=cohort.index_of)
    position = {sid: t for t, sid in enumerate(ids)}
    features = cohort.features(ids)
    index_pairs = [(position[p.i], position[p.j]) for p in pairs]
    scores, _ = score_pairs_batch(model, lap, features, index_pairs, training=False)
    return [PairScore(p.i, p.j, float(s), p.label) for p, s in zip(pairs, scores)]


def pair_eval(
    model: SiameseModel,
    lap: LaplacianSet,
    cohort: Cohort,
    test_ids: Sequence[str],
    config: dict | None = None,
) -> EvalReport:
    """Score all unordered test pairs in evaluation mode and summarize.

    Accuracy uses the fixed threshold 0: a pair is called same-class when
    its score is positive.
    """
    pairs = make_pairs(cohort, test_ids).pairs
    scored = _scored_pairs(model, lap, cohort, pairs)
    values = [p.score for p in scored]
    labels = [p.label for p in scored]
    correct = sum(1 for p in scored if (p.score > 0.0) == (p.label == 1))
    return EvalReport(
        auc=auc(values, labels),
        accuracy=correct / len(scored),
        per_pair_scores=scored,
        config=dict(config or {}),
    )


def weighted_knn_classify(
    target_id: str,
    train_ids: Sequence[str],
    labels: Sequence[str],
    similarity: Callable[[str, str], float],
) -> str:
    """Classify by summed positive similarity per class.

    Each class's weight is the sum of the target's positive similarity
    scores to that class's training subjects. If no class has positive
    weight, or the top weight is tied, the label of the single most similar
    training subject decides, with remaining ties going to the class that
    sorts first.
    """
    if len(train_ids) == 0:
        raise ValidationError("cannot classify against an empty training set")
    if len(labels) != len(train_ids):
        raise ValidationError("labels must parallel train_ids")
    sims = [float(similarity(target_id, j)) for j in train_ids]
    classes = sorted(set(labels))
    weight = {c: 0.0 for c in classes}
    for s, lab in zip(sims, labels):
        if s > 0.0:
            weight[lab] += s
    top = max(weight.values())
    winners = [c for c in classes if weight[c] == top]
    if top > 0.0 and len(winners) == 1:
        return winners[0]
    best = max(sims)
    candidates = sorted(lab for s, lab in zip(sims, labels) if s == best)
    return candidates[0]


class LabeledPairLike:
    """Minimal pair record for cross-set scoring."""

    __slots__ = ("i", "j", "label")

    def __init__(self, i, j, label):
        self.i = i
        self.j = j
        self.label = label


def subject_eval(
    model: SiameseModel,
    lap: LaplacianSet,
    cohort: Cohort,
    train_ids: Sequence[str],
    test_ids: Sequence[str],
    config: dict | None = None,
) -> EvalReport:
    """Classify each test subject against the training set.

    The report's accuracy is the fraction of correctly labeled test
    subjects; its AUC and per-pair scores cover the test-train cross pairs
    with same/different class labels.
    """
    if len(test_ids) == 0:
        raise ValidationError("no test subjects to classify")
    train_list = list(train_ids)
    cross = [
        LabeledPairLike(t, j, 1 if cohort.label_of(t) == cohort.label_of(j) else -1)
        for t in test_ids
        for j in train_list
    ]
    scored = _scored_pairs(model, lap, cohort, cross)
    table = {(p.i, p.j): p.score for p in scored}
    train_labels = [cohort.label_of(j) for j in train_list]
    correct = 0
    for t in test_ids:
        predicted = weighted_knn_classify(
            t, train_list, train_labels, lambda a, b: table[(a, b)]
        )
        if predicted == cohort.label_of(t):
            correct += 1
    values = [p.score for p in scored]
    labels = [p.label for p in scored]
    return EvalReport(
        auc=auc(values, labels),
        accuracy=correct / len(test_ids),
        per_pair_scores=scored,
        config=dict(config or {}),
    )


def upper_triangle_features(affinity) -> np.ndarray:
    """Strict upper triangle of an affinity matrix, flattened row-major."""
    values = affinity.values
    iu = np.triu_indices(values.shape[0], k=1)
    return values[iu].copy()


def baseline_similarity(features_i: np.ndarray, features_j: np.ndarray) -> float:
    """One minus the euclidean distance between flat feature vectors."""
    a = np.asarray(features_i, dtype=np.float64)
    b = np.asarray(features_j, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(
            f"baseline features must be equal-length vectors, got {a.shape} and {b.shape}"
        )
    return 1.0 - float(np.linalg.norm(a - b))
