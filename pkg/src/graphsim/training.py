"""Cohorts, pair construction, batching, Adam, and the training loop.

The loop trains on all unordered pairs of training subjects. Per batch it
embeds each participating subject once (shared-weight twin branches over the
same Laplacian), combines embeddings per pair, and pushes the accumulated
per-subject output gradients through a single backward pass. That keeps the
cost linear in subjects per batch instead of quadratic, without changing the
computed gradient: the pair scores and their per-pair gradients are summed
exactly as in the pair-at-a-time formulation, just grouped by subject.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from math import ceil
from typing import NamedTuple, Sequence

import numpy as np

from .errors import NumericFailure, ValidationError
from .graphs import AffinityMatrix, LaplacianSet
from .siamese import (
    ConVarParams,
    PairScore,
    SiameseModel,
    convar_grad,
    convar_loss,
    hinge_grad,
    hinge_loss,
    init_model,
)
from .gcn import stack_backward, stack_forward

_NS_SPLIT = 301
_NS_BATCH = 302
_NS_DROPOUT = 303
_NS_SUBSAMPLE = 304

LOSS_NAMES = ("hinge", "convar")


class Subject(NamedTuple):
    id: str
    label: str
    affinity: AffinityMatrix


class LabeledPair(NamedTuple):
    """Unordered subject pair with label +1 (same class) or -1 (different)."""

    i: str
    j: str
    label: int


@dataclass(frozen=True)
class Cohort:
    """A labeled collection of subjects over a common node set."""

    subjects: tuple[Subject, ...]

    def __post_init__(self):
        subjects = tuple(self.subjects)
        if len(subjects) < 2:
            raise ValidationError("a cohort needs at least 2 subjects")
        n = subjects[0].affinity.n_nodes
        seen = set()
        for s in subjects:
            if s.id in seen:
                raise ValidationError(f"duplicate subject id {s.id!r}")
            seen.add(s.id)
            if s.affinity.n_nodes != n:
                raise ValidationError(
                    f"subject {s.id!r} has {s.affinity.n_nodes} nodes, expected {n}"
                )
        if len({s.label for s in subjects}) < 2:
            raise ValidationError("a cohort needs at least 2 distinct class labels")
        object.__setattr__(self, "subjects", subjects)

    @property
    def n_nodes(self) -> int:
        return self.subjects[0].affinity.n_nodes

    @property
    def classes(self) -> list[str]:
        return sorted({s.label for s in self.subjects})

    def index_of(self, subject_id: str) -> int:
        for pos, s in enumerate(self.subjects):
            if s.id == subject_id:
                return pos
        raise ValidationError(f"unknown subject id {subject_id!r}")

    def subject(self, subject_id: str) -> Subject:
        return self.subjects[self.index_of(subject_id)]

    def label_of(self, subject_id: str) -> str:
        return self.subject(subject_id).label

    def affinities(self, ids: Sequence[str]) -> list[AffinityMatrix]:
        return [self.subject(i).affinity for i in ids]

    def features(self, ids: Sequence[str]) -> np.ndarray:
        """Stacked node-feature inputs, one (n, n) affinity per subject."""
        return np.stack([self.subject(i).affinity.values for i in ids])


@dataclass(frozen=True)
class PairSet:
    pairs: tuple[LabeledPair, ...]

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def n_same(self) -> int:
        return sum(1 for p in self.pairs if p.label == 1)

    @property
    def n_different(self) -> int:
        return sum(1 for p in self.pairs if p.label == -1)


def make_pairs(cohort: Cohort, ids: Sequence[str]) -> PairSet:
    """All unordered pairs among ids, ordered by cohort position.

    Labels are +1 for same class and -1 for different class. A single-class
    id list is fine and yields all +1 pairs.
    """
    if len(ids) < 2:
        raise ValidationError("need at least 2 subjects to form pairs")
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate ids in the pair subset")
    ordered = sorted(ids, key=cohort.index_of)
    pairs = []
    for a in range(len(ordered)):
        for b in range(a + 1, len(ordered)):
            same = cohort.label_of(ordered[a]) == cohort.label_of(ordered[b])
            pairs.append(LabeledPair(ordered[a], ordered[b], 1 if same else -1))
    return PairSet(tuple(pairs))


def stratified_split(cohort: Cohort, train_fraction: float, seed: int):
    """Per-class shuffled split into (train_ids, test_ids), cohort order.

    The per-class train count is round(train_fraction * class size), clamped
    so both sides stay non-empty for classes with at least 2 members.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(_NS_SPLIT,))))
    train, test = [], []
    for label in cohort.classes:
        ids = [s.id for s in cohort.subjects if s.label == label]
        n_train = int(round(train_fraction * len(ids)))
        if len(ids) >= 2:
            n_train = min(max(n_train, 1), len(ids) - 1)
        perm = rng.permutation(len(ids))
        chosen = {ids[k] for k in perm[:n_train]}
        train.extend(i for i in ids if i in chosen)
        test.extend(i for i in ids if i not in chosen)
    train.sort(key=cohort.index_of)
    test.sort(key=cohort.index_of)
    return train, test


def balanced_batches(
    pairs: Sequence[LabeledPair],
    batch_pairs: int,
    rng: np.random.Generator,
    require_balance: bool = False,
) -> list[list[LabeledPair]]:
    """Shuffled batches of at most batch_pairs, half each polarity when possible.

    Each batch draws ceil(size/2) same-class and floor(size/2)
    different-class pairs from separately shuffled queues, topping up from
    the other queue once one runs dry, so every pair appears exactly once
    per epoch. With require_balance, fewer than 2 pairs of either polarity
    overall is an error; trailing batches can still go single-polarity when
    the pool is heavily skewed, which the variance loss then reports.
    """
    if batch_pairs < 1:
        raise ValidationError(f"batch_pairs must be >= 1, got {batch_pairs}")
    pairs = list(pairs)
    if not pairs:
        return []
    pos = [p for p in pairs if p.label == 1]
    neg = [p for p in pairs if p.label == -1]
    if require_balance and (len(pos) < 2 or len(neg) < 2):
        raise ValidationError(
            "balanced batching needs at least 2 same-class and 2 different-class "
            f"pairs, got {len(pos)} and {len(neg)}"
        )
    pos_queue = [pos[k] for k in rng.permutation(len(pos))]
    neg_queue = [neg[k] for k in rng.permutation(len(neg))]
    batches: list[list[LabeledPair]] = []
    at_pos = at_neg = 0
    remaining = len(pairs)
    while remaining > 0:
        size = min(batch_pairs, remaining)
        take_pos = min(ceil(size / 2), len(pos_queue) - at_pos)
        take_neg = min(size - take_pos, len(neg_queue) - at_neg)
        take_pos = min(take_pos + (size - take_pos - take_neg), len(pos_queue) - at_pos)
        batch = pos_queue[at_pos : at_pos + take_pos] + neg_queue[at_neg : at_neg + take_neg]
        at_pos += take_pos
        at_neg += take_neg
        remaining -= len(batch)
        batches.append(batch)
    return batches


@dataclass
class AdamState:
    """First and second moment accumulators, one pair per parameter array."""

    lr: float
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: Sequence[np.ndarray], lr: float) -> "AdamState":
        # lr = 0 is allowed and makes the step a no-op on parameters, which
        # the tests use as an identity check; negative rates are rejected.
        if lr < 0.0:
            raise ValidationError(f"learning rate must be >= 0, got {lr}")
        return cls(lr=lr, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(
    state: AdamState,
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    l2: float = 0.0,
    decay: Sequence[bool] | None = None,
):
    """One bias-corrected Adam update, applied to params in place.

    The L2 term is folded into the gradient (g + l2 * param) before the
    moment updates, only for parameters whose decay flag is set. Returns
    (params, state) for chaining.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValidationError("params, grads, and optimizer state disagree in length")
    if decay is not None and len(decay) != len(params):
        raise ValidationError("decay flags must match params in length")
    state.t += 1
    correct1 = 1.0 - state.beta1 ** state.t
    correct2 = 1.0 - state.beta2 ** state.t
    for idx, (param, grad) in enumerate(zip(params, grads)):
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != param.shape:
            raise ValidationError(
                f"gradient {idx} has shape {grad.shape}, parameter has {param.shape}"
            )
        if l2 != 0.0 and (decay is None or decay[idx]):
            grad = grad + l2 * param
        state.m[idx] *= state.beta1
        state.m[idx] += (1.0 - state.beta1) * grad
        state.v[idx] *= state.beta2
        state.v[idx] += (1.0 - state.beta2) * (grad * grad)
        m_hat = state.m[idx] / correct1
        v_hat = state.v[idx] / correct2
        param -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of the twin network."""

    n_layers: int = 2
    features: int = 32
    order: int = 3
    dropout_keep: float = 0.8
    relu_last: bool = True

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValidationError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.features < 1:
            raise ValidationError(f"features must be >= 1, got {self.features}")
        if self.order < 1:
            raise ValidationError(f"order must be >= 1, got {self.order}")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValidationError(f"dropout_keep must be in (0, 1], got {self.dropout_keep}")


@dataclass(frozen=True)
class TrainConfig:
    """Everything train() needs besides the data and the Laplacian."""

    epochs: int = 200
    batch_pairs: int = 2048
    loss: str = "hinge"
    convar: ConVarParams = field(default_factory=ConVarParams)
    l2: float = 0.0005
    lr: float = 0.001
    seed: int = 0
    early_stop_patience: int = 30
    max_pairs_per_epoch: int | None = None
    model: ModelSpec = field(default_factory=ModelSpec)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_pairs < 1:
            raise ValidationError(f"batch_pairs must be >= 1, got {self.batch_pairs}")
        if self.loss not in LOSS_NAMES:
            raise ValidationError(f"loss must be one of {LOSS_NAMES}, got {self.loss!r}")
        if self.l2 < 0.0:
            raise ValidationError(f"l2 must be >= 0, got {self.l2}")
        if self.lr <= 0.0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if self.early_stop_patience < 1:
            raise ValidationError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if self.max_pairs_per_epoch is not None and self.max_pairs_per_epoch < 1:
            raise ValidationError(
                f"max_pairs_per_epoch must be >= 1 when set, got {self.max_pairs_per_epoch}"
            )


class EpochStats(NamedTuple):
    epoch: int
    mean_loss: float
    wall_ms: float


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def score_pairs_batch(
    model: SiameseModel,
    lap: LaplacianSet,
    features: np.ndarray,
    index_pairs: Sequence[tuple[int, int]],
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Score many pairs sharing one embedding pass per distinct subject.

    features is the stacked (subjects, n, n) input array; index_pairs holds
    positions into it. Returns (scores, context) where context feeds
    batch_backward. The elementwise product keeps each score symmetric in
    its pair regardless of batching.
    """
    if features.ndim != 3:
        raise ValidationError(f"features must be 3-d (subjects, n, f), got shape {features.shape}")
    if len(index_pairs) == 0:
        raise ValidationError("cannot score an empty pair list")
    used = sorted({k for ij in index_pairs for k in ij})
    local = {k: t for t, k in enumerate(used)}
    out, cache = stack_forward(model.gcn, lap, features[used])
    flat = out.reshape(len(used), -1)
    if flat.shape[1] != model.fc_weights.size:
        raise ValidationError(
            f"embedding size {flat.shape[1]} does not match fc_weights size {model.fc_weights.size}"
        )
    ii = np.array([local[i] for i, _ in index_pairs])
    jj = np.array([local[j] for _, j in index_pairs])
    product = flat[ii] * flat[jj]
    mask = None
    if training and model.dropout_keep < 1.0:
        if rng is None:
            raise ValidationError("training with dropout requires an rng")
        mask = (rng.random(product.shape) < model.dropout_keep) / model.dropout_keep
        product = product * mask
    scores = product @ model.fc_weights + float(model.fc_bias)
    context = (cache, flat, ii, jj, product, mask, out.shape)
    return scores, context


def batch_backward(model: SiameseModel, context, d_scores: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients for a batch scored by score_pairs_batch.

    Per-pair contributions to each subject's embedding gradient are summed
    before the single backward pass through the stack; by linearity this
    equals running the pair-at-a-time backward and adding the results.
    """
    cache, flat, ii, jj, product, mask, out_shape = context
    d_scores = np.asarray(d_scores, dtype=np.float64)
    d_weights = product.T @ d_scores
    d_bias = np.asarray(d_scores.sum(), dtype=np.float64)
    d_used = d_scores[:, None] * model.fc_weights[None, :]
    d_product = d_used if mask is None else d_used * mask
    d_flat = np.zeros_like(flat)
    np.add.at(d_flat, ii, d_product * flat[jj])
    np.add.at(d_flat, jj, d_product * flat[ii])
    bank_grads, _ = stack_backward(model.gcn, cache, d_flat.reshape(out_shape))
    return bank_grads + [d_weights, d_bias]


def _batch_pair_scores(batch, scores) -> list[PairScore]:
    return [
        PairScore(p.i, p.j, float(s), p.label)
        for p, s in zip(batch, scores)
    ]


def train(
    cohort: Cohort,
    train_ids: Sequence[str],
    lap: LaplacianSet,
    config: TrainConfig,
):
    """Train a twin model on all pairs of the given training subjects.

    Returns (model, history) where history holds one EpochStats per epoch
    actually run. Training stops early when the epoch mean loss has not
    improved by more than 1e-5 for early_stop_patience consecutive epochs,
    and the parameters from the best epoch are restored before returning.
    """
    if lap.n_nodes != cohort.n_nodes:
        raise ValidationError(
            f"Laplacian is over {lap.n_nodes} nodes but the cohort has {cohort.n_nodes}"
        )
    ids = list(train_ids)
    pair_set = make_pairs(cohort, ids)
    ordered = sorted(ids, key=cohort.index_of)
    position = {sid: k for k, sid in enumerate(ordered)}
    features = cohort.features(ordered)
    spec = config.model
    model = init_model(
        cohort.n_nodes,
        spec.n_layers,
        spec.features,
        spec.order,
        seed=config.seed,
        dropout_keep=spec.dropout_keep,
        relu_last=spec.relu_last,
    )
    params = model.parameters()
    decay = model.decay_flags()
    state = AdamState.create(params, lr=config.lr)
    all_pairs = list(pair_set.pairs)
    history: list[EpochStats] = []
    best_loss = np.inf
    best_params = None
    stale = 0
    for epoch in range(config.epochs):
        started = time.perf_counter()
        epoch_pairs = all_pairs
        if config.max_pairs_per_epoch is not None and config.max_pairs_per_epoch < len(all_pairs):
            pick = _stream(config.seed, _NS_SUBSAMPLE, epoch).choice(
                len(all_pairs), size=config.max_pairs_per_epoch, replace=False
            )
            epoch_pairs = [all_pairs[k] for k in np.sort(pick)]
        batches = balanced_batches(
            epoch_pairs,
            config.batch_pairs,
            _stream(config.seed, _NS_BATCH, epoch),
            require_balance=config.loss == "convar",
        )
        batch_losses = []
        for b_idx, batch in enumerate(batches):
            index_pairs = [(position[p.i], position[p.j]) for p in batch]
            drop_rng = _stream(config.seed, _NS_DROPOUT, epoch, b_idx)
            scores, context = score_pairs_batch(
                model, lap, features, index_pairs, training=True, rng=drop_rng
            )
            pair_scores = _batch_pair_scores(batch, scores)
            if config.loss == "hinge":
                loss = hinge_loss(pair_scores)
                d_scores = hinge_grad(pair_scores)
            else:
                loss = convar_loss(pair_scores, config.convar)
                d_scores = convar_grad(pair_scores, config.convar)
            if not np.isfinite(loss):
                raise NumericFailure(
                    f"non-finite loss {loss!r} at epoch {epoch}, batch {b_idx}"
                )
            batch_losses.append(loss)
            grads = batch_backward(model, context, d_scores)
            adam_step(state, params, grads, l2=config.l2, decay=decay)
        mean_loss = float(np.mean(batch_losses))
        wall_ms = (time.perf_counter() - started) * 1000.0
        history.append(EpochStats(epoch, mean_loss, wall_ms))
        if mean_loss < best_loss - 1e-5:
            best_loss = mean_loss
            best_params = [p.copy() for p in params]
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    if best_params is not None:
        for param, best in zip(params, best_params):
            param[...] = best
    return model, history


def write_history_csv(path, history: Sequence[EpochStats]) -> None:
    """Write per-epoch stats as CSV: epoch, mean_loss, wall_ms."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("epoch,mean_loss,wall_ms\n")
        for row in history:
            fh.write(f"{row.epoch},{row.mean_loss:.17g},{row.wall_ms:.3f}\n")
