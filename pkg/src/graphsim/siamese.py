"""Twin-network similarity scoring and the metric-learning losses.

Both graphs of a pair run through the same filter stack (shared weights,
literally the same arrays). The flattened embeddings are combined by
elementwise product, passed through inverted dropout during training, and
reduced to a scalar score by a single fully connected layer. The product is
commutative, so the score is symmetric in its two inputs bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError, ValidationError
from .gcn import (
    ChebFilterBank,
    GCNStack,
    StackCache,
    init_stack,
    read_tensor_file,
    stack_backward,
    stack_forward,
    write_tensor_file,
)
from .graphs import LaplacianSet

_NS_FC = 202


class PairScore(NamedTuple):
    """A scored pair: subject ids, model score, and the +1/-1 same-class label."""

    i: str
    j: str
    score: float
    label: int


@dataclass
class SiameseModel:
    """Shared filter stack plus the scalar scoring head.

    fc_bias is kept as a 0-d array so the optimizer can update every
    parameter in place through one uniform list.
    """

    gcn: GCNStack
    fc_weights: np.ndarray
    fc_bias: np.ndarray
    dropout_keep: float = 0.8

    def __post_init__(self):
        self.fc_weights = np.asarray(self.fc_weights, dtype=np.float64)
        self.fc_bias = np.asarray(self.fc_bias, dtype=np.float64)
        if self.fc_weights.ndim != 1:
            raise ValidationError(f"fc_weights must be 1-d, got shape {self.fc_weights.shape}")
        if self.fc_bias.shape != ():
            raise ValidationError(f"fc_bias must be scalar, got shape {self.fc_bias.shape}")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ValidationError(f"dropout_keep must be in (0, 1], got {self.dropout_keep}")

    def parameters(self) -> list[np.ndarray]:
        """All trainable arrays: filter banks first, then fc weights and bias."""
        return [bank.theta for bank in self.gcn.layers] + [self.fc_weights, self.fc_bias]

    def decay_flags(self) -> list[bool]:
        """Which parameters receive L2 decay; the bias does not."""
        return [True] * len(self.gcn.layers) + [True, False]


@dataclass
class PairCache:
    """Forward intermediates for one scored pair."""

    model: SiameseModel
    cache_i: StackCache
    cache_j: StackCache
    h_i: np.ndarray
    h_j: np.ndarray
    masked_product: np.ndarray
    mask: np.ndarray | None


def init_model(
    n_nodes: int,
    n_layers: int,
    features: int,
    order: int,
    seed: int,
    dropout_keep: float = 0.8,
    relu_last: bool = True,
) -> SiameseModel:
    """Seed-deterministic model with n_layers equal-width filter layers."""
    if n_layers < 1:
        raise ValidationError(f"n_layers must be >= 1, got {n_layers}")
    sizes = [n_nodes] + [features] * n_layers
    gcn = init_stack(sizes, order, seed, relu_last=relu_last)
    dim = n_nodes * features
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(_NS_FC,))))
    bound = np.sqrt(6.0 / (dim + 1))
    fc_weights = rng.uniform(-bound, bound, size=dim)
    return SiameseModel(
        gcn=gcn,
        fc_weights=fc_weights,
        fc_bias=np.zeros(()),
        dropout_keep=dropout_keep,
    )


def similarity_forward(
    model: SiameseModel,
    lap: LaplacianSet,
    x_i: np.ndarray,
    x_j: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Score one pair. Returns (score, cache).

    During training with dropout_keep < 1 an inverted-dropout mask is drawn
    from rng and applied to the elementwise product, scaling kept entries by
    1/keep so the evaluation pass needs no rescaling. With dropout_keep = 1
    the training and evaluation passes coincide exactly.
    """
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.shape != x_j.shape:
        raise ValidationError(f"pair inputs disagree in shape: {x_i.shape} vs {x_j.shape}")
    if x_i.ndim != 2:
        raise ValidationError(f"pair inputs must be 2-d node-feature matrices, got shape {x_i.shape}")
    out_i, cache_i = stack_forward(model.gcn, lap, x_i)
    out_j, cache_j = stack_forward(model.gcn, lap, x_j)
    h_i = out_i.reshape(-1)
    h_j = out_j.reshape(-1)
    if h_i.size != model.fc_weights.size:
        raise ValidationError(
            f"embedding size {h_i.size} does not match fc_weights size {model.fc_weights.size}"
        )
    product = h_i * h_j
    mask = None
    if training and model.dropout_keep < 1.0:
        if rng is None:
            raise ValidationError("training with dropout requires an rng")
        mask = (rng.random(product.size) < model.dropout_keep) / model.dropout_keep
        product = product * mask
    score = float(model.fc_weights @ product + model.fc_bias)
    cache = PairCache(
        model=model,
        cache_i=cache_i,
        cache_j=cache_j,
        h_i=h_i,
        h_j=h_j,
        masked_product=product,
        mask=mask,
    )
    return score, cache


def pair_backward(model: SiameseModel, cache: PairCache, d_score: float) -> list[np.ndarray]:
    """Gradients of d_score * score for every parameter, in parameters() order.

    The two branches share weights, so each filter bank gradient is the sum
    of the contributions flowing through both inputs.
    """
    if cache.model is not model:
        raise ValidationError("stale cache: it was produced by a different model")
    d_score = float(d_score)
    d_weights = d_score * cache.masked_product
    d_bias = np.asarray(d_score, dtype=np.float64)
    w_eff = model.fc_weights if cache.mask is None else model.fc_weights * cache.mask
    d_product = d_score * w_eff
    shape = cache.cache_i.pre_activations[-1].shape
    d_i = (d_product * cache.h_j).reshape(shape)
    d_j = (d_product * cache.h_i).reshape(shape)
    grads_i, _ = stack_backward(model.gcn, cache.cache_i, d_i)
    grads_j, _ = stack_backward(model.gcn, cache.cache_j, d_j)
    bank_grads = [gi + gj for gi, gj in zip(grads_i, grads_j)]
    return bank_grads + [d_weights, d_bias]


def _check_scores(scores: Sequence[PairScore]) -> tuple[np.ndarray, np.ndarray]:
    if len(scores) == 0:
        raise ValidationError("loss of an empty batch is undefined")
    values = np.array([p.score for p in scores], dtype=np.float64)
    labels = np.array([p.label for p in scores], dtype=np.int64)
    if not np.isin(labels, (-1, 1)).all():
        raise ValidationError("pair labels must be +1 or -1")
    return values, labels


def hinge_loss(scores: Sequence[PairScore]) -> float:
    """Mean over pairs of max(0, 1 - label * score)."""
    values, labels = _check_scores(scores)
    return float(np.mean(np.maximum(0.0, 1.0 - labels * values)))


def hinge_grad(scores: Sequence[PairScore]) -> np.ndarray:
    """d loss / d score per pair; the subgradient at the hinge point is 0."""
    values, labels = _check_scores(scores)
    active = labels * values < 1.0
    return np.where(active, -labels / len(scores), 0.0)


@dataclass(frozen=True)
class ConVarParams:
    """Margin between class means and the per-class variance ceiling.

    variance_threshold defaults to half the margin.
    """

    margin: float = 1.0
    variance_threshold: float | None = None

    def __post_init__(self):
        if self.margin <= 0.0:
            raise ValidationError(f"margin must be positive, got {self.margin}")
        if self.variance_threshold is None:
            object.__setattr__(self, "variance_threshold", self.margin / 2.0)
        if self.variance_threshold <= 0.0:
            raise ValidationError(
                f"variance_threshold must be positive, got {self.variance_threshold}"
            )


def _split_by_label(scores: Sequence[PairScore]):
    values, labels = _check_scores(scores)
    pos = values[labels == 1]
    neg = values[labels == -1]
    if pos.size < 2 or neg.size < 2:
        raise ValidationError(
            "the variance loss needs at least 2 same-class and 2 different-class "
            "pairs per batch; use balanced batching"
        )
    return values, labels, pos, neg


def convar_loss(scores: Sequence[PairScore], params: ConVarParams) -> float:
    """Hinged variance of each class's scores plus a hinged mean separation.

    loss = max(0, var_pos - a) + max(0, var_neg - a)
         + max(0, margin - (mean_pos - mean_neg))
    with population variances and a = variance_threshold.
    """
    _, _, pos, neg = _split_by_label(scores)
    a = params.variance_threshold
    var_term = max(0.0, float(np.var(pos)) - a) + max(0.0, float(np.var(neg)) - a)
    sep_term = max(0.0, params.margin - (float(np.mean(pos)) - float(np.mean(neg))))
    return var_term + sep_term


def convar_grad(scores: Sequence[PairScore], params: ConVarParams) -> np.ndarray:
    """d loss / d score per pair, zero wherever a hinge is inactive or tied."""
    values, labels, pos, neg = _split_by_label(scores)
    a = params.variance_threshold
    grad = np.zeros_like(values)
    pos_idx = np.flatnonzero(labels == 1)
    neg_idx = np.flatnonzero(labels == -1)
    if float(np.var(pos)) > a:
        grad[pos_idx] += 2.0 * (pos - np.mean(pos)) / pos.size
    if float(np.var(neg)) > a:
        grad[neg_idx] += 2.0 * (neg - np.mean(neg)) / neg.size
    if params.margin - (float(np.mean(pos)) - float(np.mean(neg))) > 0.0:
        grad[pos_idx] += -1.0 / pos.size
        grad[neg_idx] += 1.0 / neg.size
    return grad


def save_model(path, model: SiameseModel) -> None:
    """Write the model as a JSON header line plus packed float64 tensors."""
    meta = {
        "kind": "siamese",
        "order": model.gcn.layers[0].order,
        "feature_sizes": [model.gcn.f_in] + [bank.f_out for bank in model.gcn.layers],
        "relu_last": model.gcn.relu_last,
        "dropout_keep": model.dropout_keep,
        "fc_dim": int(model.fc_weights.size),
    }
    tensors = [(f"layer{i}.theta", bank.theta) for i, bank in enumerate(model.gcn.layers)]
    tensors += [("fc.weights", model.fc_weights), ("fc.bias", model.fc_bias)]
    write_tensor_file(path, meta, tensors)


def load_model(path) -> SiameseModel:
    """Read a model written by save_model."""
    header, tensors = read_tensor_file(path)
    if header.get("kind") != "siamese":
        raise DataError(f"{path}: not a siamese model checkpoint")
    sizes = header["feature_sizes"]
    layers = []
    for i in range(len(sizes) - 1):
        name = f"layer{i}.theta"
        if name not in tensors:
            raise DataError(f"{path}: missing tensor {name!r}")
        theta = tensors[name]
        expected = (header["order"], sizes[i], sizes[i + 1])
        if theta.shape != expected:
            raise DataError(f"{path}: tensor {name!r} has shape {theta.shape}, expected {expected}")
        layers.append(ChebFilterBank(theta))
    for name in ("fc.weights", "fc.bias"):
        if name not in tensors:
            raise DataError(f"{path}: missing tensor {name!r}")
    model = SiameseModel(
        gcn=GCNStack(layers=layers, relu_last=bool(header["relu_last"])),
        fc_weights=tensors["fc.weights"],
        fc_bias=tensors["fc.bias"].reshape(()),
        dropout_keep=float(header["dropout_keep"]),
    )
    if model.fc_weights.size != header.get("fc_dim"):
        raise DataError(
            f"{path}: fc.weights has {model.fc_weights.size} entries, header says {header.get('fc_dim')}"
        )
    return model
