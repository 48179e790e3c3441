"""Chebyshev-polynomial graph convolution layers with hand-rolled gradients.

A layer applies y = sum_k T_k(L_scaled) X theta_k where T_k follows the
Chebyshev recurrence T_0 = I, T_1 = L, T_k = 2 L T_{k-1} - T_{k-2}. The
recurrence never materializes T_k(L); it propagates the basis signals
S_k = T_k(L) X, which keeps the cost linear in the edge count for sparse L
and, more importantly here, makes the backward pass a mirror-image
recurrence over the same cached signals.

All forward ops accept an optional leading batch axis on X, shape (batch, n,
features), and broadcast the shared Laplacian across it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ValidationError
from .graphs import LaplacianSet

_NS_INIT = 201

CHECKPOINT_FORMAT = "graphsim-model"
CHECKPOINT_VERSION = 1


@dataclass
class ChebFilterBank:
    """Trainable coefficients of one layer: theta has shape (order, f_in, f_out)."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.ndim != 3:
            raise ValidationError(f"filter bank must be 3-d (order, f_in, f_out), got shape {theta.shape}")
        if not np.isfinite(theta).all():
            raise ValidationError("filter bank has non-finite coefficients")
        self.theta = theta

    @property
    def order(self) -> int:
        return self.theta.shape[0]

    @property
    def f_in(self) -> int:
        return self.theta.shape[1]

    @property
    def f_out(self) -> int:
        return self.theta.shape[2]


@dataclass
class GCNStack:
    """A stack of filter banks with a rectifier after each layer.

    relu_last=False leaves the final layer linear, which keeps similarity
    scores signed instead of clipping everything negative to zero.
    """

    layers: list[ChebFilterBank]
    relu_last: bool = True

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("a stack needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i].f_in != self.layers[i - 1].f_out:
                raise ValidationError(
                    f"layer {i} expects {self.layers[i].f_in} input features but layer "
                    f"{i - 1} produces {self.layers[i - 1].f_out}"
                )

    @property
    def f_in(self) -> int:
        return self.layers[0].f_in

    @property
    def f_out(self) -> int:
        return self.layers[-1].f_out


@dataclass
class StackCache:
    """Intermediates from one stack_forward call, consumed by stack_backward."""

    stack: GCNStack
    lap: LaplacianSet
    inputs: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)


def cheb_basis(lap: LaplacianSet, signal: np.ndarray, order: int) -> list[np.ndarray]:
    """Basis signals [T_0(L)X, ..., T_{order-1}(L)X] for the rescaled Laplacian."""
    if order < 1:
        raise ValidationError(f"order must be >= 1, got {order}")
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim < 2 or signal.shape[-2] != lap.n_nodes:
        raise ValidationError(
            f"signal shape {signal.shape} does not match the {lap.n_nodes}-node Laplacian"
        )
    scaled = lap.scaled
    basis = [signal]
    if order >= 2:
        basis.append(np.matmul(scaled, signal))
    for _ in range(2, order):
        basis.append(2.0 * np.matmul(scaled, basis[-1]) - basis[-2])
    return basis


def layer_forward(bank: ChebFilterBank, lap: LaplacianSet, signal: np.ndarray):
    """One layer. Returns (pre_activation, rectified_output)."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[-1] != bank.f_in:
        raise ValidationError(
            f"signal has {signal.shape[-1]} features but the bank expects {bank.f_in}"
        )
    basis = cheb_basis(lap, signal, bank.order)
    pre = np.matmul(basis[0], bank.theta[0])
    for k in range(1, bank.order):
        pre = pre + np.matmul(basis[k], bank.theta[k])
    return pre, np.maximum(pre, 0.0)


def stack_forward(stack: GCNStack, lap: LaplacianSet, signal: np.ndarray):
    """Run the whole stack. Returns (output, cache for the backward pass)."""
    cache = StackCache(stack=stack, lap=lap)
    out = np.asarray(signal, dtype=np.float64)
    last = len(stack.layers) - 1
    for i, bank in enumerate(stack.layers):
        cache.inputs.append(out)
        pre, act = layer_forward(bank, lap, out)
        cache.pre_activations.append(pre)
        out = pre if (i == last and not stack.relu_last) else act
    return out, cache


def stack_backward(stack: GCNStack, cache: StackCache, d_out: np.ndarray):
    """Gradients of a scalar loss through the stack.

    Parameters
    ----------
    stack : GCNStack
        The stack the cache came from. A cache from a different stack or a
        different graph is rejected as stale.
    cache : StackCache
        Intermediates saved by stack_forward.
    d_out : ndarray
        Gradient with respect to the stack output, same shape as the output.

    Returns
    -------
    (bank_grads, d_signal) where bank_grads[i] matches layers[i].theta in
    shape and d_signal matches the original input signal.

    The signal gradient runs the filter recurrence in reverse: with
    G_k = dZ theta_k^T seeded per basis order, dS_{k-1} += 2 L dS_k and
    dS_{k-2} -= dS_k walk the Chebyshev recurrence backwards, and dX falls
    out of the order-0 slot after the final dS_0 += L dS_1.
    """
    if cache.stack is not stack or cache.lap is None:
        raise ValidationError("stale cache: it was produced by a different stack")
    if len(cache.inputs) != len(stack.layers):
        raise ValidationError("stale cache: layer count does not match the stack")
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != cache.pre_activations[-1].shape:
        raise ValidationError(
            f"gradient shape {d_out.shape} does not match the stack output "
            f"{cache.pre_activations[-1].shape}"
        )
    scaled = cache.lap.scaled
    bank_grads: list[np.ndarray] = [None] * len(stack.layers)
    last = len(stack.layers) - 1
    d_sig = d_out
    for i in range(last, -1, -1):
        bank = stack.layers[i]
        pre = cache.pre_activations[i]
        if i == last and not stack.relu_last:
            d_pre = d_sig
        else:
            d_pre = d_sig * (pre > 0.0)
        basis = cheb_basis(cache.lap, cache.inputs[i], bank.order)
        grad = np.empty_like(bank.theta)
        for k in range(bank.order):
            prod = np.matmul(np.swapaxes(basis[k], -1, -2), d_pre)
            grad[k] = prod if prod.ndim == 2 else prod.sum(axis=tuple(range(prod.ndim - 2)))
        bank_grads[i] = grad
        adj = [np.matmul(d_pre, bank.theta[k].T) for k in range(bank.order)]
        for k in range(bank.order - 1, 1, -1):
            adj[k - 1] = adj[k - 1] + 2.0 * np.matmul(scaled, adj[k])
            adj[k - 2] = adj[k - 2] - adj[k]
        if bank.order >= 2:
            adj[0] = adj[0] + np.matmul(scaled, adj[1])
        d_sig = adj[0]
    return bank_grads, d_sig


def init_stack(feature_sizes, order: int, seed: int, relu_last: bool = True) -> GCNStack:
    """Uniform initialization scaled to the effective fan-in f_in * order.

    feature_sizes lists channel counts from input to output, so
    [n, 32, 32] builds two layers. Each layer draws from its own
    seed-derived stream, making the init a pure function of (sizes, order,
    seed).
    """
    sizes = [int(s) for s in feature_sizes]
    if len(sizes) < 2:
        raise ValidationError("feature_sizes needs an input and at least one output width")
    if any(s < 1 for s in sizes):
        raise ValidationError(f"feature sizes must be positive, got {sizes}")
    if order < 1:
        raise ValidationError(f"order must be >= 1, got {order}")
    layers = []
    for i in range(len(sizes) - 1):
        f_in, f_out = sizes[i], sizes[i + 1]
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(_NS_INIT, i))))
        bound = np.sqrt(6.0 / (f_in * order + f_out))
        layers.append(ChebFilterBank(rng.uniform(-bound, bound, size=(order, f_in, f_out))))
    return GCNStack(layers=layers, relu_last=relu_last)


def write_tensor_file(path, meta: dict, tensors: list[tuple[str, np.ndarray]]) -> None:
    """Write tensors as one JSON header line plus raw little-endian float64 rows.

    The header carries the format name, version, caller metadata, and the
    name and shape of every tensor in payload order. The payload is the
    concatenation of each tensor's row-major float64 bytes, so the file is
    byte-identical for identical inputs.
    """
    header = dict(meta)
    header["format"] = CHECKPOINT_FORMAT
    header["version"] = CHECKPOINT_VERSION
    header["tensors"] = [{"name": name, "shape": list(arr.shape)} for name, arr in tensors]
    line = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
    with open(path, "wb") as fh:
        fh.write(line.encode("ascii"))
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_tensor_file(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a tensor file written by write_tensor_file."""
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("ascii"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise DataError(f"{path}: missing or malformed JSON header line") from None
        if header.get("format") != CHECKPOINT_FORMAT:
            raise DataError(f"{path}: unrecognized format {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported version {header.get('version')!r}")
        tensors = {}
        for spec in header.get("tensors", []):
            shape = tuple(int(s) for s in spec["shape"])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise DataError(f"{path}: payload truncated while reading tensor {spec['name']!r}")
            tensors[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after the declared tensors")
    return header, tensors
