"""Finite-difference gradient verification for the full scoring model.

Used both by the grad-check command and by tests. The analytic backward
pass is compared against central differences on every parameter coordinate.
Rectifier and hinge kinks make the comparison meaningless within h of a
kink, so callers should stick to seeds where the margins are comfortable;
the report includes the observed worst relative error for judgment.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericFailure
from .graphs import knn_graph, laplacians, mean_affinity
from .siamese import ConVarParams, PairScore, convar_grad, convar_loss, hinge_grad, hinge_loss, init_model
from .synthetic import SynthSpec, generate_cohort
from .training import batch_backward, make_pairs, score_pairs_batch

FD_STEP = 1e-6
REL_FLOOR = 1e-5

# Multiplied into the analytic gradients before comparison. Stays 1.0 in real
# use; the negative-control test bends it to prove the checker can fail.
FAULT_SCALE = 1.0


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = REL_FLOOR) -> float:
    """Max over coordinates of |a-b| / max(|a|, |b|, floor).

    The floor keeps coordinates whose true gradient is zero from amplifying
    finite-difference roundoff into a spurious failure.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def _worst_coordinate(a: np.ndarray, b: np.ndarray, floor: float = REL_FLOOR):
    """Relative error and multi-index of the worst coordinate of a vs b."""
    err = np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    flat = int(np.argmax(err))
    return float(err.reshape(-1)[flat]), tuple(int(c) for c in np.unravel_index(flat, a.shape))


def numeric_gradient(f, arrays, h: float = FD_STEP):
    """Central-difference gradient of scalar f with respect to each array."""
    grads = []
    for arr in arrays:
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + h
            up = f()
            flat[idx] = keep - h
            down = f()
            flat[idx] = keep
            gflat[idx] = (up - down) / (2.0 * h)
        grads.append(grad)
    return grads


def model_gradient_check(
    seed: int,
    loss_name: str,
    n_nodes: int = 12,
    n_subjects_per_class: int = 3,
    features: int = 32,
    n_layers: int = 2,
    order: int = 3,
) -> dict:
    """Compare analytic and finite-difference gradients on a small instance.

    Builds a small noisy cohort, scores every pair with dropout disabled,
    and differentiates the chosen loss with respect to every parameter.
    Returns a dict with the max relative error per parameter tensor and
    overall.
    """
    spec = SynthSpec(
        n_nodes=n_nodes,
        n_communities=2,
        w_in=0.7,
        w_out=0.3,
        noise_sd=0.15,
        subjects_per_class=n_subjects_per_class,
        seed=seed,
    )
    cohort, _ = generate_cohort(spec)
    ids = [s.id for s in cohort.subjects]
    lap = laplacians(knn_graph(mean_affinity([s.affinity for s in cohort.subjects]), max(2, n_nodes // 4)))
    model = init_model(n_nodes, n_layers, features, order, seed=seed, dropout_keep=1.0, relu_last=True)
    pairs = make_pairs(cohort, ids).pairs
    feats = cohort.features(ids)
    position = {sid: t for t, sid in enumerate(ids)}
    index_pairs = [(position[p.i], position[p.j]) for p in pairs]
    convar = ConVarParams()

    def run_loss():
        values, context = score_pairs_batch(model, lap, feats, index_pairs, training=False)
        scored = [PairScore(p.i, p.j, float(v), p.label) for p, v in zip(pairs, values)]
        if loss_name == "hinge":
            return hinge_loss(scored), scored, context
        return convar_loss(scored, convar), scored, context

    _, scored, context = run_loss()
    if loss_name == "hinge":
        d_scores = hinge_grad(scored)
    else:
        d_scores = convar_grad(scored, convar)
    analytic = batch_backward(model, context, d_scores)
    analytic = [g * FAULT_SCALE for g in analytic]
    params = model.parameters()
    numeric = numeric_gradient(lambda: run_loss()[0], params)
    names = [f"layer{i}.theta" for i in range(len(model.gcn.layers))] + ["fc.weights", "fc.bias"]
    per_tensor = {}
    worst = {"tensor": None, "coordinate": (), "rel_err": -1.0}
    for name, a, n in zip(names, analytic, numeric):
        err, coord = _worst_coordinate(a, n)
        per_tensor[name] = err
        if err > worst["rel_err"]:
            worst = {"tensor": name, "coordinate": coord, "rel_err": err}
    return {
        "loss": loss_name,
        "n_parameters": int(sum(p.size for p in params)),
        "per_tensor": per_tensor,
        "worst": worst,
        "max_rel_err": worst["rel_err"],
    }


def require_gradient_fidelity(seed: int, tol: float = 1e-4) -> dict:
    """Run both loss checks and raise NumericFailure beyond tol."""
    results = {}
    for loss_name in ("hinge", "convar"):
        report = model_gradient_check(seed, loss_name)
        results[loss_name] = report
        if report["max_rel_err"] > tol:
            raise NumericFailure(
                f"gradient check failed for {loss_name}: max relative error "
                f"{report['max_rel_err']:.3e} exceeds {tol:g}"
            )
    return results
