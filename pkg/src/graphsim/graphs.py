"""Affinity matrices, k-nearest-neighbour graphs, and normalized Laplacians.

Everything downstream (random walks, spectral filtering) consumes the types
defined here. Arrays inside the frozen dataclasses are marked read-only so a
value passed around the pipeline cannot be mutated behind our back.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
POWER_ITER_TOL = 1e-10
POWER_ITER_MAX = 10000
LAMBDA_MAX_FALLBACK = 2.0


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


def _check_square(values: np.ndarray, what: str) -> None:
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValidationError(f"{what} must be a square matrix, got shape {values.shape}")
    if values.shape[0] < 2:
        raise ValidationError(f"{what} needs at least 2 nodes, got {values.shape[0]}")


def _check_symmetric(values: np.ndarray, what: str, tol: float = SYMMETRY_TOL) -> None:
    gap = np.abs(values - values.T)
    worst = np.unravel_index(int(np.argmax(gap)), gap.shape)
    if gap[worst] > tol:
        i, j = worst
        raise ValidationError(
            f"{what} is not symmetric: entry ({i}, {j}) = {values[i, j]!r} "
            f"but ({j}, {i}) = {values[j, i]!r}"
        )


@dataclass(frozen=True)
class AffinityMatrix:
    """Symmetric non-negative similarity matrix with a unit diagonal."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        _check_square(values, "affinity matrix")
        bad = ~np.isfinite(values)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise ValidationError(f"affinity matrix has non-finite entry at row {i}, column {j}")
        _check_symmetric(values, "affinity matrix")
        out_of_range = (values < 0.0) | (values > 1.0)
        if out_of_range.any():
            i, j = np.argwhere(out_of_range)[0]
            raise ValidationError(
                f"affinity entry at row {i}, column {j} is {values[i, j]!r}, outside [0, 1]"
            )
        diag = np.diag(values)
        if not np.all(diag == 1.0):
            i = int(np.argmin(diag == 1.0))
            raise ValidationError(f"affinity diagonal at row {i} is {diag[i]!r}, expected 1.0")
        object.__setattr__(self, "values", _freeze(values))

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class BinaryGraph:
    """Undirected unweighted graph stored as a dense 0/1 adjacency matrix."""

    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency)
        if adj.dtype.kind not in "iub":
            # Reject float adjacency unless it is exactly 0/1 valued.
            as_int = adj.astype(np.int64)
            if not np.array_equal(as_int, adj):
                raise ValidationError("adjacency entries must be integers")
            adj = as_int
        adj = adj.astype(np.int64)
        _check_square(adj, "adjacency matrix")
        if not np.isin(adj, (0, 1)).all():
            raise ValidationError("adjacency entries must be 0 or 1")
        if not np.array_equal(adj, adj.T):
            raise ValidationError("adjacency matrix must be symmetric")
        if np.diag(adj).any():
            i = int(np.argmax(np.diag(adj)))
            raise ValidationError(f"adjacency has a self-loop at node {i}")
        object.__setattr__(self, "adjacency", _freeze(adj))

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.sum()) // 2

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)


@dataclass(frozen=True)
class LaplacianSet:
    """Symmetric-normalized Laplacian of a graph plus its spectral scaling.

    degree holds the diagonal of the degree matrix. scaled is
    2 * normalized / lambda_max - I, whose spectrum lies in [-1, 1] whenever
    lambda_max is at or above the true largest eigenvalue.
    """

    degree: np.ndarray
    normalized: np.ndarray
    lambda_max: float
    scaled: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "degree", _freeze(np.asarray(self.degree, dtype=np.float64)))
        object.__setattr__(self, "normalized", _freeze(np.asarray(self.normalized, dtype=np.float64)))
        object.__setattr__(self, "scaled", _freeze(np.asarray(self.scaled, dtype=np.float64)))

    @property
    def n_nodes(self) -> int:
        return self.normalized.shape[0]


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigendecomposition of a symmetric matrix, used as the slow exact route."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _freeze(np.asarray(self.eigenvalues, dtype=np.float64)))
        object.__setattr__(self, "eigenvectors", _freeze(np.asarray(self.eigenvectors, dtype=np.float64)))

    @classmethod
    def of_matrix(cls, matrix: np.ndarray) -> "SpectralDecomposition":
        matrix = np.asarray(matrix, dtype=np.float64)
        _check_square(matrix, "matrix")
        _check_symmetric(matrix, "matrix", tol=1e-9)
        eigenvalues, eigenvectors = np.linalg.eigh(matrix)
        n = matrix.shape[0]
        ortho_gap = np.max(np.abs(eigenvectors.T @ eigenvectors - np.eye(n)))
        if ortho_gap > 1e-9:
            raise ValidationError(f"eigenvector basis not orthonormal, gap {ortho_gap:.3e}")
        recon = (eigenvectors * eigenvalues) @ eigenvectors.T
        recon_gap = np.max(np.abs(recon - matrix))
        if recon_gap > 1e-8:
            raise ValidationError(f"eigendecomposition does not reconstruct input, gap {recon_gap:.3e}")
        return cls(eigenvalues=eigenvalues, eigenvectors=eigenvectors)


def threshold_positive(correlations: np.ndarray) -> AffinityMatrix:
    """Clamp a correlation matrix at zero to obtain a non-negative affinity.

    Parameters
    ----------
    correlations : ndarray, shape (n, n)
        Symmetric matrix with entries in [-1, 1] and unit diagonal.

    Returns
    -------
    AffinityMatrix with entries max(correlations, 0).
    """
    corr = np.asarray(correlations, dtype=np.float64)
    _check_square(corr, "correlation matrix")
    bad = ~np.isfinite(corr)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValidationError(f"correlation matrix has non-finite entry at row {i}, column {j}")
    _check_symmetric(corr, "correlation matrix")
    out_of_range = (corr < -1.0) | (corr > 1.0)
    if out_of_range.any():
        i, j = np.argwhere(out_of_range)[0]
        raise ValidationError(
            f"correlation entry at row {i}, column {j} is {corr[i, j]!r}, outside [-1, 1]"
        )
    return AffinityMatrix(np.maximum(corr, 0.0))


def mean_affinity(cohort: Sequence[AffinityMatrix]) -> AffinityMatrix:
    """Entrywise mean of a non-empty cohort of same-sized affinity matrices."""
    if len(cohort) == 0:
        raise ValidationError("cannot average an empty cohort")
    n = cohort[0].n_nodes
    for idx, aff in enumerate(cohort):
        if aff.n_nodes != n:
            raise ValidationError(
                f"cohort member {idx} has {aff.n_nodes} nodes, expected {n}"
            )
    stacked = np.stack([aff.values for aff in cohort])
    mean = stacked.mean(axis=0)
    # Guard against float drift pushing an entry a hair outside [0, 1].
    mean = np.clip(mean, 0.0, 1.0)
    np.fill_diagonal(mean, 1.0)
    return AffinityMatrix(mean)


def knn_graph(affinity: AffinityMatrix, k: int) -> BinaryGraph:
    """Symmetrized k-nearest-neighbour graph under the distance 1 - affinity.

    Each node links to its k nearest other nodes (ties broken toward the
    lower node index), then the directed selection is symmetrized by union,
    so degrees can exceed k.
    """
    n = affinity.n_nodes
    if not 1 <= k < n:
        raise ValidationError(f"k must satisfy 1 <= k < n_nodes, got k={k} for {n} nodes")
    dist = 1.0 - affinity.values
    adj = np.zeros((n, n), dtype=np.int64)
    ids = np.arange(n)
    for i in range(n):
        # lexsort uses the last key as primary: sort by distance, then index.
        order = np.lexsort((ids, dist[i]))
        order = order[order != i]
        adj[i, order[:k]] = 1
    adj = adj | adj.T
    return BinaryGraph(adj)


def _power_iteration(matrix: np.ndarray, vec: np.ndarray) -> float | None:
    """Certified dominant-eigenvalue estimate from one start vector, or None.

    vec must have unit norm. On regular graphs the all-ones start sits in the
    null space of the normalized Laplacian and the iteration breaks down
    immediately; callers fall back to the analytic bound.
    """
    for _ in range(POWER_ITER_MAX):
        image = matrix @ vec
        rayleigh = float(vec @ image)
        norm = float(np.linalg.norm(image))
        if norm < 1e-30:
            return None
        # For a symmetric matrix the residual norm bounds the distance from
        # the Rayleigh quotient to the nearest true eigenvalue, so this stop
        # rule certifies the returned estimate; a successive-change rule can
        # plateau well short of convergence when the spectral gap is small.
        residual = float(np.linalg.norm(image - rayleigh * vec))
        if residual <= POWER_ITER_TOL * max(abs(rayleigh), 1e-300):
            return rayleigh
        vec = image / norm
    return None


def _lambda_max_estimate(matrix: np.ndarray) -> float | None:
    """Power-iteration estimate of the largest eigenvalue from two starts.

    The all-ones start alone is not enough: on graphs with the right
    symmetry the dominant eigenvector can be exactly orthogonal to it, and
    the iteration then converges, residual certificate and all, to the
    second eigenvalue. A second, asymmetric start (a linear ramp) has no
    such alignment, so the max over both certified estimates is taken.
    """
    n = matrix.shape[0]
    ones = np.full(n, 1.0 / np.sqrt(n))
    ramp = np.arange(1.0, n + 1.0)
    ramp /= np.linalg.norm(ramp)
    estimates = [est for est in (_power_iteration(matrix, ones), _power_iteration(matrix, ramp)) if est is not None]
    if not estimates:
        return None
    return max(estimates)


def laplacians(graph: BinaryGraph) -> LaplacianSet:
    """Normalized Laplacian I - D^-1/2 A D^-1/2 and its [-1, 1] rescaling.

    The largest eigenvalue is estimated by power iteration, primarily from
    the all-ones start vector; if no start converges the analytic bound 2.0
    is used instead, which is exact for bipartite graphs and otherwise a
    safe overestimate.
    """
    adj = graph.adjacency.astype(np.float64)
    deg = adj.sum(axis=1)
    if (deg == 0).any():
        i = int(np.argmax(deg == 0))
        raise ValidationError(f"node {i} is isolated; the normalized Laplacian is undefined")
    inv_sqrt = 1.0 / np.sqrt(deg)
    normalized = np.eye(graph.n_nodes) - (inv_sqrt[:, None] * adj) * inv_sqrt[None, :]
    normalized = 0.5 * (normalized + normalized.T)
    lam = _lambda_max_estimate(normalized)
    if lam is None:
        logger.warning(
            "power iteration for lambda_max did not converge; using the bound %.1f",
            LAMBDA_MAX_FALLBACK,
        )
        lam = LAMBDA_MAX_FALLBACK
    elif lam > 2.0 + 1e-9:
        raise ValidationError(f"estimated lambda_max {lam!r} exceeds the theoretical bound 2")
    scaled = (2.0 / lam) * normalized - np.eye(graph.n_nodes)
    return LaplacianSet(degree=deg, normalized=normalized, lambda_max=float(lam), scaled=scaled)


def spectral_filter_dense(lap: LaplacianSet, theta: np.ndarray, signal: np.ndarray) -> np.ndarray:
    """Apply a Chebyshev polynomial filter through a full eigendecomposition.

    This is the slow reference route: diagonalize the normalized Laplacian,
    evaluate the polynomial on the rescaled eigenvalues, and transform back.
    The rescaling reuses lap.lambda_max so the result matches the recursive
    evaluation as a matrix identity, not merely in the large-n limit.
    """
    theta = np.asarray(theta, dtype=np.float64)
    signal = np.asarray(signal, dtype=np.float64)
    if theta.ndim != 1 or theta.size < 1:
        raise ValidationError(f"theta must be a non-empty 1-d coefficient vector, got shape {theta.shape}")
    if signal.shape != (lap.n_nodes,):
        raise ValidationError(
            f"signal shape {signal.shape} does not match the {lap.n_nodes}-node Laplacian"
        )
    decomp = SpectralDecomposition.of_matrix(lap.normalized)
    lam_scaled = (2.0 / lap.lambda_max) * decomp.eigenvalues - 1.0
    response = np.full_like(lam_scaled, theta[0])
    if theta.size > 1:
        prev = np.ones_like(lam_scaled)
        cur = lam_scaled.copy()
        response = response + theta[1] * cur
        for k in range(2, theta.size):
            prev, cur = cur, 2.0 * lam_scaled * cur - prev
            response = response + theta[k] * cur
    return decomp.eigenvectors @ (response * (decomp.eigenvectors.T @ signal))


def read_affinity_csv(path) -> AffinityMatrix:
    """Read an affinity matrix from CSV: n rows of n comma-separated floats."""
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                bad = next(i for i, c in enumerate(cells) if not _parses_as_float(c))
                raise ValidationError(
                    f"{path}: row {line_no}, column {bad}: {cells[bad]!r} is not a number"
                ) from None
    if not rows:
        raise ValidationError(f"{path}: file contains no rows")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValidationError(
                f"{path}: row {i} has {len(row)} columns, expected {width}"
            )
    if len(rows) != width:
        raise ValidationError(f"{path}: {len(rows)} rows but {width} columns; matrix must be square")
    try:
        return AffinityMatrix(np.array(rows, dtype=np.float64))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _parses_as_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def write_affinity_csv(path, affinity: AffinityMatrix) -> None:
    """Write an affinity matrix as CSV with full round-trip precision."""
    np.savetxt(path, affinity.values, fmt="%.17g", delimiter=",")


def write_adjacency_csv(path, graph: BinaryGraph) -> None:
    """Write a 0/1 adjacency matrix as integer CSV."""
    np.savetxt(path, graph.adjacency, fmt="%d", delimiter=",")


def read_adjacency_csv(path) -> BinaryGraph:
    """Read a 0/1 adjacency matrix written by write_adjacency_csv."""
    try:
        values = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    except ValueError as exc:
        raise ValidationError(f"{path}: not an integer matrix: {exc}") from None
    try:
        return BinaryGraph(values)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None
