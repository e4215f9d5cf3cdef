"""2D projection of the patient feature matrix.

The primary method is a nonlinear neighbor embedding: an exact k-NN graph is
smoothed into fuzzy membership weights, and a 2D layout is optimized by
stochastic gradient descent with negative sampling so that strongly
connected patients land near each other. A deterministic PCA projection is
provided both as a user-selectable fallback and as an independent reference
for testing.

Everything is deterministic given the seed. The convenience entry point
``embed`` additionally canonicalizes row order by patient id internally, so
the result does not depend on the order rows arrived in.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import lru_cache

import numba
import numpy as np
import scipy.optimize
import scipy.sparse
import scipy.sparse.csgraph
import scipy.spatial.distance

from .ingest import FeatureMatrix
from .util import CohortSplitError, derive_seed

logger = logging.getLogger(__name__)

SIGMA_TOLERANCE = 1e-5
SIGMA_FLOOR = 1e-12
_MAX_SIGMA_ITERS = 64
_INIT_SCALE = 10.0
_GRAD_CLIP = 4.0


@dataclass(frozen=True)
class EmbedParams:
    """Hyperparameters of the nonlinear embedding."""

    n_neighbors: int = 15
    min_dist: float = 0.1
    n_epochs: int = 200
    negative_sample_rate: int = 5
    learning_rate: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_neighbors < 2:
            raise CohortSplitError(f"n_neighbors must be >= 2, got {self.n_neighbors}")
        if not self.min_dist > 0:
            raise CohortSplitError(f"min_dist must be > 0, got {self.min_dist}")
        if self.n_epochs < 1:
            raise CohortSplitError(f"n_epochs must be >= 1, got {self.n_epochs}")
        if self.negative_sample_rate < 1:
            raise CohortSplitError("negative_sample_rate must be >= 1")


@dataclass(frozen=True)
class NeighborGraph:
    """Exact k-NN structure, optionally with fuzzy membership weights.

    directed_weight_sums and sigma_floored are diagnostics filled by
    fuzzify: per-point sums of directed weights (target log2(k)) and
    whether the smoothing scale hit its floor.
    """

    n_neighbors: int
    neighbor_indices: np.ndarray      # (N, k) int64, no self loops
    neighbor_distances: np.ndarray    # (N, k) float64, ascending per row
    membership_weights: scipy.sparse.csr_matrix | None = None
    directed_weight_sums: np.ndarray | None = None
    sigma_floored: np.ndarray | None = None


@dataclass(frozen=True)
class Embedding2D:
    """Per-patient 2D coordinates plus the parameters that produced them."""

    coords: np.ndarray                # (N, 2) float64
    params: EmbedParams | None
    method: str                       # "nonlinear" | "pca"
    patient_ids: list[str] | None = None

    def __post_init__(self) -> None:
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise CohortSplitError("embedding coords must be (N, 2)")
        if not np.all(np.isfinite(self.coords)):
            raise CohortSplitError("embedding contains non-finite coordinates")


def build_knn_graph(m: FeatureMatrix, k: int) -> NeighborGraph:
    """Exact k nearest neighbors of every patient by Euclidean distance.

    Ties are broken toward the lower row index. Brute force on purpose:
    cohorts are small and exactness removes a source of nondeterminism.
    """
    n = m.values.shape[0]
    if not 1 <= k < n:
        raise CohortSplitError(f"k must satisfy 1 <= k < {n}, got {k}")
    dist = scipy.spatial.distance.cdist(m.values, m.values)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    rows = np.arange(n)[:, None]
    return NeighborGraph(
        n_neighbors=k,
        neighbor_indices=order.astype(np.int64),
        neighbor_distances=dist[rows, order],
    )


def fuzzify(graph: NeighborGraph, params: EmbedParams) -> NeighborGraph:
    """Turn k-NN distances into symmetric fuzzy membership weights.

    Per point, distances are offset by the nearest-neighbor distance rho and
    scaled by a per-point sigma found by binary search so the directed
    weights sum to log2(k). Directed weights are then symmetrized as
    W = A + A^T - A o A^T, which keeps every entry in [0, 1].
    """
    d = graph.neighbor_distances
    n, k = d.shape
    rho = d[:, 0].copy()
    target = np.log2(k)

    excess = np.maximum(d - rho[:, None], 0.0)
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    mid = np.ones(n)
    active = np.ones(n, dtype=bool)
    for _ in range(_MAX_SIGMA_ITERS):
        if not active.any():
            break
        psum = np.exp(-excess[active] / mid[active, None]).sum(axis=1)
        rows = np.flatnonzero(active)
        converged = np.abs(psum - target) < SIGMA_TOLERANCE
        active[rows[converged]] = False
        rows = rows[~converged]
        psum = psum[~converged]
        over = psum > target
        hi[rows[over]] = mid[rows[over]]
        mid[rows[over]] = (lo[rows[over]] + hi[rows[over]]) / 2.0
        under = rows[~over]
        lo[under] = mid[under]
        unbounded = np.isinf(hi[under])
        mid[under[unbounded]] *= 2.0
        mid[under[~unbounded]] = (lo[under[~unbounded]] + hi[under[~unbounded]]) / 2.0

    floored = mid < SIGMA_FLOOR
    if floored.any():
        logger.info("sigma floor applied to %d of %d points", int(floored.sum()), n)
    sigma = np.maximum(mid, SIGMA_FLOOR)

    with np.errstate(under="ignore"):
        w = np.exp(-excess / sigma[:, None])
    rows = np.repeat(np.arange(n), k)
    a = scipy.sparse.coo_matrix(
        (w.ravel(), (rows, graph.neighbor_indices.ravel())), shape=(n, n)
    ).tocsr()
    return NeighborGraph(
        n_neighbors=k,
        neighbor_indices=graph.neighbor_indices,
        neighbor_distances=graph.neighbor_distances,
        membership_weights=_symmetrize(a),
        directed_weight_sums=w.sum(axis=1),
        sigma_floored=floored,
    )


def _symmetrize(a: scipy.sparse.csr_matrix) -> scipy.sparse.csr_matrix:
    """Fuzzy union of the directed graph with its transpose:
    W = A + A^T - A o A^T, entrywise in [0, 1] when A is."""
    sym = scipy.sparse.csr_matrix(a + a.T - a.multiply(a.T))
    sym.eliminate_zeros()
    return sym


@lru_cache(maxsize=32)
def fit_similarity_curve(min_dist: float, spread: float = 1.0) -> tuple[float, float]:
    """Fit (a, b) of the low-dimensional similarity 1/(1 + a d^(2b)).

    Least-squares match against the offset exponential that is 1 inside
    min_dist and decays with the given spread beyond it.
    """

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2.0 * b))

    xs = np.linspace(0.0, 3.0 * spread, 300)
    ys = np.where(xs < min_dist, 1.0, np.exp(-(xs - min_dist) / spread))
    (a, b), _ = scipy.optimize.curve_fit(curve, xs, ys, xtol=1e-10, ftol=1e-10)
    return float(a), float(b)


@numba.njit(cache=True, inline="always")
def _next_rand(state):
    # Marsaglia xorshift64; state is a length-1 uint64 array
    s = state[0]
    s ^= s << np.uint64(13)
    s ^= s >> np.uint64(7)
    s ^= s << np.uint64(17)
    state[0] = s
    return s


@numba.njit(cache=True)
def _sgd_layout(
    coords,
    head,
    tail,
    epochs_per_sample,
    n_epochs,
    a,
    b,
    negative_sample_rate,
    initial_alpha,
    rng_state,
):
    """Attraction/repulsion SGD over graph edges; returns -1 or the epoch
    at which a non-finite coordinate first appeared."""
    n = coords.shape[0]
    n_edges = head.shape[0]
    epochs_per_negative = epochs_per_sample / negative_sample_rate
    next_sample = epochs_per_sample.copy()
    next_negative = epochs_per_negative.copy()

    for epoch in range(n_epochs):
        alpha = initial_alpha * (1.0 - epoch / n_epochs)
        for e in range(n_edges):
            if next_sample[e] > epoch:
                continue
            j = head[e]
            k = tail[e]
            dx = coords[j, 0] - coords[k, 0]
            dy = coords[j, 1] - coords[k, 1]
            d2 = dx * dx + dy * dy
            if d2 > 0.0:
                gc = (-2.0 * a * b * d2 ** (b - 1.0)) / (a * d2**b + 1.0)
            else:
                gc = 0.0
            gx = min(max(gc * dx, -_GRAD_CLIP), _GRAD_CLIP)
            gy = min(max(gc * dy, -_GRAD_CLIP), _GRAD_CLIP)
            coords[j, 0] += alpha * gx
            coords[j, 1] += alpha * gy
            coords[k, 0] -= alpha * gx
            coords[k, 1] -= alpha * gy
            next_sample[e] += epochs_per_sample[e]

            n_neg = int((epoch - next_negative[e]) / epochs_per_negative[e])
            for _ in range(n_neg):
                t = int(_next_rand(rng_state) >> np.uint64(33)) % n
                dx = coords[j, 0] - coords[t, 0]
                dy = coords[j, 1] - coords[t, 1]
                d2 = dx * dx + dy * dy
                if d2 > 0.0:
                    gc = (2.0 * b) / ((0.001 + d2) * (a * d2**b + 1.0))
                    gx = min(max(gc * dx, -_GRAD_CLIP), _GRAD_CLIP)
                    gy = min(max(gc * dy, -_GRAD_CLIP), _GRAD_CLIP)
                elif j == t:
                    continue
                else:
                    gx = _GRAD_CLIP
                    gy = _GRAD_CLIP
                coords[j, 0] += alpha * gx
                coords[j, 1] += alpha * gy
            next_negative[e] += n_neg * epochs_per_negative[e]

        for i in range(n):
            if not (np.isfinite(coords[i, 0]) and np.isfinite(coords[i, 1])):
                return epoch
    return -1


def _spectral_init(weights: scipy.sparse.csr_matrix) -> np.ndarray | None:
    """Layout from the two nontrivial eigenvectors of the normalized graph
    Laplacian; None when the graph is disconnected or the solve misbehaves."""
    n = weights.shape[0]
    if n < 3:
        return None
    n_components, _ = scipy.sparse.csgraph.connected_components(weights, directed=False)
    if n_components > 1:
        logger.info("neighbor graph has %d components; using noise initialization", n_components)
        return None
    w = weights.toarray()
    deg = w.sum(axis=1)
    if np.any(deg <= 0):
        return None
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(n) - (inv_sqrt[:, None] * w) * inv_sqrt[None, :]
    try:
        _, vecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError:
        return None
    coords = vecs[:, 1:3].astype(np.float64)
    if coords.shape[1] < 2 or not np.all(np.isfinite(coords)):
        return None
    for j in range(2):
        i = int(np.argmax(np.abs(coords[:, j])))
        if coords[i, j] < 0:
            coords[:, j] = -coords[:, j]
    return coords


def optimize_embedding(graph: NeighborGraph, params: EmbedParams) -> Embedding2D:
    """Optimize 2D coordinates against the fuzzy membership graph.

    Initialization is the spectral layout when the graph is connected, else
    seeded uniform noise in [-10, 10]^2. Edges are visited with frequency
    proportional to their membership weight; each attractive update is paired
    with negative_sample_rate repulsive updates against random points. The
    learning rate anneals linearly to zero. Bit-identical for a fixed seed.
    """
    if graph.membership_weights is None:
        raise CohortSplitError("graph has no membership weights; run fuzzify first")
    weights = graph.membership_weights
    n = weights.shape[0]
    a, b = fit_similarity_curve(params.min_dist)

    rng = np.random.default_rng(derive_seed(params.seed, 0))
    coords = _spectral_init(weights)
    if coords is None:
        coords = rng.uniform(-_INIT_SCALE, _INIT_SCALE, size=(n, 2))
    else:
        coords = coords * (_INIT_SCALE / max(np.abs(coords).max(), 1e-12))
        coords = coords + rng.normal(0.0, 1e-4, size=(n, 2))
    coords = np.ascontiguousarray(coords, dtype=np.float64)

    coo = weights.tocoo()
    head = coo.row.astype(np.int64)
    tail = coo.col.astype(np.int64)
    w = coo.data.astype(np.float64)
    epochs_per_sample = w.max() / w

    state = np.array([derive_seed(params.seed, 1) | 1], dtype=np.uint64)
    bad_epoch = _sgd_layout(
        coords,
        head,
        tail,
        epochs_per_sample,
        params.n_epochs,
        a,
        b,
        params.negative_sample_rate,
        params.learning_rate,
        state,
    )
    if bad_epoch >= 0:
        raise CohortSplitError(
            f"embedding optimization produced non-finite coordinates at epoch {bad_epoch} "
            f"(n={n}, edges={head.size}, a={a:.4f}, b={b:.4f})"
        )
    return Embedding2D(coords=coords, params=params, method="nonlinear")


def pca_project(m: FeatureMatrix) -> Embedding2D:
    """Top-2 principal components of the centered feature matrix.

    Deterministic: eigen-decomposition of the covariance with the sign of
    each component fixed so its largest-magnitude loading is positive.
    Doubles as an independent reference for the nonlinear method.
    """
    n, d = m.values.shape
    if n < 2:
        raise CohortSplitError("pca needs at least 2 patients")
    centered = m.values - m.values.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1][:2]
    comps = vecs[:, order]
    if comps.shape[1] < 2:
        comps = np.hstack([comps, np.zeros((d, 2 - comps.shape[1]))])
    for j in range(2):
        i = int(np.argmax(np.abs(comps[:, j])))
        if comps[i, j] < 0:
            comps[:, j] = -comps[:, j]
    return Embedding2D(
        coords=centered @ comps,
        params=None,
        method="pca",
        patient_ids=list(m.patient_ids),
    )


def embed(m: FeatureMatrix, params: EmbedParams, method: str = "nonlinear") -> Embedding2D:
    """Project a feature matrix to 2D by the requested method.

    For the nonlinear method, rows are internally reordered by patient id
    (and restored afterwards), so shuffling the input rows and unshuffling
    the output yields the identical embedding.
    """
    if method == "pca":
        return pca_project(m)
    if method != "nonlinear":
        raise CohortSplitError(f"unknown embedding method {method!r}")
    n = m.values.shape[0]
    if n < 3:
        raise CohortSplitError("nonlinear embedding needs at least 3 patients; use pca")

    k = min(params.n_neighbors, n - 1)
    if k != params.n_neighbors:
        logger.info("n_neighbors clamped from %d to %d (cohort size %d)", params.n_neighbors, k, n)
        params = replace(params, n_neighbors=k)

    order = np.argsort(np.asarray(m.patient_ids, dtype=object), kind="stable")
    sorted_m = FeatureMatrix(
        values=np.ascontiguousarray(m.values[order]),
        patient_ids=[m.patient_ids[i] for i in order],
        feature_names=m.feature_names,
    )
    graph = fuzzify(build_knn_graph(sorted_m, params.n_neighbors), params)
    sorted_embedding = optimize_embedding(graph, params)
    coords = np.empty_like(sorted_embedding.coords)
    coords[order] = sorted_embedding.coords
    return Embedding2D(
        coords=coords,
        params=params,
        method="nonlinear",
        patient_ids=list(m.patient_ids),
    )
