"""Group detection in the embedded space via replicated k-means."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .util import CohortSplitError, derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterParams:
    k: int
    n_replicates: int = 25
    max_iters: int = 300
    tol: float = 1e-4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise CohortSplitError(f"k must be >= 1, got {self.k}")
        if self.n_replicates < 1:
            raise CohortSplitError("n_replicates must be >= 1")


@dataclass(frozen=True)
class ClusterModel:
    """Centroids, per-point group indices and the SSE objective."""

    centroids: np.ndarray             # (k, 2)
    assignments: np.ndarray           # (N,) int64, values in [0, k)
    sse: float
    replicate_sses: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


def default_cluster_count(n_patients: int) -> int:
    """Default target cluster count: one group per three patients, rounded up."""
    if n_patients < 3:
        raise CohortSplitError(f"need at least 3 patients, got {n_patients}")
    return math.ceil(n_patients / 3)


def _sse_of(coords: np.ndarray, centroids: np.ndarray, assignments: np.ndarray) -> float:
    diffs = coords - centroids[assignments]
    return float(np.sum(diffs * diffs))


def _plusplus_init(coords: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: subsequent centers drawn with probability
    proportional to squared distance from the nearest chosen center."""
    n = coords.shape[0]
    centroids = np.empty((k, coords.shape[1]))
    centroids[0] = coords[rng.integers(n)]
    d2 = np.sum((coords - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centroids[j] = coords[idx]
        d2 = np.minimum(d2, np.sum((coords - centroids[j]) ** 2, axis=1))
    return centroids


def _assign(coords: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # argmin breaks distance ties toward the lower centroid index
    d2 = ((coords[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def _repair_empty(coords, centroids, assignments) -> tuple[np.ndarray, np.ndarray, int]:
    """Reseed each empty cluster at the point currently farthest from its
    assigned centroid. Returns updated (centroids, assignments, n_repairs)."""
    n_repairs = 0
    while True:
        sizes = np.bincount(assignments, minlength=centroids.shape[0])
        empty = np.flatnonzero(sizes == 0)
        if empty.size == 0:
            return centroids, assignments, n_repairs
        d2 = np.sum((coords - centroids[assignments]) ** 2, axis=1)
        far = int(np.argmax(d2))
        if d2[far] <= 0.0:
            raise CohortSplitError(
                "cannot form that many non-empty clusters: "
                "fewer distinct points than requested clusters"
            )
        centroids = centroids.copy()
        centroids[empty[0]] = coords[far]
        assignments = _assign(coords, centroids)
        n_repairs += 1


def kmeans_once(
    coords: np.ndarray,
    k: int,
    seed: int,
    max_iters: int = 300,
    tol: float = 1e-4,
) -> ClusterModel:
    """One k-means run: k-means++ seeding then Lloyd iterations.

    Stops when the largest centroid movement falls below tol or after
    max_iters. Clusters emptied during iteration are reseeded at the point
    farthest from its assigned centroid, which never increases the SSE.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if k > n:
        raise CohortSplitError(f"k={k} exceeds number of points {n}")
    if not np.all(np.isfinite(coords)):
        raise CohortSplitError("coordinates must be finite")

    rng = np.random.default_rng(seed)
    centroids = _plusplus_init(coords, k, rng)
    assignments = _assign(coords, centroids)
    centroids, assignments, repairs = _repair_empty(coords, centroids, assignments)

    prev_sse = math.inf
    for _ in range(max_iters):
        sse = _sse_of(coords, centroids, assignments)
        assert sse <= prev_sse + 1e-9, "SSE increased within a Lloyd run"
        prev_sse = sse

        new_centroids = centroids.copy()
        for j in range(k):
            members = assignments == j
            if members.any():
                new_centroids[j] = coords[members].mean(axis=0)
        movement = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        assignments = _assign(coords, centroids)
        centroids, assignments, r = _repair_empty(coords, centroids, assignments)
        repairs += r
        if movement < tol and r == 0:
            break

    if repairs:
        logger.info("repaired %d empty clusters", repairs)
    sse = _sse_of(coords, centroids, assignments)
    return ClusterModel(
        centroids=centroids,
        assignments=assignments.astype(np.int64),
        sse=sse,
        replicate_sses=[sse],
    )


def kmeans_replicated(coords: np.ndarray, params: ClusterParams) -> ClusterModel:
    """Best of n_replicates independent k-means runs.

    Replicate seeds derive from (params.seed, replicate index); the model
    with minimal SSE wins, ties going to the lower replicate index, so
    results are identical however replicates are scheduled.
    """
    best: ClusterModel | None = None
    sses: list[float] = []
    for r in range(params.n_replicates):
        model = kmeans_once(
            coords,
            params.k,
            derive_seed(params.seed, r),
            max_iters=params.max_iters,
            tol=params.tol,
        )
        sses.append(model.sse)
        if best is None or model.sse < best.sse:
            best = model
    assert best is not None
    logger.debug("replicate SSEs: %s", [f"{s:.6g}" for s in sses])
    logger.info(
        "k-means k=%d: best SSE %.6g over %d replicates", params.k, best.sse, params.n_replicates
    )
    return ClusterModel(
        centroids=best.centroids,
        assignments=best.assignments,
        sse=best.sse,
        replicate_sses=sses,
    )
