"""Offline frame-level k-means (Lloyd's algorithm with k-means++ seeding)."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-4
DEFAULT_MAX_FRAMES = 2_000_000


@dataclass
class KmeansModel:
    centroids: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)
    reseeded: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or not np.all(np.isfinite(self.centroids)):
            raise DataError("centroids must be a finite K x d matrix")

    @property
    def K(self) -> int:
        return self.centroids.shape[0]


def squared_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """``(n, K)`` squared Euclidean distances via the expanded form."""
    d2 = (np.einsum("ij,ij->i", x, x)[:, None]
          - 2.0 * (x @ centroids.T)
          + np.einsum("ij,ij->i", centroids, centroids)[None, :])
    return np.maximum(d2, 0.0)


def _assign(x, centroids):
    d2 = squared_distances(x, centroids)
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(x.shape[0]), labels]


def assign(frames, model: KmeansModel | np.ndarray) -> np.ndarray:
    """Nearest centroid per frame; ties go to the smaller index."""
    centroids = model.centroids if isinstance(model, KmeansModel) else np.asarray(model, dtype=np.float64)
    x = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if x.shape[1] != centroids.shape[1]:
        raise DataError(f"dimension mismatch: frames have d={x.shape[1]}, centroids d={centroids.shape[1]}")
    return _assign(x, centroids)[0]


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++ seeding.

    Each new center is the best of ``2 + floor(ln k)`` frames drawn with
    probability proportional to their squared distance to the nearest
    center so far, judged by the resulting total squared distance.
    """
    n = x.shape[0]
    trials = 2 + int(np.log(k))
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            candidates = rng.choice(n, size=trials, p=closest / total)
        else:
            # all remaining mass is zero (duplicated data); any frame will do
            candidates = rng.integers(n, size=1)
        best_j, best_d, best_pot = -1, None, np.inf
        for j in candidates:
            d = np.minimum(closest, ((x - x[j]) ** 2).sum(axis=1))
            pot = d.sum()
            if pot < best_pot:
                best_j, best_d, best_pot = j, d, pot
        centers[i] = x[best_j]
        closest = best_d
    return centers


def subsample(x: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if x.shape[0] <= cap:
        return x
    idx = np.sort(rng.choice(x.shape[0], size=cap, replace=False))
    return x[idx]


def farthest_frames(dist: np.ndarray, m: int) -> np.ndarray:
    """Indices of the ``m`` largest distances (stable: earlier frame first)."""
    order = np.argsort(-dist, kind="stable")
    return order[:m]


def cluster_sums(x, labels, K):
    """Per-cluster frame sums and counts."""
    sums = np.zeros((K, x.shape[1]))
    counts = np.bincount(labels, minlength=K).astype(np.float64)
    for k in np.flatnonzero(counts):
        sums[k] = x[labels == k].sum(axis=0)
    return sums, counts


def update_centroids(sums, counts, centroids, frames, dist):
    """Mean update; empty clusters move to the frames farthest from their centroid.

    ``dist`` holds each frame's squared distance to the centroid it was
    assigned to.  Returns the new centroids and the list of re-seeded ids.
    """
    new = centroids.copy()
    filled = counts > 0
    new[filled] = sums[filled] / counts[filled, None]
    empty = np.flatnonzero(~filled)
    if empty.size:
        picks = farthest_frames(dist, empty.size)
        for k, j in zip(empty, picks):
            new[k] = frames[j]
    return new, [int(k) for k in empty]


def fit_kmeans(frames, K: int, seed: int = 0, max_iters: int = DEFAULT_MAX_ITERS,
               tol: float = DEFAULT_TOL, max_frames: int = DEFAULT_MAX_FRAMES) -> KmeansModel:
    """Lloyd's algorithm.

    Stops after ``max_iters`` updates or once the relative inertia
    improvement of an update drops to ``tol`` or below.  The stored inertia
    belongs to the returned centroids.
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("k-means needs a non-empty n x d frame matrix")
    if K < 1 or K > x.shape[0]:
        raise DataError(f"K={K} must be between 1 and the number of frames ({x.shape[0]})")
    rng = np.random.default_rng(seed)
    x = subsample(x, max_frames, rng)

    centroids = kmeans_plusplus(x, K, rng)
    labels, dist = _assign(x, centroids)
    inertia = float(dist.sum())
    history = [inertia]
    reseeded = []
    for it in range(max_iters):
        sums, counts = cluster_sums(x, labels, K)
        centroids, empty = update_centroids(sums, counts, centroids, x, dist)
        if empty:
            logger.info("k-means iteration %d: re-seeded empty clusters %s", it + 1, empty)
            reseeded.extend((it + 1, k) for k in empty)
        labels, dist = _assign(x, centroids)
        new_inertia = float(dist.sum())
        history.append(new_inertia)
        improvement = inertia - new_inertia
        inertia = new_inertia
        if improvement <= tol * abs(history[-2]):
            break
    return KmeansModel(centroids, inertia, history, reseeded)
