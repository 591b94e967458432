"""Segment-constrained HMMs over frame features.

Two topologies share one lattice of states ``(n, k)`` (segment ``n`` uses
centroid ``k``, unit-variance Gaussian emissions):

* ``DP``: up to ``T`` segments, every new segment costs ``lam``.
* ``Nseg``: exactly ``N = round(T / L)`` segments, switches are free.

Consecutive segments must use different centroids.  An optional deviation
track ``v`` (distance in frames to the nearest spectral boundary) adds a cost
``gamma * v[t]`` to a segment starting at frame ``t``.
"""
from __future__ import annotations

import itertools
import logging
import math
import struct
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import viterbi
from ._parallel import ordered_map
from .exceptions import ConfigError, DataError, NumericalError
from .features import FeatureMatrix
from .kmeans import KmeansModel, cluster_sums, farthest_frames, kmeans_plusplus
from .svf import BoundarySet

logger = logging.getLogger(__name__)

VARIANTS = ("DP", "Nseg")
INIT_MAX_FRAMES = 100_000
BRUTE_FORCE_MAX_T = 12
BRUTE_FORCE_MAX_K = 4

PHMM_MAGIC = b"PHMM"
PHMM_VERSION = 1
VARIANT_CODES = {"DP": 0, "Nseg": 1}
KMEANS_CODE = 255
_PHMM_HEADER = struct.Struct("<4sIQQBddd")


@dataclass(frozen=True)
class HmmConfig:
    """Topology and training settings.

    ``lam`` is only used by ``DP`` and ``L`` (average segment length in
    frames) only by ``Nseg``.  ``gamma = 0`` disables boundary features;
    ``bf_in_training = False`` keeps them for decoding only.
    """

    K: int = 50
    variant: str = "DP"
    lam: float = 0.0
    gamma: float = 0.0
    L: float = 8.0
    epochs: int = 10
    seed: int = 0
    bf_in_training: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if int(self.K) < 1:
            raise ConfigError("K must be >= 1")
        if self.lam < 0 or self.gamma < 0:
            raise ConfigError("lam and gamma must be >= 0")
        if not self.L > 0:
            raise ConfigError("L must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    def num_segments(self, num_frames: int) -> int:
        """Segment count for ``Nseg``: ``max(1, round(T / L))``, halves rounded up."""
        return max(1, math.floor(num_frames / self.L + 0.5))


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    score: float
    num_segments: int
    reseeded: tuple[int, ...] = ()


@dataclass
class HmmModel:
    centroids: np.ndarray
    config: HmmConfig
    history: list[EpochStats] = field(default_factory=list)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] != self.config.K:
            raise DataError(f"centroids must have K={self.config.K} rows, got shape {self.centroids.shape}")
        if not np.all(np.isfinite(self.centroids)):
            raise DataError("centroids must be finite")

    @property
    def feature_dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class Lattice:
    """Viterbi workspace: final scores per ``(n, k)`` and backpointers."""

    final: np.ndarray
    stay: np.ndarray
    source: np.ndarray


@dataclass
class SegmentationResult:
    boundaries: BoundarySet
    assignments: np.ndarray
    score: float
    lattice: Lattice | None = None

    @property
    def num_segments(self) -> int:
        return len(self.boundaries) + 1


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def emission_matrix(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """``(T, K)`` emission log-scores ``-||x_t - c_k||^2 / 2``.

    The Gaussian normalizer is dropped: every path emits all ``T`` frames, so
    it shifts all path scores equally.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    centroids = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    if x.shape[1] != centroids.shape[1]:
        raise DataError(f"dimension mismatch: features d={x.shape[1]}, centroids d={centroids.shape[1]}")
    out = np.empty((x.shape[0], centroids.shape[0]))
    for k, c in enumerate(centroids):
        diff = x - c
        out[:, k] = -0.5 * np.einsum("ij,ij->i", diff, diff)
    return out


def emission_logscore(x, c) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    c = np.asarray(c, dtype=np.float64).ravel()
    if x.shape != c.shape:
        raise DataError(f"dimension mismatch: {x.size} vs {c.size}")
    return float(emission_matrix(x[None, :], c[None, :])[0, 0])


def switch_penalties(num_frames: int, config: HmmConfig, deviation=None) -> np.ndarray:
    """Cost of starting a new segment at each frame: ``lam + gamma * v[t]``."""
    lam = config.lam if config.variant == "DP" else 0.0
    pen = np.full(num_frames, lam, dtype=np.float64)
    if deviation is not None:
        v = np.asarray(deviation, dtype=np.float64).ravel()
        if v.size != num_frames:
            raise DataError(f"deviation track has length {v.size}, expected {num_frames}")
        pen = pen + config.gamma * v
    return pen


def _as_frames(features) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        return features.frames
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DataError(f"features must be a T x d matrix with T >= 1, got shape {x.shape}")
    return x


def _num_states(num_frames: int, config: HmmConfig, n_k: int) -> int:
    if config.variant == "DP":
        return num_frames
    n = config.num_segments(num_frames)
    if n > num_frames:
        raise DataError(f"Nseg needs N <= T, got N={n} for T={num_frames} (L={config.L})")
    if n > 1 and n_k < 2:
        # adjacent segments must use different centroids
        raise DataError(f"Nseg with a single centroid cannot form N={n} segments")
    return n


def _result_from_labels(labels: np.ndarray, segment_ids: np.ndarray, score: float, lattice=None):
    bounds = np.flatnonzero(np.diff(segment_ids)) + 1
    return SegmentationResult(BoundarySet(bounds, labels.size), labels, float(score) + 0.0, lattice)


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

def backtrace(stay: np.ndarray, source: np.ndarray, n_end: int, k_end: int):
    """Recover per-frame centroid and segment indices from the backpointers."""
    n_frames = stay.shape[0]
    labels = np.empty(n_frames, dtype=np.int64)
    segs = np.empty(n_frames, dtype=np.int64)
    n, k = n_end, k_end
    for t in range(n_frames - 1, -1, -1):
        labels[t] = k
        segs[t] = n
        if t and not stay[t, n, k]:
            best_k, second_k = source[t, n]
            k = int(second_k if best_k == k else best_k)
            n -= 1
    if n != 0:
        raise NumericalError("backtrace did not reach the first segment")
    return labels, segs


def decode_with_fixed_centroids(features, centroids, config: HmmConfig, deviation=None,
                                backend: str | None = None, keep_lattice: bool = False) -> SegmentationResult:
    """Best state path under the configured topology.

    Ties prefer staying over switching and smaller centroid indices; for
    ``DP`` the end state is the best ``(n, k)`` with the smallest ``n`` then
    ``k``.  A boundary is the first frame of every segment after the first.
    """
    x = _as_frames(features)
    centroids = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    n_frames = x.shape[0]
    emit = emission_matrix(x, centroids)
    pen = switch_penalties(n_frames, config, deviation)
    n_states = _num_states(n_frames, config, centroids.shape[0])

    final, stay, source = viterbi.get_forward(backend)(emit, pen, n_states)
    if config.variant == "DP":
        flat = int(np.argmax(final))
        n_end, k_end = divmod(flat, final.shape[1])
    else:
        n_end, k_end = n_states - 1, int(np.argmax(final[n_states - 1]))
    score = final[n_end, k_end]
    if not np.isfinite(score):
        raise NumericalError("no finite-scoring path")
    labels, segs = backtrace(stay, source, n_end, k_end)
    lattice = Lattice(final, stay, source) if keep_lattice else None
    return _result_from_labels(labels, segs, score, lattice)


def decode(features, model: HmmModel, deviation=None, backend: str | None = None,
           keep_lattice: bool = False) -> SegmentationResult:
    x = _as_frames(features)
    if x.shape[1] != model.feature_dim:
        raise DataError(f"dimension mismatch: features d={x.shape[1]}, model d={model.feature_dim}")
    return decode_with_fixed_centroids(x, model.centroids, model.config, deviation, backend, keep_lattice)


def brute_force_decode(features, centroids, config: HmmConfig, deviation=None) -> SegmentationResult:
    """Exhaustive search over every label sequence (test oracle).

    A label sequence fixes the path: a new segment starts exactly where the
    label changes.  Scores accumulate left to right in the same order as the
    lattice, so optimal scores agree bit for bit.  Among tied optima the
    winner is the lexicographically smallest key
    ``(n_end, k_end, (switch_t, k_{t-1}) for t = T-1 .. 1)``, which is the
    path the lattice backtrace selects.
    """
    x = _as_frames(features)
    centroids = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    n_frames, n_k = x.shape[0], centroids.shape[0]
    if n_frames > BRUTE_FORCE_MAX_T or n_k > BRUTE_FORCE_MAX_K:
        raise DataError(f"instance too large for brute force (T={n_frames}, K={n_k}); "
                        f"limits are T <= {BRUTE_FORCE_MAX_T}, K <= {BRUTE_FORCE_MAX_K}")
    emit = emission_matrix(x, centroids)
    pen = switch_penalties(n_frames, config, deviation)
    n_required = _num_states(n_frames, config, n_k) if config.variant == "Nseg" else None

    best_score = -np.inf
    tied: list[tuple[int, ...]] = []
    tail = min(n_frames, 8)
    suffixes = np.array(list(itertools.product(range(n_k), repeat=tail)), dtype=np.int64)
    for prefix in itertools.product(range(n_k), repeat=n_frames - tail):
        z = np.hstack([np.tile(np.array(prefix, dtype=np.int64), (suffixes.shape[0], 1)), suffixes])
        score = emit[0, z[:, 0]]
        changes = np.zeros(z.shape[0], dtype=np.int64)
        for t in range(1, n_frames):
            change = z[:, t] != z[:, t - 1]
            changes += change
            score = np.where(change, score - pen[t], score) + emit[t, z[:, t]]
        if n_required is not None:
            score = np.where(changes == n_required - 1, score, -np.inf)
        top = score.max()
        if top > best_score:
            best_score, tied = top, []
        if top == best_score and np.isfinite(top):
            tied.extend(tuple(row) for row in z[score == top])
    if not tied:
        raise NumericalError("no finite-scoring path")

    def key(path):
        n_end = sum(path[t] != path[t - 1] for t in range(1, n_frames))
        steps = tuple((int(path[t] != path[t - 1]), path[t - 1]) for t in range(n_frames - 1, 0, -1))
        return (n_end, path[-1], steps)

    labels = np.array(min(tied, key=key), dtype=np.int64)
    segs = np.concatenate([[0], np.cumsum(labels[1:] != labels[:-1])])
    return _result_from_labels(labels, segs, best_score)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _initial_centroids(corpus: list[np.ndarray], K: int, rng: np.random.Generator) -> np.ndarray:
    lengths = np.array([x.shape[0] for x in corpus])
    total = int(lengths.sum())
    if total < K:
        raise DataError(f"corpus has {total} frames, fewer than K={K}")
    if total > INIT_MAX_FRAMES:
        picks = np.sort(rng.choice(total, size=INIT_MAX_FRAMES, replace=False))
    else:
        picks = np.arange(total)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    utt = np.searchsorted(offsets, picks, side="right") - 1
    sample = np.stack([corpus[u][p - offsets[u]] for u, p in zip(utt, picks)])
    return kmeans_plusplus(sample, K, rng)


def _decode_item(item, centroids, config, backend):
    x, dev = item
    return decode_with_fixed_centroids(x, centroids, config, dev, backend)


def train_segmental_kmeans(corpus, config: HmmConfig, deviations=None, workers: int = 1,
                           backend: str | None = None, init_centroids=None) -> HmmModel:
    """Hard-EM (Viterbi) training of the centroids.

    Each epoch decodes every utterance with the current centroids, then
    replaces each centroid by the mean of the frames assigned to it.  A
    centroid that received no frames is moved to the frame farthest from its
    assigned centroid.  ``model.history`` holds one :class:`EpochStats` per
    epoch with the total decoding score under that epoch's centroids.
    """
    xs = [_as_frames(m) for m in corpus]
    if not xs:
        raise DataError("cannot train on an empty corpus")
    d = xs[0].shape[1]
    if any(x.shape[1] != d for x in xs):
        raise DataError("all utterances must share the feature dimension")
    if deviations is not None:
        deviations = list(deviations)
        if len(deviations) != len(xs):
            raise DataError("need one deviation track per utterance")
    train_devs = deviations if (deviations is not None and config.bf_in_training) else [None] * len(xs)

    K = config.K
    rng = np.random.default_rng(config.seed)
    if init_centroids is not None:
        centroids = np.array(init_centroids, dtype=np.float64)
        if centroids.shape != (K, d):
            raise DataError(f"init_centroids must have shape {(K, d)}")
    else:
        centroids = _initial_centroids(xs, K, rng)

    history = []
    for epoch in range(1, config.epochs + 1):
        fn = partial(_decode_item, centroids=centroids, config=config, backend=backend)
        results = ordered_map(fn, list(zip(xs, train_devs)), workers)
        total = 0.0
        n_segments = 0
        sums = np.zeros((K, d))
        counts = np.zeros(K)
        dists = []
        for x, res in zip(xs, results):
            total += res.score
            n_segments += res.num_segments
            s, c = cluster_sums(x, res.assignments, K)
            sums += s
            counts += c
            diff = x - centroids[res.assignments]
            dists.append(np.einsum("ij,ij->i", diff, diff))
        new = centroids.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if empty.size:
            all_d = np.concatenate(dists)
            offsets = np.concatenate([[0], np.cumsum([x.shape[0] for x in xs])])
            for k, j in zip(empty, farthest_frames(all_d, empty.size)):
                u = int(np.searchsorted(offsets, j, side="right") - 1)
                new[k] = xs[u][j - offsets[u]]
            logger.info("epoch %d: re-seeded empty clusters %s", epoch, empty.tolist())
        centroids = new
        history.append(EpochStats(epoch, total, n_segments, tuple(int(k) for k in empty)))
        logger.info("epoch %d: total score %.6f, %d segments", epoch, total, n_segments)
    return HmmModel(centroids, config, history)


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def _write_phmm(path, centroids, code, lam, gamma, L):
    centroids = np.asarray(centroids)
    k, d = centroids.shape
    with open(path, "wb") as f:
        f.write(_PHMM_HEADER.pack(PHMM_MAGIC, PHMM_VERSION, k, d, code, lam, gamma, L))
        f.write(np.ascontiguousarray(centroids, dtype="<f4").tobytes())


def write_model_file(path, model: HmmModel):
    c = model.config
    _write_phmm(path, model.centroids, VARIANT_CODES[c.variant], c.lam, c.gamma, c.L)


def write_kmeans_file(path, model: KmeansModel):
    _write_phmm(path, model.centroids, KMEANS_CODE, 0.0, 0.0, 0.0)


def read_phmm(path):
    """Return ``(variant, centroids, header)``; variant is ``"DP"``, ``"Nseg"`` or ``"kmeans"``."""
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as e:
        raise DataError(f"{path}: no such file") from e
    if len(data) < _PHMM_HEADER.size:
        raise DataError(f"{path}: malformed header")
    magic, version, k, d, code, lam, gamma, L = _PHMM_HEADER.unpack_from(data)
    if magic != PHMM_MAGIC or version != PHMM_VERSION:
        raise DataError(f"{path}: not a PHMM v1 file")
    payload = data[_PHMM_HEADER.size:]
    if k == 0 or d == 0 or len(payload) < 4 * k * d:
        raise DataError(f"{path}: payload shorter than K·d")
    centroids = np.frombuffer(payload, dtype="<f4", count=k * d).reshape(k, d).astype(np.float64)
    if code == KMEANS_CODE:
        variant = "kmeans"
    else:
        names = {v: n for n, v in VARIANT_CODES.items()}
        if code not in names:
            raise DataError(f"{path}: unknown variant code {code}")
        variant = names[code]
    return variant, centroids, {"K": k, "d": d, "lam": lam, "gamma": gamma, "L": L}


def load_model_file(path, **overrides) -> HmmModel:
    variant, centroids, h = read_phmm(path)
    if variant == "kmeans":
        raise DataError(f"{path}: holds k-means centroids, not an HMM")
    params = dict(K=h["K"], variant=variant, lam=h["lam"], gamma=h["gamma"], L=h["L"])
    params.update(overrides)
    return HmmModel(centroids, HmmConfig(**params))


def load_kmeans_file(path) -> KmeansModel:
    variant, centroids, _ = read_phmm(path)
    if variant != "kmeans":
        raise DataError(f"{path}: holds an HMM, not k-means centroids")
    return KmeansModel(centroids, inertia=0.0)
