"""Spectral variation, prominence-based peak picking and boundary deviations."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataError
from .features import FeatureMatrix

SPANS = ("adjacent", "wide")


@dataclass(frozen=True)
class SvfCurve:
    """Per-frame dissimilarity values.

    ``valid_range`` is the half-open interval ``[first, last)`` of frames where
    the windowed dot product is defined; frames outside it carry the minimum
    of the valid values.
    """

    values: np.ndarray
    valid_range: tuple[int, int]

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class BoundarySet:
    frames: np.ndarray
    num_frames: int

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.int64).ravel()
        if frames.size:
            if frames[0] < 0 or frames[-1] >= self.num_frames:
                raise DataError(f"boundary frames must lie in [0, {self.num_frames})")
            if np.any(np.diff(frames) <= 0):
                raise DataError("boundary frames must be strictly increasing")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return self.frames.size


def spectral_variation(m: FeatureMatrix | np.ndarray, span: str = "adjacent") -> SvfCurve:
    """Negated cosine similarity between nearby frames (raw, in [-1, 1]).

    ``adjacent`` compares frames ``t - 1`` and ``t`` for ``t`` in ``[1, T)``.
    ``wide`` compares ``t - 2`` and ``t + 1`` for ``t`` in ``[2, T - 1)``,
    i.e. a 30 ms window on 10 ms frames.
    """
    x = m.frames if isinstance(m, FeatureMatrix) else np.asarray(m, dtype=np.float64)
    t_len = x.shape[0]
    if span == "adjacent":
        lo, hi, a_off, b_off = 1, t_len, -1, 0
    elif span == "wide":
        lo, hi, a_off, b_off = 2, t_len - 1, -2, 1
    else:
        raise DataError(f"unknown span {span!r}; expected one of {SPANS}")
    if hi <= lo:
        need = 2 if span == "adjacent" else 4
        raise DataError(f"spectral_variation({span!r}) needs T >= {need}, got T = {t_len}")

    norms = np.linalg.norm(x, axis=1)
    used = np.zeros(t_len, dtype=bool)
    used[lo + a_off:hi + a_off] = True
    used[lo + b_off:hi + b_off] = True
    zero = np.flatnonzero(used & (norms == 0))
    if zero.size:
        raise DataError(f"zero-norm feature frame at index {int(zero[0])}")

    t = np.arange(lo, hi)
    a, b = x[t + a_off], x[t + b_off]
    d = -np.einsum("ij,ij->i", a, b) / (norms[t + a_off] * norms[t + b_off])
    d = np.clip(d, -1.0, 1.0)
    values = np.full(t_len, d.min())
    values[lo:hi] = d
    return SvfCurve(values, (lo, hi))


def normalize_svf(curve) -> SvfCurve:
    """Min-max scale to [0, 1] per utterance; a constant curve maps to zeros."""
    if isinstance(curve, SvfCurve):
        values, valid = curve.values, curve.valid_range
    else:
        values = np.asarray(curve, dtype=np.float64).ravel()
        valid = (0, values.size)
    if values.size == 0:
        raise DataError("cannot normalize an empty curve")
    lo, hi = values.min(), values.max()
    if hi == lo:
        return SvfCurve(np.zeros_like(values), valid)
    return SvfCurve((values - lo) / (hi - lo), valid)


def _local_maxima(x: np.ndarray) -> np.ndarray:
    """Indices of strict local maxima; a flat top is reported at its middle.

    A plateau ``[l, r]`` counts when ``x[l-1] < x[l]`` and ``x[r+1] < x[r]``
    and is reported at ``(l + r) // 2``.  Signal edges never qualify.
    """
    peaks = []
    n = x.size
    i = 1
    while i < n - 1:
        if x[i - 1] < x[i]:
            r = i
            while r + 1 < n and x[r + 1] == x[i]:
                r += 1
            if r + 1 < n and x[r + 1] < x[i]:
                peaks.append((i + r) // 2)
            i = r + 1
        else:
            i += 1
    return np.asarray(peaks, dtype=np.int64)


def peak_prominences(x: np.ndarray, peaks: np.ndarray) -> np.ndarray:
    """Topographic prominence of each index in ``peaks``.

    On each side, walk outward until a strictly higher sample or the edge;
    the base on that side is the minimum seen.  Prominence is the peak height
    minus the higher of the two bases.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(len(peaks))
    for j, p in enumerate(peaks):
        h = x[p]
        i = p
        left_min = h
        while i > 0 and x[i - 1] <= h:
            i -= 1
            left_min = min(left_min, x[i])
        i = p
        right_min = h
        while i < x.size - 1 and x[i + 1] <= h:
            i += 1
            right_min = min(right_min, x[i])
        out[j] = h - max(left_min, right_min)
    return out


def find_peaks(curve, prominence_threshold: float) -> BoundarySet:
    """Local maxima of ``curve`` whose prominence is at least the threshold."""
    if prominence_threshold < 0:
        raise DataError("prominence threshold must be non-negative")
    if isinstance(curve, SvfCurve):
        x, (lo, hi) = curve.values, curve.valid_range
    else:
        x = np.asarray(curve, dtype=np.float64).ravel()
        lo, hi = 0, x.size
    peaks = _local_maxima(x)
    peaks = peaks[(peaks >= lo) & (peaks < hi)]
    if peaks.size:
        peaks = peaks[peak_prominences(x, peaks) >= prominence_threshold]
    return BoundarySet(peaks, x.size)


def detect_boundaries(m: FeatureMatrix, prominence_threshold: float, span: str = "wide") -> BoundarySet:
    """SVF, per-utterance normalization and peak picking in one call."""
    return find_peaks(normalize_svf(spectral_variation(m, span)), prominence_threshold)


def deviation_track(b: BoundarySet) -> np.ndarray:
    """Distance in frames from every frame to its nearest boundary.

    With no boundaries the track is all zeros, which switches the boundary
    penalty off for that utterance.
    """
    t = np.arange(b.num_frames)
    if len(b) == 0:
        return np.zeros(b.num_frames, dtype=np.int64)
    pos = np.searchsorted(b.frames, t)
    right = b.frames[np.minimum(pos, len(b) - 1)]
    left = b.frames[np.maximum(pos - 1, 0)]
    return np.minimum(np.abs(t - left), np.abs(right - t)).astype(np.int64)


def boundaries_to_times(b: BoundarySet | np.ndarray, frame_period: float) -> list[float]:
    frames = b.frames if isinstance(b, BoundarySet) else np.asarray(b, dtype=np.int64)
    return [int(f) * frame_period for f in frames]


def times_to_frames(times, frame_period: float, num_frames: int | None = None) -> BoundarySet:
    """Nearest frame index for each time; duplicates collapse."""
    frames = np.unique(np.rint(np.asarray(times, dtype=np.float64) / frame_period).astype(np.int64))
    if num_frames is None:
        num_frames = int(frames[-1]) + 1 if frames.size else 0
    return BoundarySet(frames, num_frames)


def write_boundary_file(path, boundaries: dict[str, list[float]]):
    """One line per utterance: ``utt_id<TAB>space-separated seconds``."""
    with open(path, "w", encoding="utf-8") as f:
        for utt in sorted(boundaries):
            f.write(utt + "\t" + " ".join(f"{s:.3f}" for s in boundaries[utt]) + "\n")


def read_boundary_file(path) -> dict[str, list[float]]:
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as e:
        raise DataError(f"{path}: no such file") from e
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        utt, _, rest = line.partition("\t")
        try:
            out[utt] = [float(v) for v in rest.split()]
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: {e}") from e
    return out
