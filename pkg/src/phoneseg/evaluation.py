"""Boundary precision/recall/F1/R-value and frame-level purity."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError

logger = logging.getLogger(__name__)

PROTOCOLS = ("strict", "lenient")
DEFAULT_TOLERANCE = 0.020
# absorbs representation error in second-valued boundaries (0.33 - 0.31 > 0.02 in binary)
_TIME_EPS = 1e-9


@dataclass(frozen=True)
class BoundaryMatch:
    """Hit counts for one utterance.

    ``hits`` counts matched hypotheses (precision side) and ``ref_hits``
    matched references (recall side).  They are equal under the strict
    protocol.
    """

    hits: int
    num_ref: int
    num_hyp: int
    tolerance_sec: float
    ref_hits: int | None = None

    def __post_init__(self):
        if self.ref_hits is None:
            object.__setattr__(self, "ref_hits", self.hits)

    @property
    def precision(self) -> float:
        return self.hits / self.num_hyp if self.num_hyp else 0.0

    @property
    def recall(self) -> float:
        return self.ref_hits / self.num_ref if self.num_ref else 0.0


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    r_value: float
    hits: int = 0
    ref_hits: int = 0
    num_ref: int = 0
    num_hyp: int = 0
    rows: dict[str, dict] = field(default_factory=dict)

    def as_table(self) -> list[tuple[str, float]]:
        return [("precision", self.precision), ("recall", self.recall), ("f1", self.f1),
                ("r_value", self.r_value), ("hits", self.hits), ("ref_hits", self.ref_hits),
                ("num_ref", self.num_ref), ("num_hyp", self.num_hyp)]

    def to_csv(self) -> str:
        return _metric_csv(self.as_table())

    def summary(self) -> str:
        return (f"P={100 * self.precision:.1f} R={100 * self.recall:.1f} "
                f"F1={100 * self.f1:.1f} RV={100 * self.r_value:.1f} "
                f"(ref={self.num_ref}, hyp={self.num_hyp}, hits={self.hits})")


@dataclass
class PurityReport:
    phone_purity: float
    cluster_purity: float
    joint_counts: np.ndarray
    clusters: list
    phones: list

    def to_csv(self) -> str:
        return _metric_csv([("phone_purity", self.phone_purity),
                            ("cluster_purity", self.cluster_purity),
                            ("frames", int(self.joint_counts.sum()))])

    def contingency_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cluster"] + list(self.phones))
        for k, row in zip(self.clusters, self.joint_counts):
            w.writerow([k] + [int(v) for v in row])
        return buf.getvalue()

    def summary(self) -> str:
        return f"PP={100 * self.phone_purity:.1f} CP={100 * self.cluster_purity:.1f}"


def _metric_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for name, value in rows:
        w.writerow([name, repr(float(value)) if isinstance(value, float) else value])
    return buf.getvalue()


def _check_sorted(xs, name):
    if any(b < a for a, b in zip(xs, xs[1:])):
        raise DataError(f"{name} boundaries must be sorted")


def match_boundaries(ref, hyp, tol: float = DEFAULT_TOLERANCE, protocol: str = "strict") -> BoundaryMatch:
    """Count boundary hits within ``tol`` seconds.

    ``strict`` pairs references and hypotheses one-to-one with a two-pointer
    sweep, which is a maximum matching for a symmetric window on sorted
    input.  ``lenient`` credits every hypothesis near any reference and,
    independently, every reference near any hypothesis.
    """
    ref = [float(r) for r in ref]
    hyp = [float(h) for h in hyp]
    _check_sorted(ref, "reference")
    _check_sorted(hyp, "hypothesis")
    if tol < 0:
        raise DataError("tolerance must be >= 0")
    window = tol + _TIME_EPS
    if protocol == "strict":
        i = j = hits = 0
        while i < len(ref) and j < len(hyp):
            if abs(ref[i] - hyp[j]) <= window:
                hits += 1
                i += 1
                j += 1
            elif hyp[j] < ref[i]:
                j += 1
            else:
                i += 1
        return BoundaryMatch(hits, len(ref), len(hyp), tol)
    if protocol == "lenient":
        r = np.asarray(ref)
        h = np.asarray(hyp)
        if r.size and h.size:
            close = np.abs(r[:, None] - h[None, :]) <= window
            hyp_hits = int(close.any(axis=0).sum())
            ref_hits = int(close.any(axis=1).sum())
        else:
            hyp_hits = ref_hits = 0
        return BoundaryMatch(hyp_hits, len(ref), len(hyp), tol, ref_hits)
    raise DataError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")


def f1_score(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def r_value(precision: float, recall: float) -> float:
    """R-value of Rasanen et al. (2009).

    ``OS = recall / precision - 1``, ``r1 = sqrt((1 - recall)^2 + OS^2)``,
    ``r2 = (-OS + recall - 1) / sqrt(2)``, ``R = 1 - (|r1| + |r2|) / 2``.
    With no correct boundaries at all (``precision = recall = 0``) ``OS`` is
    taken as -1.  ``precision = 0`` with ``recall > 0`` cannot happen for a
    real count table and returns 0 with a warning.
    """
    if precision == 0:
        if recall > 0:
            logger.warning("R-value undefined for precision 0 and recall %g; reporting 0", recall)
            return 0.0
        os_ = -1.0
    else:
        os_ = recall / precision - 1.0
    r1 = math.sqrt((1.0 - recall) ** 2 + os_ ** 2)
    r2 = (-os_ + recall - 1.0) / math.sqrt(2.0)
    return 1.0 - (abs(r1) + abs(r2)) / 2.0


def reference_boundaries(segments) -> list[float]:
    """Internal boundaries of an alignment: every segment start but the first."""
    return [float(s) for s, _, _ in segments[1:]]


def strip_edge_boundaries(boundaries, start: float = 0.0, end: float | None = None) -> list[float]:
    """Drop boundaries at or before the utterance start and at or after its end.

    Accepts either boundary times or an alignment (list of
    ``(start, end, label)``), which is first reduced to its internal
    boundaries with the alignment's own span as the utterance extent.
    """
    items = list(boundaries)
    if items and isinstance(items[0], (tuple, list)):
        start, end = float(items[0][0]), float(items[-1][1])
        items = reference_boundaries(items)
    out = [float(b) for b in items if b > start + _TIME_EPS]
    if end is not None:
        out = [b for b in out if b < end - _TIME_EPS]
    return out


def _report(hits, ref_hits, num_ref, num_hyp, rows=None) -> EvalReport:
    p = hits / num_hyp if num_hyp else 0.0
    r = ref_hits / num_ref if num_ref else 0.0
    return EvalReport(p, r, f1_score(p, r), r_value(p, r), hits, ref_hits, num_ref, num_hyp, rows or {})


def evaluate_corpus(refs: dict, hyps: dict, tol: float = DEFAULT_TOLERANCE, protocol: str = "strict",
                    aggregation: str = "pooled") -> EvalReport:
    """Pool hit counts over utterances and compute metrics once.

    ``refs`` and ``hyps`` map utterance ids to sorted boundary times with
    edge boundaries already removed.  Per-utterance metrics are kept in
    ``report.rows`` for inspection.
    """
    if aggregation != "pooled":
        raise DataError(f"unsupported aggregation {aggregation!r}")
    if set(refs) != set(hyps):
        missing = sorted(set(refs) ^ set(hyps))
        raise DataError(f"utterance id mismatch between reference and hypothesis: {missing[:5]}")
    hits = ref_hits = num_ref = num_hyp = 0
    rows = {}
    for utt in sorted(refs):
        m = match_boundaries(refs[utt], hyps[utt], tol, protocol)
        hits += m.hits
        ref_hits += m.ref_hits
        num_ref += m.num_ref
        num_hyp += m.num_hyp
        p, r = m.precision, m.recall
        rows[utt] = {"precision": p, "recall": r, "f1": f1_score(p, r),
                     "hits": m.hits, "num_ref": m.num_ref, "num_hyp": m.num_hyp}
    return _report(hits, ref_hits, num_ref, num_hyp, rows)


def frame_labels(segments, num_frames: int, frame_period: float) -> list:
    """Phone label at each frame's center time, ``None`` outside all segments."""
    starts = np.array([s for s, _, _ in segments])
    ends = np.array([e for _, e, _ in segments])
    centers = np.arange(num_frames) * frame_period + frame_period / 2.0
    idx = np.searchsorted(starts, centers, side="right") - 1
    out = []
    for c, i in zip(centers, idx):
        out.append(segments[i][2] if i >= 0 and c < ends[i] else None)
    return out


def contingency(assignments, labels):
    clusters = sorted({int(a) for a, p in zip(assignments, labels) if p is not None})
    phones = sorted({p for p in labels if p is not None})
    ci = {k: i for i, k in enumerate(clusters)}
    pi = {p: i for i, p in enumerate(phones)}
    joint = np.zeros((len(clusters), len(phones)), dtype=np.int64)
    for a, p in zip(assignments, labels):
        if p is not None:
            joint[ci[int(a)], pi[p]] += 1
    return joint, clusters, phones


def purity_from_counts(joint: np.ndarray) -> tuple[float, float]:
    total = joint.sum()
    if total == 0:
        raise DataError("no frames to evaluate")
    return joint.max(axis=1).sum() / total, joint.max(axis=0).sum() / total


def purity(assignments, alignment, frame_period: float) -> PurityReport:
    """Phone purity and cluster purity for one utterance."""
    return corpus_purity([(assignments, alignment)], frame_period)


def corpus_purity(items, frame_period: float) -> PurityReport:
    """Purity over ``(assignments, alignment)`` pairs with a shared count table.

    Frames past the end of the alignment or beyond the assignments are
    dropped (trim to overlap).
    """
    all_a, all_l = [], []
    for assignments, alignment in items:
        assignments = np.asarray(assignments).ravel()
        labels = frame_labels(alignment, assignments.size, frame_period)
        all_a.extend(assignments.tolist())
        all_l.extend(labels)
    if not any(p is not None for p in all_l):
        raise DataError("assignments and alignment do not overlap")
    joint, clusters, phones = contingency(all_a, all_l)
    pp, cp = purity_from_counts(joint)
    return PurityReport(float(pp), float(cp), joint, clusters, phones)
