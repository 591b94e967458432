import itertools
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phoneseg.exceptions import DataError
from phoneseg.evaluation import (
    corpus_purity, evaluate_corpus, f1_score, frame_labels, match_boundaries, purity,
    r_value, reference_boundaries, strip_edge_boundaries,
)

times = st.lists(st.integers(0, 300).map(lambda i: i / 100), max_size=12).map(sorted)


def max_matching(ref, hyp, tol):
    """Largest one-to-one matching by exhaustive search over hypothesis subsets."""
    best = 0
    for r in range(min(len(ref), len(hyp)), 0, -1):
        for hs in itertools.combinations(range(len(hyp)), r):
            for rs in itertools.combinations(range(len(ref)), r):
                # sorted sequences: an optimal matching can always be taken order-preserving
                if all(abs(ref[i] - hyp[j]) <= tol + 1e-9 for i, j in zip(rs, hs)):
                    return r
    return best


class TestMatch:
    def test_strict_no_double_credit(self):
        m = match_boundaries([0.10], [0.10, 0.11], 0.02, "strict")
        assert (m.hits, m.precision, m.recall) == (1, 0.5, 1.0)

    def test_lenient_double_credit(self):
        m = match_boundaries([0.10], [0.10, 0.11], 0.02, "lenient")
        assert (m.precision, m.recall) == (1.0, 1.0)

    @pytest.mark.parametrize("protocol", ["strict", "lenient"])
    @pytest.mark.parametrize("tol", [0.0, 0.02, 1.0])
    def test_identity(self, protocol, tol):
        ref = [0.1, 0.25, 0.4, 1.3]
        m = match_boundaries(ref, ref, tol, protocol)
        assert m.precision == m.recall == f1_score(m.precision, m.recall) == 1.0

    def test_tolerance_edge_is_inclusive(self):
        # 0.12 - 0.10 is not exactly 0.02 in binary
        assert match_boundaries([0.10], [0.12], 0.02).hits == 1
        assert match_boundaries([0.10], [0.1201], 0.02).hits == 0

    def test_errors(self):
        with pytest.raises(DataError, match="sorted"):
            match_boundaries([0.2, 0.1], [0.1])
        with pytest.raises(DataError, match="protocol"):
            match_boundaries([0.1], [0.1], protocol="fuzzy")
        with pytest.raises(DataError, match="tolerance"):
            match_boundaries([0.1], [0.1], -0.01)

    def test_empty(self):
        m = match_boundaries([], [], 0.02)
        assert m.precision == m.recall == 0.0

    @settings(max_examples=150, deadline=None)
    @given(times.filter(lambda x: len(x) <= 6), times.filter(lambda x: len(x) <= 6),
           st.sampled_from([0.0, 0.01, 0.02, 0.05]))
    def test_strict_is_maximum_matching(self, ref, hyp, tol):
        assert match_boundaries(ref, hyp, tol).hits == max_matching(ref, hyp, tol)

    @given(times, times, st.sampled_from([0.0, 0.02, 0.1]))
    def test_strict_at_most_lenient(self, ref, hyp, tol):
        s = match_boundaries(ref, hyp, tol, "strict")
        lenient = match_boundaries(ref, hyp, tol, "lenient")
        assert s.hits <= min(len(ref), len(hyp))
        assert s.hits <= lenient.hits <= len(hyp)
        assert s.hits <= lenient.ref_hits <= len(ref)

    @given(times, times, st.integers(-100, 100))
    def test_shift_invariance(self, ref, hyp, shift_ms):
        # integer-millisecond shifts keep every pairwise gap exact on the grid
        shift = shift_ms / 1000
        for protocol in ("strict", "lenient"):
            a = match_boundaries(ref, hyp, 0.02, protocol)
            b = match_boundaries([r + shift for r in ref], [h + shift for h in hyp], 0.02, protocol)
            assert (a.hits, a.ref_hits) == (b.hits, b.ref_hits)


class TestRValue:
    def test_perfect(self):
        assert r_value(1, 1) == 1.0

    def test_half(self):
        assert r_value(0.5, 0.5) == pytest.approx(1 - (0.5 + 0.5 / math.sqrt(2)) / 2, abs=1e-12)
        assert r_value(0.5, 0.5) == pytest.approx(0.5732, abs=1e-4)

    def test_reference_row(self):
        assert 100 * r_value(0.804, 0.793) == pytest.approx(82.8, abs=0.1)

    def test_precision_zero(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert r_value(0.0, 0.3) == 0.0
        assert "undefined" in caplog.text
        assert r_value(0.0, 0.0) == pytest.approx(1 - (math.sqrt(2) + 0) / 2)

    @given(st.floats(0.05, 1), st.floats(0.01, 0.99))
    def test_oversegmentation_penalized(self, recall, frac):
        precision = recall * frac
        assert r_value(precision, recall) < r_value(recall, recall)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_f1_consistency(self, p, r):
        f = f1_score(p, r)
        if p + r > 0:
            assert f == pytest.approx(2 * p * r / (p + r), abs=1e-9)
        else:
            assert f == 0


class TestCorpus:
    def test_identical_utterances(self):
        ref = {"a": [0.1, 0.3], "b": [0.2]}
        rep = evaluate_corpus(ref, ref)
        assert rep.precision == rep.recall == 1.0

    def test_pooling(self):
        refs = {"a": [0.1, 0.3], "b": [0.1, 0.3]}
        hyps = {"a": [0.1, 0.3], "b": [0.6, 0.9]}
        rep = evaluate_corpus(refs, hyps)
        assert rep.precision == rep.recall == 0.5
        assert rep.rows["b"]["precision"] == 0

    @given(times, times, st.sampled_from(["strict", "lenient"]))
    def test_single_utterance(self, ref, hyp, protocol):
        rep = evaluate_corpus({"u": ref}, {"u": hyp}, 0.02, protocol)
        m = match_boundaries(ref, hyp, 0.02, protocol)
        assert (rep.precision, rep.recall) == (m.precision, m.recall)
        assert rep.f1 == pytest.approx(f1_score(rep.precision, rep.recall), abs=1e-9)

    def test_id_mismatch(self):
        with pytest.raises(DataError, match="mismatch"):
            evaluate_corpus({"a": []}, {"b": []})

    def test_report_formats(self):
        rep = evaluate_corpus({"a": [0.1]}, {"a": [0.1, 0.5]})
        csv_text = rep.to_csv()
        assert csv_text.splitlines()[0] == "metric,value"
        assert "precision,0.5" in csv_text
        assert rep.summary().startswith("P=50.0 R=100.0 F1=66.7")


class TestEdges:
    def test_alignment(self):
        assert strip_edge_boundaries([(0, 1, "a"), (1, 2, "b"), (2, 3, "c")]) == [1.0, 2.0]
        assert strip_edge_boundaries([(0, 1.5, "a")]) == []
        assert reference_boundaries([(0, 1, "a"), (1, 2, "b")]) == [1.0]

    def test_hypothesis_edges(self):
        assert strip_edge_boundaries([0.0, 0.5]) == [0.5]
        assert strip_edge_boundaries([0.0, 0.5, 2.0], end=2.0) == [0.5]


class TestPurity:
    def test_one_to_one(self):
        ali = [(0.0, 0.03, "a"), (0.03, 0.05, "b")]
        rep = purity([7, 7, 7, 2, 2], ali, 0.01)
        assert rep.phone_purity == rep.cluster_purity == 1.0
        assert rep.joint_counts.sum() == 5

    def test_sixty_forty(self):
        ali = [(0.0, 0.06, "a"), (0.06, 0.10, "b")]
        rep = purity([0] * 10, ali, 0.01)
        assert (rep.phone_purity, rep.cluster_purity) == (0.6, 1.0)

    def test_maximal_confusion(self):
        ali = [(0.0, 0.02, "a"), (0.02, 0.04, "b")]
        rep = purity([0, 1, 0, 1], ali, 0.01)
        assert rep.phone_purity == 0.5

    def test_frame_center_and_trim(self):
        ali = [(0.0, 0.015, "a"), (0.015, 0.03, "b")]
        assert frame_labels(ali, 4, 0.01) == ["a", "b", "b", None]
        rep = purity([0, 1, 1, 5], ali, 0.01)
        assert rep.joint_counts.sum() == 3

    def test_no_overlap(self):
        with pytest.raises(DataError, match="overlap"):
            purity([0, 1], [(1.0, 2.0, "a")], 0.01)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 4), min_size=1, max_size=40), st.integers(0, 2**32 - 1))
    def test_relabeling_invariance(self, labels, seed):
        rng = np.random.default_rng(seed)
        n = len(labels)
        ali = [(i * 0.01, (i + 1) * 0.01, f"p{labels[i]}") for i in range(n)]
        clusters = rng.integers(0, 5, size=n)
        base = purity(clusters, ali, 0.01)
        perm = rng.permutation(5) + 10
        renamed = [(s, e, "q" + lab) for s, e, lab in ali]
        other = purity(perm[clusters], renamed, 0.01)
        assert (base.phone_purity, base.cluster_purity) == (other.phone_purity, other.cluster_purity)
        assert 0 <= base.phone_purity <= 1 and 0 <= base.cluster_purity <= 1

    def test_corpus_pools_counts(self):
        ali = [(0.0, 0.02, "a"), (0.02, 0.04, "b")]
        rep = corpus_purity([([0, 0, 1, 1], ali), ([0, 1, 1, 1], ali)], 0.01)
        assert rep.joint_counts.sum() == 8
        assert rep.phone_purity == 7 / 8
        csv_text = rep.contingency_csv()
        assert csv_text.splitlines()[0].split(",")[1:] == ["a", "b"]
