import logging
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from phoneseg.exceptions import DataError
from phoneseg.features import (
    LOG_FLOOR, FeatureMatrix, NormalizationStats, align_lengths, apply_normalization,
    compute_log_mel, fit_normalization, invert_normalization, load_feature_file,
    mel_center_frequencies, read_alignment, read_wav, upsample_to_period, write_alignment,
    write_feature_file, write_wav,
)


def reference_log_mel(samples, frame_index):
    """Naive per-bin DFT and loop-built HTK filterbank for one frame."""
    sr, win, hop, nfft, n_mels = 16000, 400, 160, 512, 40
    seg = samples[frame_index * hop: frame_index * hop + win]
    window = [0.5 - 0.5 * math.cos(2 * math.pi * n / (win - 1)) for n in range(win)]
    x = [s * w for s, w in zip(seg, window)]
    power = []
    for k in range(nfft // 2 + 1):
        re = sum(v * math.cos(2 * math.pi * k * n / nfft) for n, v in enumerate(x))
        im = sum(v * math.sin(2 * math.pi * k * n / nfft) for n, v in enumerate(x))
        power.append(re * re + im * im)

    def mel(f):
        return 2595 * math.log10(1 + f / 700)

    def hz(m):
        return 700 * (10 ** (m / 2595) - 1)

    top = mel(sr / 2)
    pts = [hz(top * i / (n_mels + 1)) for i in range(n_mels + 2)]
    out = []
    for i in range(n_mels):
        lo, c, hi = pts[i], pts[i + 1], pts[i + 2]
        e = 0.0
        for k, p in enumerate(power):
            f = k * sr / nfft
            if lo < f < hi:
                w = (f - lo) / (c - lo) if f <= c else (hi - f) / (hi - c)
                e += w * p
        out.append(math.log(max(e, 1e-10)))
    return np.array(out)


class TestLogMel:
    def test_silence_hits_floor(self):
        m = compute_log_mel(np.zeros(16000))
        assert m.frames.shape == (98, 40)
        assert m.frame_period == pytest.approx(0.010)
        assert np.all(m.frames == np.log(LOG_FLOOR))

    @pytest.mark.parametrize("n", [400, 559, 560, 16000, 16001])
    def test_frame_count(self, n):
        assert compute_log_mel(np.ones(n)).num_frames == 1 + (n - 400) // 160

    def test_sine_peaks_at_nearest_band(self):
        t = np.arange(16000) / 16000
        m = compute_log_mel(0.5 * np.sin(2 * np.pi * 1000 * t))
        nearest = np.argmin(np.abs(mel_center_frequencies() - 1000))
        assert np.argmax(m.frames.mean(axis=0)) == nearest

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(3)
        t = np.arange(2000) / 16000
        x = 0.5 * np.sin(2 * np.pi * 1000 * t) + 0.05 * rng.normal(size=t.size)
        m = compute_log_mel(x)
        for frame in (0, 5, m.num_frames - 1):
            np.testing.assert_allclose(m.frames[frame], reference_log_mel(x, frame), rtol=1e-9, atol=1e-9)

    def test_too_short(self):
        with pytest.raises(DataError, match="shorter than one"):
            compute_log_mel(np.zeros(399))

    def test_empty_and_wrong_rate(self):
        with pytest.raises(DataError, match="empty"):
            compute_log_mel(np.zeros(0))
        with pytest.raises(DataError, match="16000"):
            compute_log_mel(np.zeros(8000), sample_rate=8000)

    def test_deterministic(self):
        x = np.random.default_rng(0).normal(size=4000)
        np.testing.assert_array_equal(compute_log_mel(x).frames, compute_log_mel(x.copy()).frames)

    def test_wav_roundtrip(self, tmp_path):
        x = 0.3 * np.sin(np.arange(1600) / 5)
        write_wav(tmp_path / "a.wav", x)
        y, rate = read_wav(tmp_path / "a.wav")
        assert rate == 16000
        np.testing.assert_allclose(y, x, atol=1 / 32768)


class TestNormalization:
    def test_hand_example(self):
        s = fit_normalization([FeatureMatrix([[1, 3], [3, 5]], 0.01)])
        np.testing.assert_array_equal(s.mean, [2, 4])
        np.testing.assert_array_equal(s.std, [1, 1])

    def test_zero_variance_floor(self):
        m = FeatureMatrix(np.full((3, 2), 7.0), 0.01)
        s = fit_normalization([m, m])
        np.testing.assert_array_equal(s.mean, [7, 7])
        np.testing.assert_array_equal(s.std, [1e-8, 1e-8])

    def test_random_corpus_standardized(self):
        rng = np.random.default_rng(0)
        corpus = [FeatureMatrix(rng.normal(3, 2, size=(100, 40)), 0.01) for _ in range(3)]
        s = fit_normalization(corpus)
        out = np.vstack([apply_normalization(m, s).frames for m in corpus])
        np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-6)
        np.testing.assert_allclose(out.std(axis=0), 1, atol=1e-6)

    def test_apply_examples(self):
        s = NormalizationStats([1.0, -2.0], [2.0, 0.5])
        m = FeatureMatrix(np.tile(s.mean, (4, 1)), 0.01)
        assert np.all(apply_normalization(m, s).frames == 0)
        ident = NormalizationStats([0, 0], [1, 1])
        x = FeatureMatrix([[1.5, -3.0]], 0.01)
        np.testing.assert_array_equal(apply_normalization(x, ident).frames, x.frames)

    def test_roundtrip(self):
        rng = np.random.default_rng(1)
        m = FeatureMatrix(rng.normal(size=(20, 5)), 0.01)
        s = NormalizationStats(rng.normal(size=5), rng.uniform(0.1, 3, size=5))
        back = invert_normalization(apply_normalization(m, s), s)
        np.testing.assert_allclose(back.frames, m.frames, atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(hnp.arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 5)),
                      elements=st.floats(-1e3, 1e3)))
    def test_idempotent(self, x):
        # dimensions whose spread is below the std floor are excluded by design
        spread = x.std(axis=0)
        assume(np.all((spread == 0) | (spread > 1e-3)))
        m = FeatureMatrix(x, 0.01)
        once = apply_normalization(m, fit_normalization([m]))
        twice = apply_normalization(once, fit_normalization([once]))
        assert np.max(np.abs(twice.frames - once.frames)) < 1e-6

    def test_errors(self):
        with pytest.raises(DataError):
            fit_normalization([])
        with pytest.raises(DataError, match="dimension"):
            fit_normalization([FeatureMatrix(np.ones((2, 2)), 0.01), FeatureMatrix(np.ones((2, 3)), 0.01)])
        with pytest.raises(DataError, match="dimension"):
            apply_normalization(FeatureMatrix(np.ones((2, 3)), 0.01), NormalizationStats([0, 0], [1, 1]))


class TestFeatureFile:
    def test_hand_example(self, tmp_path):
        p = tmp_path / "x.feat"
        write_feature_file(p, FeatureMatrix([[1, 2], [3, 4], [5, 6]], 0.02))
        m = load_feature_file(p)
        assert m.frame_period == 0.02
        np.testing.assert_array_equal(m.frames, [[1, 2], [3, 4], [5, 6]])
        raw = p.read_bytes()
        assert raw[:4] == b"FEAT" and len(raw) == 4 + 4 + 8 + 8 + 8 + 6 * 4

    def test_bit_identical_roundtrip(self, tmp_path):
        x = np.random.default_rng(0).normal(size=(17, 9)).astype(np.float32)
        write_feature_file(tmp_path / "a.feat", FeatureMatrix(x, 0.02))
        a = load_feature_file(tmp_path / "a.feat")
        write_feature_file(tmp_path / "b.feat", a)
        assert (tmp_path / "a.feat").read_bytes() == (tmp_path / "b.feat").read_bytes()
        np.testing.assert_array_equal(a.frames, x.astype(np.float64))

    def test_truncated(self, tmp_path):
        p = tmp_path / "x.feat"
        write_feature_file(p, FeatureMatrix(np.ones((3, 2)), 0.02))
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(DataError, match="payload shorter than T·d"):
            load_feature_file(p)

    def test_malformed(self, tmp_path):
        p = tmp_path / "x.feat"
        p.write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(DataError, match="malformed header"):
            load_feature_file(p)
        p.write_bytes(b"FE")
        with pytest.raises(DataError, match="malformed header"):
            load_feature_file(p)

    def test_rejects_non_finite_and_empty(self, tmp_path):
        p = tmp_path / "x.feat"
        write_feature_file(p, FeatureMatrix(np.ones((2, 2)), 0.02))
        raw = bytearray(p.read_bytes())
        raw[-4:] = np.array([np.nan], dtype="<f4").tobytes()
        p.write_bytes(bytes(raw))
        with pytest.raises(DataError, match="non-finite"):
            load_feature_file(p)
        import struct
        p.write_bytes(struct.pack("<4sIQQd", b"FEAT", 1, 0, 2, 0.02))
        with pytest.raises(DataError, match="zero rows"):
            load_feature_file(p)

    def test_alignment_roundtrip(self, tmp_path):
        segs = [(0.0, 0.12, "h#"), (0.12, 0.2, "sh"), (0.2, 0.31, "iy")]
        write_alignment(tmp_path / "a.txt", segs)
        assert read_alignment(tmp_path / "a.txt") == segs
        (tmp_path / "b.txt").write_text("0.2\t0.1\tx\n")
        with pytest.raises(DataError):
            read_alignment(tmp_path / "b.txt")


class TestFrameRate:
    def test_duplicates_frames(self):
        m = upsample_to_period(FeatureMatrix([[1.0], [2.0]], 0.020), 0.010)
        np.testing.assert_array_equal(m.frames, [[1], [1], [2], [2]])
        assert m.frame_period == 0.010

    def test_identity(self):
        m = FeatureMatrix([[1.0, 2.0]], 0.010)
        np.testing.assert_array_equal(upsample_to_period(m, 0.010).frames, m.frames)

    def test_non_integer_ratio(self):
        with pytest.raises(DataError, match="integer multiple"):
            upsample_to_period(FeatureMatrix([[1.0]], 0.015), 0.010)

    @given(st.integers(1, 20), st.integers(1, 4), st.sampled_from([1, 2, 3, 4]))
    def test_decimation_recovers_input(self, t, d, r):
        x = np.arange(t * d, dtype=float).reshape(t, d)
        up = upsample_to_period(FeatureMatrix(x, 0.01 * r), 0.01)
        assert up.num_frames == r * t
        np.testing.assert_array_equal(up.frames[::r], x)

    def test_align_lengths(self, caplog):
        a = FeatureMatrix(np.ones((100, 2)), 0.01)
        b = FeatureMatrix(np.ones((98, 3)), 0.01)
        a2, b2 = align_lengths(a, b)
        assert a2.num_frames == b2.num_frames == 98
        same = align_lengths(a2, b2)
        assert same[0] is a2 and same[1] is b2
        with caplog.at_level(logging.WARNING):
            align_lengths(a, FeatureMatrix(np.ones((90, 1)), 0.01))
        assert "differ by 10 frames" in caplog.text
        caplog.clear()
        with caplog.at_level(logging.WARNING):
            align_lengths(a, b)
        assert caplog.text == ""
        with pytest.raises(DataError, match="period"):
            align_lengths(a, FeatureMatrix(np.ones((5, 1)), 0.02))


def test_feature_matrix_invariants():
    with pytest.raises(DataError):
        FeatureMatrix(np.ones((0, 3)), 0.01)
    with pytest.raises(DataError):
        FeatureMatrix([[np.inf]], 0.01)
    with pytest.raises(DataError):
        FeatureMatrix([[1.0]], 0.0)
