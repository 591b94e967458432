"""Audio frontend and feature containers.

Log-Mel spectrograms are computed with a 400-sample Hann window, a 160-sample
hop and a 512-point FFT at 16 kHz, with no centering, so frame ``t`` covers
samples ``[160 t, 160 t + 400)``.  The 40 triangular filters use the HTK mel
scale over 0-8000 Hz.

Self-supervised features are produced elsewhere and ingested through the
binary ``FEAT`` container (see :func:`write_feature_file`).
"""
from __future__ import annotations

import logging
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
WIN_LENGTH = 400
HOP_LENGTH = 160
N_FFT = 512
N_MELS = 40
MEL_PERIOD = HOP_LENGTH / SAMPLE_RATE
SSL_PERIOD = 0.020
LOG_FLOOR = 1e-10
STD_FLOOR = 1e-8
# align_lengths warns when two streams differ by more than this many frames
LENGTH_MISMATCH_WARN = 4

FEAT_MAGIC = b"FEAT"
FEAT_VERSION = 1
_FEAT_HEADER = struct.Struct("<4sIQQd")


@dataclass(frozen=True)
class FeatureMatrix:
    """A ``T x d`` sequence of frame vectors.

    Attributes
    ----------
    frames : ndarray of shape (T, d)
    frame_period : float
        Seconds per frame.
    source_tag : str
        ``"mel"`` or ``"ssl"``.
    """

    frames: np.ndarray
    frame_period: float
    source_tag: str = "ssl"

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise DataError(f"feature matrix must be T x d with T, d >= 1, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise DataError("feature matrix contains non-finite values")
        if not self.frame_period > 0:
            raise DataError(f"frame_period must be positive, got {self.frame_period}")
        if self.source_tag not in ("mel", "ssl"):
            raise DataError(f"unknown source_tag {self.source_tag!r}")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        std = np.asarray(self.std, dtype=np.float64).ravel()
        if mean.shape != std.shape:
            raise DataError("mean and std must have the same length")
        if np.any(std <= 0):
            raise DataError("std components must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(np.array(d["mean"]), np.array(d["std"]))


@dataclass
class Utterance:
    """Corpus handle: an id, where its data lives and an optional reference."""

    id: str
    audio_path: str | None = None
    feature_path: str | None = None
    reference_alignment: list[tuple[float, float, str]] | None = field(default=None)

    def __post_init__(self):
        if self.reference_alignment is not None:
            check_alignment(self.reference_alignment)


# ---------------------------------------------------------------------------
# Log-Mel frontend
# ---------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sample_rate=SAMPLE_RATE, fmin=0.0, fmax=None):
    """Triangular HTK-mel filters, shape ``(n_mels, n_fft // 2 + 1)``.

    Filter ``i`` rises linearly from mel point ``i`` to ``i + 1`` and falls to
    ``i + 2``, evaluated at the exact FFT bin frequencies (no bin snapping).
    """
    if fmax is None:
        fmax = sample_rate / 2.0
    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = hz_points[:-2, None], hz_points[1:-1, None], hz_points[2:, None]
    rising = (bin_freqs[None, :] - lower) / (center - lower)
    falling = (upper - bin_freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_center_frequencies(n_mels=N_MELS, sample_rate=SAMPLE_RATE):
    """Center frequency in Hz of each filter of :func:`mel_filterbank`."""
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return mel_to_hz(mel_points[1:-1])


def compute_log_mel(samples, sample_rate=SAMPLE_RATE) -> FeatureMatrix:
    """Natural-log Mel filterbank energies of a mono 16 kHz signal.

    Returns a ``T x 40`` :class:`FeatureMatrix` with
    ``T = 1 + (len(samples) - 400) // 160`` and a 10 ms frame period.
    """
    if sample_rate != SAMPLE_RATE:
        raise DataError(f"expected {SAMPLE_RATE} Hz audio, got {sample_rate} Hz")
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise DataError("audio must be mono (1-D)")
    if samples.size == 0:
        raise DataError("empty audio")
    if samples.size < WIN_LENGTH:
        raise DataError(f"audio has {samples.size} samples, shorter than one {WIN_LENGTH}-sample window")

    num_frames = 1 + (samples.size - WIN_LENGTH) // HOP_LENGTH
    idx = np.arange(WIN_LENGTH)[None, :] + HOP_LENGTH * np.arange(num_frames)[:, None]
    # periodic=False Hann, matching the common np.hanning convention
    frames = samples[idx] * np.hanning(WIN_LENGTH)[None, :]
    power = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    energies = power @ mel_filterbank().T
    return FeatureMatrix(np.log(np.maximum(energies, LOG_FLOOR)), MEL_PERIOD, "mel")


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM mono WAV file as floats in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise DataError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise DataError(f"{path}: expected 16-bit PCM")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as e:
        raise DataError(f"{path}: unreadable WAV ({e})") from e
    except FileNotFoundError as e:
        raise DataError(f"{path}: no such file") from e
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, rate


def write_wav(path, samples, sample_rate=SAMPLE_RATE):
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def fit_normalization(corpus) -> NormalizationStats:
    """Global per-dimension mean and population std over every frame."""
    corpus = list(corpus)
    if not corpus:
        raise DataError("cannot fit normalization on an empty corpus")
    d = corpus[0].dim
    count = 0
    total = np.zeros(d)
    lo = np.full(d, np.inf)
    hi = np.full(d, -np.inf)
    for m in corpus:
        if m.dim != d:
            raise DataError(f"dimension mismatch: {m.dim} != {d}")
        count += m.num_frames
        total += m.frames.sum(axis=0)
        lo = np.minimum(lo, m.frames.min(axis=0))
        hi = np.maximum(hi, m.frames.max(axis=0))
    mean = total / count
    # constant dimensions get an exact mean so they normalize to exact zeros
    mean = np.where(lo == hi, lo, mean)
    # second pass around the mean avoids cancellation in sum-of-squares
    sq = np.zeros(d)
    for m in corpus:
        sq += ((m.frames - mean) ** 2).sum(axis=0)
    std = np.maximum(np.sqrt(sq / count), STD_FLOOR)
    return NormalizationStats(mean, std)


def _check_stats_dim(m: FeatureMatrix, stats: NormalizationStats):
    if m.dim != stats.mean.size:
        raise DataError(f"dimension mismatch: features have d={m.dim}, stats have d={stats.mean.size}")


def apply_normalization(m: FeatureMatrix, stats: NormalizationStats) -> FeatureMatrix:
    _check_stats_dim(m, stats)
    return FeatureMatrix((m.frames - stats.mean) / stats.std, m.frame_period, m.source_tag)


def invert_normalization(m: FeatureMatrix, stats: NormalizationStats) -> FeatureMatrix:
    _check_stats_dim(m, stats)
    return FeatureMatrix(m.frames * stats.std + stats.mean, m.frame_period, m.source_tag)


# ---------------------------------------------------------------------------
# Frame-rate handling
# ---------------------------------------------------------------------------

def _integer_ratio(num: float, den: float) -> int:
    ratio = num / den
    r = int(round(ratio))
    if r < 1 or abs(ratio - r) > 1e-6:
        raise DataError(f"frame period {num} is not an integer multiple of {den}")
    return r


def upsample_to_period(m: FeatureMatrix, target_period: float) -> FeatureMatrix:
    """Repeat every frame ``r = m.frame_period / target_period`` times."""
    r = _integer_ratio(m.frame_period, target_period)
    return FeatureMatrix(np.repeat(m.frames, r, axis=0), target_period, m.source_tag)


def align_lengths(a: FeatureMatrix, b: FeatureMatrix) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Truncate two streams at the same frame rate to their common length."""
    if abs(a.frame_period - b.frame_period) > 1e-12:
        raise DataError(f"frame period mismatch: {a.frame_period} vs {b.frame_period}")
    n = min(a.num_frames, b.num_frames)
    if abs(a.num_frames - b.num_frames) > LENGTH_MISMATCH_WARN:
        logger.warning("stream lengths differ by %d frames (%d vs %d); truncating to %d",
                       abs(a.num_frames - b.num_frames), a.num_frames, b.num_frames, n)
    if a.num_frames != n:
        a = FeatureMatrix(a.frames[:n], a.frame_period, a.source_tag)
    if b.num_frames != n:
        b = FeatureMatrix(b.frames[:n], b.frame_period, b.source_tag)
    return a, b


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def write_feature_file(path, m: FeatureMatrix):
    """Write ``m`` as a little-endian FEAT container (payload is float32)."""
    t, d = m.frames.shape
    with open(path, "wb") as f:
        f.write(_FEAT_HEADER.pack(FEAT_MAGIC, FEAT_VERSION, t, d, float(m.frame_period)))
        f.write(np.ascontiguousarray(m.frames, dtype="<f4").tobytes())


def load_feature_file(path, source_tag="ssl") -> FeatureMatrix:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError as e:
        raise DataError(f"{path}: no such file") from e
    if len(data) < _FEAT_HEADER.size:
        raise DataError(f"{path}: malformed header (file too short)")
    magic, version, t, d, period = _FEAT_HEADER.unpack_from(data)
    if magic != FEAT_MAGIC:
        raise DataError(f"{path}: malformed header (bad magic {magic!r})")
    if version != FEAT_VERSION:
        raise DataError(f"{path}: unsupported FEAT version {version}")
    if t == 0:
        raise DataError(f"{path}: zero rows")
    if d == 0:
        raise DataError(f"{path}: zero columns")
    payload = data[_FEAT_HEADER.size:]
    if len(payload) < 4 * t * d:
        raise DataError(f"{path}: payload shorter than T·d ({len(payload) // 4} < {t * d} values)")
    frames = np.frombuffer(payload, dtype="<f4", count=t * d).reshape(t, d)
    if not np.all(np.isfinite(frames)):
        raise DataError(f"{path}: non-finite values in payload")
    return FeatureMatrix(frames.astype(np.float64), period, source_tag)


def check_alignment(segments):
    prev_end = None
    for start, end, _ in segments:
        if not start < end:
            raise DataError(f"alignment segment has start >= end: ({start}, {end})")
        if prev_end is not None and start < prev_end - 1e-9:
            raise DataError("alignment segments overlap or are unsorted")
        prev_end = end


def read_alignment(path) -> list[tuple[float, float, str]]:
    """Parse ``start<TAB>end<TAB>label`` lines (seconds)."""
    segments = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as e:
        raise DataError(f"{path}: no such file") from e
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected start<TAB>end<TAB>label")
        try:
            segments.append((float(parts[0]), float(parts[1]), parts[2]))
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: {e}") from e
    check_alignment(segments)
    return segments


def write_alignment(path, segments):
    check_alignment(segments)
    with open(path, "w", encoding="utf-8") as f:
        for start, end, label in segments:
            f.write(f"{start:g}\t{end:g}\t{label}\n")
