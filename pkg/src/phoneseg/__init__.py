"""Unsupervised phone segmentation.

Spectral-variation peak picking on log-Mel features, and segment-constrained
HMMs (duration-penalized or fixed segment count, optionally guided by Mel
boundaries) over precomputed self-supervised features.
"""
__version__ = "0.1.0"

from .evaluation import evaluate_corpus, match_boundaries, purity, r_value
from .features import (FeatureMatrix, NormalizationStats, apply_normalization, compute_log_mel,
                       fit_normalization, load_feature_file, upsample_to_period, write_feature_file)
from .hmm import (HmmConfig, HmmModel, SegmentationResult, brute_force_decode, decode,
                  decode_with_fixed_centroids, train_segmental_kmeans)
from .kmeans import KmeansModel, assign, fit_kmeans
from .svf import (BoundarySet, deviation_track, find_peaks, normalize_svf, spectral_variation)
from .viterbi import BACKEND

__all__ = [
    "BACKEND", "BoundarySet", "FeatureMatrix", "HmmConfig", "HmmModel", "KmeansModel",
    "NormalizationStats", "SegmentationResult", "apply_normalization", "assign",
    "brute_force_decode", "compute_log_mel", "decode", "decode_with_fixed_centroids",
    "deviation_track", "evaluate_corpus", "find_peaks", "fit_kmeans", "fit_normalization",
    "load_feature_file", "match_boundaries", "normalize_svf", "purity", "r_value",
    "spectral_variation", "train_segmental_kmeans", "upsample_to_period", "write_feature_file",
]
