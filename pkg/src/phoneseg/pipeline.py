"""End-to-end commands: manifests, run configuration and file-based stages.

Every command reads its inputs from files, writes its outputs under
``config.out_dir`` and records a small JSON run log (config hash, seed and
content hashes of the files it consumed).  Outputs carry no timestamps, so
rerunning a command with the same inputs reproduces them byte for byte.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import math
import sys
from dataclasses import dataclass, fields
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import ordered_map, resolve_workers
from .evaluation import (EvalReport, corpus_purity, evaluate_corpus, strip_edge_boundaries)
from .exceptions import ConfigError, DataError
from .features import (FeatureMatrix, NormalizationStats, align_lengths, apply_normalization,
                       compute_log_mel, fit_normalization, load_feature_file, read_alignment,
                       read_wav, upsample_to_period, write_feature_file)
from .hmm import (HmmConfig, HmmModel, decode, decode_with_fixed_centroids, load_model_file,
                  read_phmm, train_segmental_kmeans, write_kmeans_file, write_model_file)
from .kmeans import fit_kmeans
from .svf import (boundaries_to_times, deviation_track, detect_boundaries, normalize_svf,
                  spectral_variation, write_boundary_file, read_boundary_file)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["utt_id", "audio_path", "feature_path", "alignment_path", "split"]
SPLITS = ("train", "valid", "test")
MODES = ("peak", "hmm", "vq")
PROMINENCE_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))

# Per-dataset defaults for HuBERT features, keyed by (variant, boundary features on)
PROFILES = {
    "timit": {
        "epochs": 10,
        ("Nseg", False): {"L": 8.1},
        ("DP", False): {"lam": 1.9},
        ("Nseg", True): {"L": 8.1, "gamma": 1.2},
        ("DP", True): {"lam": 0.4, "gamma": 0.9},
    },
    "buckeye": {
        "epochs": 20,
        ("Nseg", False): {"L": 8.5},
        ("DP", False): {"lam": 2.2},
        ("Nseg", True): {"L": 8.1, "gamma": 1.0},
        ("DP", True): {"lam": 0.5, "gamma": 1.0},
    },
}


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRow:
    utt_id: str
    audio_path: str = ""
    feature_path: str = ""
    alignment_path: str = ""
    split: str = "train"


@dataclass
class Manifest:
    rows: list[ManifestRow]

    def __post_init__(self):
        seen = set()
        for r in self.rows:
            if r.utt_id in seen:
                raise DataError(f"duplicate utt_id {r.utt_id!r} in manifest")
            seen.add(r.utt_id)
            if r.split not in SPLITS:
                raise DataError(f"{r.utt_id}: unknown split {r.split!r}")

    def select(self, split: str) -> list[ManifestRow]:
        if split == "all":
            return list(self.rows)
        return [r for r in self.rows if r.split == split]


def read_manifest(path, check_paths: bool = True) -> Manifest:
    """Read the manifest CSV; relative paths resolve against its directory."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such manifest")
    base = path.resolve().parent
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or list(reader.fieldnames) != MANIFEST_COLUMNS:
            raise DataError(f"{path}: header must be {','.join(MANIFEST_COLUMNS)}")
        for rec in reader:
            resolved = {}
            for col in ("audio_path", "feature_path", "alignment_path"):
                v = (rec[col] or "").strip()
                if v:
                    p = Path(v)
                    v = str(p if p.is_absolute() else base / p)
                    if check_paths and not Path(v).exists():
                        raise DataError(f"{rec['utt_id']}: {col} {v} does not exist")
                resolved[col] = v
            rows.append(ManifestRow(rec["utt_id"], split=(rec["split"] or "train").strip(), **resolved))
    return Manifest(rows)


def write_manifest(path, manifest: Manifest):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in manifest.rows:
            w.writerow([r.utt_id, r.audio_path, r.feature_path, r.alignment_path, r.split])


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    out_dir: str = "out"
    seed: int = 0
    workers: int = 1
    # features
    feature_source: str = "ssl"
    mel_dir: str = ""
    frame_period: float = 0.010
    upsample: bool = True
    # spectral variation / peaks
    span: str = "wide"
    prominence: float = 0.1
    sweep_prominence: bool = False
    emit_svf: bool = False
    # decoding
    mode: str = "hmm"
    decode_split: str = "all"
    profile: str = ""
    bf: bool = False
    K: int = 50
    variant: str = "DP"
    lam: float = 1.9
    gamma: float = 0.0
    L: float = 8.1
    epochs: int = 10
    bf_in_training: bool = True
    # k-means
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-4
    kmeans_max_frames: int = 2_000_000
    # evaluation
    protocol: str = "strict"
    tolerance: float = 0.020

    def validate(self):
        if self.feature_source not in ("mel", "ssl"):
            raise ConfigError(f"feature_source must be mel or ssl, got {self.feature_source!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.span not in ("adjacent", "wide"):
            raise ConfigError(f"span must be adjacent or wide, got {self.span!r}")
        if self.protocol not in ("strict", "lenient"):
            raise ConfigError(f"protocol must be strict or lenient, got {self.protocol!r}")
        if self.decode_split not in SPLITS + ("all",):
            raise ConfigError(f"decode_split must be one of {SPLITS + ('all',)}")
        if self.profile and self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; known: {sorted(PROFILES)}")
        if self.prominence < 0 or self.tolerance < 0:
            raise ConfigError("prominence and tolerance must be >= 0")
        if self.bf and self.gamma <= 0:
            raise ConfigError("bf = true needs gamma > 0")
        if not self.bf and self.gamma > 0:
            raise ConfigError("gamma > 0 needs bf = true")
        if self.bf and not self.mel_dir:
            raise ConfigError("boundary features need Mel features: set mel_dir")
        if self.feature_source == "mel" and not self.mel_dir:
            raise ConfigError("feature_source = mel needs mel_dir")
        self.hmm_config()
        return self

    def hmm_config(self) -> HmmConfig:
        return HmmConfig(K=self.K, variant=self.variant, lam=self.lam, gamma=self.gamma if self.bf else 0.0,
                         L=self.L, epochs=self.epochs, seed=self.seed, bf_in_training=self.bf_in_training)

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


CONFIG_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, value):
    ftype = CONFIG_FIELDS[name].type
    if ftype == "bool":
        if isinstance(value, bool):
            return value
        s = str(value).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    try:
        if ftype == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if ftype == "float":
            return float(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}: expected {ftype}, got {value!r}") from e
    return str(value)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults < dataset profile < config file < explicit overrides."""
    values: dict = {}
    if path:
        try:
            with open(path, "rb") as f:
                values = tomllib.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"{path}: no such config file") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(values) - set(CONFIG_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}; valid keys: {sorted(CONFIG_FIELDS)}")
    values = {k: _coerce(k, v) for k, v in values.items()}

    profile = values.get("profile", "")
    base = {}
    if profile:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; known: {sorted(PROFILES)}")
        prof = PROFILES[profile]
        base["epochs"] = prof["epochs"]
        key = (values.get("variant", RunConfig.variant), bool(values.get("bf", False)))
        base.update(prof[key])
    base.update(values)
    return RunConfig(**base).validate()


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_log(config: RunConfig, command: str, inputs, extra: dict | None = None):
    out = Path(config.out_dir) / "logs"
    out.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "version": __version__,
        "config_hash": config.digest(),
        "seed": config.seed,
        "config": dataclasses.asdict(config),
        "inputs": {str(p): _file_digest(p) for p in sorted({str(p) for p in inputs}) if Path(p).exists()},
    }
    if extra:
        record.update(extra)
    (out / f"{command}.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _rows(manifest: Manifest, split: str) -> list[ManifestRow]:
    rows = manifest.select(split)
    if not rows:
        raise DataError(f"no utterances in split {split!r}")
    return rows


def mel_path(config: RunConfig, utt_id: str) -> Path:
    return Path(config.mel_dir) / f"{utt_id}.feat"


def load_mel(config: RunConfig, row: ManifestRow) -> FeatureMatrix:
    return load_feature_file(mel_path(config, row.utt_id), "mel")


def load_model_features(config: RunConfig, row: ManifestRow) -> FeatureMatrix:
    """Frames the HMM/VQ decoder sees: Mel, or SSL upsampled to ``frame_period``."""
    if config.feature_source == "mel":
        return load_mel(config, row)
    if not row.feature_path:
        raise DataError(f"{row.utt_id}: no feature_path in manifest")
    m = load_feature_file(row.feature_path, "ssl")
    if config.upsample and m.frame_period > config.frame_period * (1 + 1e-9):
        m = upsample_to_period(m, config.frame_period)
    return m


def load_peak_features(config: RunConfig, row: ManifestRow) -> FeatureMatrix:
    if config.feature_source == "mel":
        return load_mel(config, row)
    if not row.feature_path:
        raise DataError(f"{row.utt_id}: no feature_path in manifest")
    return load_feature_file(row.feature_path, "ssl")


def prepare_utterance(config: RunConfig, row: ManifestRow, with_deviation: bool):
    """Load decoder features and, if requested, the Mel boundary deviation track."""
    x = load_model_features(config, row)
    if not with_deviation:
        return x, None
    mel = load_mel(config, row)
    if x.source_tag == "mel":
        mel_aligned = mel
    else:
        x, mel_aligned = align_lengths(x, mel)
    dev = deviation_track(detect_boundaries(mel_aligned, config.prominence, config.span))
    return x, dev[:x.num_frames]


def _inputs_for(rows, config: RunConfig, audio=False, features=False, mel=False, alignments=False):
    paths = []
    for r in rows:
        if audio and r.audio_path:
            paths.append(r.audio_path)
        if features and r.feature_path and config.feature_source == "ssl":
            paths.append(r.feature_path)
        if mel and config.mel_dir:
            paths.append(mel_path(config, r.utt_id))
        if alignments and r.alignment_path:
            paths.append(r.alignment_path)
    return paths


def reference_and_hypothesis(rows, hyps: dict[str, list[float]]):
    """Edge-stripped boundary times for rows that have an alignment."""
    refs, out_h = {}, {}
    for r in rows:
        if not r.alignment_path:
            continue
        segs = read_alignment(r.alignment_path)
        if not segs:
            continue
        refs[r.utt_id] = strip_edge_boundaries(segs)
        out_h[r.utt_id] = strip_edge_boundaries(hyps.get(r.utt_id, []), segs[0][0], segs[-1][1])
    return refs, out_h


def evaluate_rows(config: RunConfig, rows, hyps) -> EvalReport | None:
    refs, h = reference_and_hypothesis(rows, hyps)
    if not refs:
        return None
    return evaluate_corpus(refs, h, config.tolerance, config.protocol)


def _write_report(out: Path, name: str, report: EvalReport):
    (out / f"{name}.csv").write_text(report.to_csv())
    (out / f"{name}.txt").write_text(report.summary() + "\n")


def write_assignments(path, assignments: dict[str, np.ndarray]):
    with open(path, "w", encoding="utf-8") as f:
        for utt in sorted(assignments):
            f.write(utt + "\t" + " ".join(str(int(k)) for k in assignments[utt]) + "\n")


def read_assignments(path) -> dict[str, np.ndarray]:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise DataError(f"{path}: no such file") from e
    for line in text.splitlines():
        if line.strip():
            utt, _, rest = line.partition("\t")
            out[utt] = np.array([int(v) for v in rest.split()], dtype=np.int64)
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_split(manifest_path, out_path, config: RunConfig, valid_fraction: float = 0.1) -> Manifest:
    """Move a seeded random ``valid_fraction`` of train utterances to ``valid``."""
    if not 0 <= valid_fraction < 1:
        raise ConfigError("valid_fraction must be in [0, 1)")
    manifest = read_manifest(manifest_path)
    train_ids = sorted(r.utt_id for r in manifest.rows if r.split == "train")
    n_valid = int(math.floor(valid_fraction * len(train_ids) + 0.5))
    rng = np.random.default_rng(config.seed)
    valid = {train_ids[i] for i in rng.permutation(len(train_ids))[:n_valid]}
    rows = [dataclasses.replace(r, split="valid") if r.utt_id in valid else r for r in manifest.rows]
    out = Manifest(rows)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_manifest(out_path, out)
    logger.info("split: %d of %d train utterances moved to valid", n_valid, len(train_ids))
    return out


def _mel_from_wav(row: ManifestRow) -> FeatureMatrix:
    samples, rate = read_wav(row.audio_path)
    return compute_log_mel(samples, rate)


def cmd_extract_mel(manifest_path, config: RunConfig) -> NormalizationStats:
    """Log-Mel features for every utterance, normalized with train-split statistics."""
    manifest = read_manifest(manifest_path)
    rows = [r for r in manifest.rows if r.audio_path]
    missing = [r.utt_id for r in manifest.rows if not r.audio_path]
    if missing:
        raise DataError(f"no audio_path for {missing[:5]}")
    if not any(r.split == "train" for r in rows):
        raise DataError("cannot fit normalization: train split is empty")
    mels = ordered_map(_mel_from_wav, rows, resolve_workers(config.workers))
    stats = fit_normalization([m for r, m in zip(rows, mels) if r.split == "train"])
    out = Path(config.mel_dir or Path(config.out_dir) / "mel")
    out.mkdir(parents=True, exist_ok=True)
    for r, m in zip(rows, mels):
        write_feature_file(out / f"{r.utt_id}.feat", apply_normalization(m, stats))
    (out / "stats.json").write_text(json.dumps(stats.to_dict(), indent=1) + "\n")
    write_run_log(config, "extract-mel", [manifest_path] + _inputs_for(rows, config, audio=True))
    return stats


def cmd_import_features(manifest_path, config: RunConfig, period: float = 0.020) -> Manifest:
    """Convert ``.npy`` feature arrays to FEAT files and write an updated manifest."""
    manifest = read_manifest(manifest_path)
    out = Path(config.out_dir) / "features"
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for r in manifest.rows:
        if not r.feature_path:
            rows.append(r)
            continue
        src = Path(r.feature_path)
        if src.suffix == ".npy":
            arr = np.load(src, allow_pickle=False)
            m = FeatureMatrix(arr, period, "ssl")
        else:
            m = load_feature_file(src)
        dst = out / f"{r.utt_id}.feat"
        write_feature_file(dst, m)
        rows.append(dataclasses.replace(r, feature_path=str(dst.resolve())))
    new = Manifest(rows)
    write_manifest(out.parent / "manifest.csv", new)
    write_run_log(config, "import-features", [manifest_path] + [r.feature_path for r in manifest.rows if r.feature_path])
    return new


def _peak_curve(config: RunConfig, row: ManifestRow):
    m = load_peak_features(config, row)
    return m.frame_period, normalize_svf(spectral_variation(m, config.span))


def _peaks_at(curves, rows, threshold):
    from .svf import find_peaks
    return {r.utt_id: boundaries_to_times(find_peaks(c, threshold), period)
            for r, (period, c) in zip(rows, curves)}


def cmd_peaks(manifest_path, config: RunConfig) -> dict:
    """SVF peak picking, optionally with the prominence tuned on the valid split."""
    manifest = read_manifest(manifest_path)
    out = Path(config.out_dir) / "peaks"
    out.mkdir(parents=True, exist_ok=True)
    workers = resolve_workers(config.workers)
    threshold = config.prominence
    result: dict = {}
    used_rows = []

    if config.sweep_prominence:
        valid = _rows(manifest, "valid")
        used_rows += valid
        curves = ordered_map(partial(_peak_curve, config), valid, workers)
        table = []
        for th in PROMINENCE_GRID:
            rep = evaluate_rows(config, valid, _peaks_at(curves, valid, th))
            if rep is None:
                raise DataError("prominence sweep needs alignments on the valid split")
            table.append((th, rep))
        best_th, best = max(table, key=lambda row: (row[1].r_value, -row[0]))
        threshold = best_th
        with open(out / "sweep.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["prominence", "precision", "recall", "f1", "r_value"])
            for th, rep in table:
                w.writerow([th, repr(rep.precision), repr(rep.recall), repr(rep.f1), repr(rep.r_value)])
        logger.info("selected prominence %.2f (valid R-value %.4f)", best_th, best.r_value)
        result["selected_prominence"] = best_th
        result["sweep"] = table
        target_split = "test" if config.decode_split == "all" else config.decode_split
    else:
        target_split = config.decode_split

    rows = _rows(manifest, target_split)
    used_rows += rows
    curves = ordered_map(partial(_peak_curve, config), rows, workers)
    hyps = _peaks_at(curves, rows, threshold)
    write_boundary_file(out / "boundaries.txt", hyps)
    if config.emit_svf:
        svf_dir = out / "svf"
        svf_dir.mkdir(exist_ok=True)
        for r, (period, c) in zip(rows, curves):
            peaks = set(np.rint(np.array(hyps[r.utt_id]) / period).astype(int).tolist())
            with open(svf_dir / f"{r.utt_id}.csv", "w", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(["frame", "time", "svf", "boundary"])
                for t, v in enumerate(c.values):
                    w.writerow([t, f"{t * period:.3f}", repr(float(v)), int(t in peaks)])
    report = evaluate_rows(config, rows, hyps)
    if report is not None:
        _write_report(out, "report", report)
    else:
        logger.info("no alignments found; evaluation skipped")
    write_run_log(config, "peaks", [manifest_path] + _inputs_for(used_rows, config, features=True, mel=True, alignments=True),
                  {"prominence": threshold})
    result.update(boundaries=hyps, report=report, prominence=threshold)
    return result


def _frames_of(config, row):
    return load_model_features(config, row).frames


def cmd_kmeans(manifest_path, config: RunConfig):
    """Fit offline k-means on train-split frames and save it as a PHMM file (variant 255)."""
    manifest = read_manifest(manifest_path)
    rows = _rows(manifest, "train")
    frames = np.concatenate(ordered_map(partial(_frames_of, config), rows, resolve_workers(config.workers)))
    model = fit_kmeans(frames, config.K, config.seed, config.kmeans_max_iters, config.kmeans_tol,
                       config.kmeans_max_frames)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_kmeans_file(out / "kmeans.phmm", model)
    with open(out / "kmeans_log.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["iteration", "inertia"])
        for i, v in enumerate(model.history):
            w.writerow([i, repr(v)])
    write_run_log(config, "kmeans", [manifest_path] + _inputs_for(rows, config, features=True, mel=True))
    return model


def _prepare(config, with_dev, row):
    return prepare_utterance(config, row, with_dev)


def _load_split(config: RunConfig, rows, with_deviation: bool):
    items = ordered_map(partial(_prepare, config, with_deviation), rows, resolve_workers(config.workers))
    xs = [x for x, _ in items]
    devs = [d for _, d in items] if with_deviation else None
    return xs, devs


def _decode_one(item, model, centroids, hcfg):
    x, dev = item
    if model is not None:
        return decode(x, model, dev)
    return decode_with_fixed_centroids(x, centroids, hcfg, dev)


def decode_rows(config: RunConfig, rows, model: HmmModel | None = None, centroids=None, hcfg=None):
    hcfg = model.config if model is not None else hcfg
    xs, devs = _load_split(config, rows, hcfg.gamma > 0)
    items = list(zip(xs, devs if devs is not None else [None] * len(xs)))
    fn = partial(_decode_one, model=model, centroids=centroids, hcfg=hcfg)
    results = ordered_map(fn, items, resolve_workers(config.workers))
    return {r.utt_id: (res, x.frame_period) for r, res, x in zip(rows, results, xs)}


def _write_segmentation(out: Path, prefix: str, decoded: dict):
    bounds = {u: boundaries_to_times(res.boundaries, period) for u, (res, period) in decoded.items()}
    write_boundary_file(out / f"{prefix}boundaries.txt", bounds)
    write_assignments(out / f"{prefix}assignments.txt", {u: res.assignments for u, (res, _) in decoded.items()})
    return bounds


def cmd_train(manifest_path, config: RunConfig) -> HmmModel:
    """Segmental k-means on the train split; writes the model and a per-epoch log."""
    hcfg = config.hmm_config()
    manifest = read_manifest(manifest_path)
    rows = _rows(manifest, "train")
    xs, devs = _load_split(config, rows, hcfg.gamma > 0)
    model = train_segmental_kmeans(xs, hcfg, devs, workers=resolve_workers(config.workers))
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_model_file(out / "model.phmm", model)
    with open(out / "train_log.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "score", "num_segments", "reseeded"])
        for e in model.history:
            w.writerow([e.epoch, repr(e.score), e.num_segments, " ".join(map(str, e.reseeded))])
    # decode the train split with the model exactly as saved (float32 centroids)
    saved = load_model_file(out / "model.phmm", epochs=hcfg.epochs, seed=hcfg.seed,
                            bf_in_training=hcfg.bf_in_training)
    results = ordered_map(partial(_decode_one, model=saved, centroids=None, hcfg=None),
                          list(zip(xs, devs if devs is not None else [None] * len(xs))),
                          resolve_workers(config.workers))
    decoded = {r.utt_id: (res, x.frame_period) for r, res, x in zip(rows, results, xs)}
    _write_segmentation(out, "train_", decoded)
    write_run_log(config, "train", [manifest_path] + _inputs_for(rows, config, features=True, mel=hcfg.gamma > 0))
    return model


def load_decoder(model_path, config: RunConfig):
    """Return ``(model, centroids, hmm_config)`` for an HMM or a k-means file."""
    variant, centroids, header = read_phmm(model_path)
    if variant == "kmeans":
        return None, centroids, dataclasses.replace(config.hmm_config(), K=centroids.shape[0])
    model = load_model_file(model_path)
    return model, None, model.config


def cmd_decode(manifest_path, model_path, config: RunConfig) -> dict:
    """Segment ``decode_split`` with a trained HMM or with k-means centroids (VQ)."""
    manifest = read_manifest(manifest_path)
    rows = _rows(manifest, config.decode_split)
    model, centroids, hcfg = load_decoder(model_path, config)
    if model is None and config.mode == "hmm":
        logger.info("%s holds k-means centroids; decoding in vq mode", model_path)
    decoded = decode_rows(config, rows, model, centroids, hcfg)
    out = Path(config.out_dir) / "decode"
    out.mkdir(parents=True, exist_ok=True)
    bounds = _write_segmentation(out, "", decoded)
    report = evaluate_rows(config, rows, bounds)
    pur = None
    if report is None:
        logger.info("no alignments found; evaluation skipped")
    else:
        _write_report(out, "report", report)
        pur = _purity_rows(rows, {u: res.assignments for u, (res, _) in decoded.items()},
                           next(iter(decoded.values()))[1])
        (out / "purity.csv").write_text(pur.to_csv())
        (out / "contingency.csv").write_text(pur.contingency_csv())
        (out / "purity.txt").write_text(pur.summary() + "\n")
    write_run_log(config, "decode", [manifest_path, model_path]
                  + _inputs_for(rows, config, features=True, mel=hcfg.gamma > 0, alignments=True))
    return {"segmentations": decoded, "boundaries": bounds, "report": report, "purity": pur}


def _purity_rows(rows, assignments, frame_period):
    items = [(assignments[r.utt_id], read_alignment(r.alignment_path))
             for r in rows if r.alignment_path and r.utt_id in assignments]
    return corpus_purity(items, frame_period)


SWEEP_PARAMS = {
    "peak": ("prominence", "span"),
    "hmm": ("K", "variant", "lam", "gamma", "L", "epochs", "seed"),
    "vq": ("variant", "lam", "gamma", "L"),
}


def parse_grid(spec: str, mode: str) -> dict[str, list]:
    """Parse ``"lam=0,1,2;gamma=0.5,1"`` into ordered value lists."""
    grid: dict[str, list] = {}
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        name, sep, values = part.partition("=")
        name = name.strip()
        if not sep or not values.strip():
            raise ConfigError(f"bad grid entry {part!r}; expected name=v1,v2,...")
        if name not in SWEEP_PARAMS[mode]:
            raise ConfigError(f"invalid sweep parameter {name!r} for mode {mode}; "
                              f"valid names: {', '.join(SWEEP_PARAMS[mode])}")
        grid[name] = [_coerce(name, v.strip()) for v in values.split(",") if v.strip()]
    if not grid or any(not v for v in grid.values()):
        raise ConfigError("empty sweep grid")
    return grid


def cmd_sweep(manifest_path, config: RunConfig, grid_spec: str, model_path=None) -> list[dict]:
    """Evaluate every grid point on the valid split; write a CSV and the best row.

    ``peak`` sweeps SVF settings, ``hmm`` trains on train and decodes valid,
    ``vq`` decodes valid with the k-means centroids in ``model_path``.
    """
    grid = parse_grid(grid_spec, config.mode)
    manifest = read_manifest(manifest_path)
    valid = _rows(manifest, "valid")
    if config.mode == "vq" and model_path is None:
        raise ConfigError("vq sweep needs a k-means file (--model)")
    names = list(grid)
    table = []
    for values in itertools.product(*(grid[n] for n in names)):
        point = dict(zip(names, values))
        if "gamma" in point:
            point_cfg = dataclasses.replace(config, bf=point["gamma"] > 0, **point)
        else:
            point_cfg = dataclasses.replace(config, **point)
        point_cfg.validate()
        if config.mode == "peak":
            curves = [_peak_curve(point_cfg, r) for r in valid]
            hyps = _peaks_at(curves, valid, point_cfg.prominence)
            n_seg = sum(len(h) + 1 for h in hyps.values())
        else:
            if config.mode == "hmm":
                hcfg = point_cfg.hmm_config()
                train_rows = _rows(manifest, "train")
                xs, devs = _load_split(point_cfg, train_rows, hcfg.gamma > 0)
                model = train_segmental_kmeans(xs, hcfg, devs, workers=resolve_workers(config.workers))
                decoded = decode_rows(point_cfg, valid, model=model)
            else:
                _, centroids, hcfg = load_decoder(model_path, point_cfg)
                decoded = decode_rows(point_cfg, valid, centroids=centroids, hcfg=hcfg)
            hyps = {u: boundaries_to_times(res.boundaries, p) for u, (res, p) in decoded.items()}
            n_seg = sum(res.num_segments for res, _ in decoded.values())
        rep = evaluate_rows(point_cfg, valid, hyps)
        if rep is None:
            raise DataError("sweep needs alignments on the valid split")
        table.append({**point, "precision": rep.precision, "recall": rep.recall, "f1": rep.f1,
                      "r_value": rep.r_value, "num_segments": n_seg})
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = names + ["precision", "recall", "f1", "r_value", "num_segments"]
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(cols)
        for row in table:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    best = max(table, key=lambda r: r["r_value"])
    (out / "sweep_best.json").write_text(json.dumps(best, indent=2, sort_keys=True) + "\n")
    logger.info("best grid point: %s", {n: best[n] for n in names})
    write_run_log(config, "sweep", [manifest_path] + ([model_path] if model_path else []), {"grid": grid_spec})
    return table


def cmd_evaluate(manifest_path, boundaries_path, config: RunConfig) -> EvalReport:
    manifest = read_manifest(manifest_path)
    hyps = read_boundary_file(boundaries_path)
    rows = [r for r in manifest.rows if r.utt_id in hyps]
    report = evaluate_rows(config, rows, hyps)
    if report is None:
        raise DataError("no alignments for the utterances in the boundary file")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_report(out, "evaluation", report)
    return report


def cmd_purity(manifest_path, assignments_path, config: RunConfig):
    manifest = read_manifest(manifest_path)
    assignments = read_assignments(assignments_path)
    rows = [r for r in manifest.rows if r.utt_id in assignments]
    report = _purity_rows(rows, assignments, config.frame_period)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "purity.csv").write_text(report.to_csv())
    (out / "contingency.csv").write_text(report.contingency_csv())
    return report
