"""Embedding files, dataset manifests, splits, and the synthetic corpus.

On-disk layout of a task:

    <root>/manifest.tsv          line-oriented manifest (documented below)
    <root>/embeddings/<id>.semb  one binary embedding bag per slide

Embedding binary layout (all integers little-endian):

    bytes 0..7    magic b"SLIDEEMB"
    byte  8       version (1)
    byte  9       dtype code: 4 = float32, 8 = float64
    bytes 10..13  u32 n (patches)
    bytes 14..17  u32 d (feature dim)
    bytes 18..    n*d*dtype_size payload, row-major

Manifest text layout: a `#slidekit-manifest v1` first line, `#task`,
`#dim`, and `#classes` metadata lines, one column-header line, then one
tab-separated record per slide (id, label, cohort, split, relative path),
sorted by slide id. Text is UTF-8; fields may not contain tabs.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aggregate import SlideBag
from .errors import ConfigError, FormatError, ManifestError, ShapeError
from .rngs import make_rng

EMBEDDING_MAGIC = b"SLIDEEMB"
EMBEDDING_VERSION = 1
_DTYPE_CODES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}
_HEADER_LEN = 18

MANIFEST_HEADER = "#slidekit-manifest v1"
_COLUMNS = ("slide_id", "label", "cohort", "split", "path")
SPLITS = ("train", "test")

# machine-readable manifest validation codes
BAD_HEADER = "bad-header"
BAD_RECORD = "bad-record"
DUPLICATE_ID = "duplicate-id"
UNKNOWN_LABEL = "unknown-label"
BAD_SPLIT = "bad-split"
MISSING_FILE = "missing-file"
DIM_MISMATCH = "dim-mismatch"


# -- embedding binary -------------------------------------------------------

def write_embedding(path: str | Path, features: np.ndarray, *, dtype: str = "f64") -> None:
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
        raise ShapeError(f"embedding payload must be (n>=1, d>=1), got {features.shape}")
    if not np.isfinite(features).all():
        raise ShapeError("embedding payload contains non-finite values")
    if dtype == "f64":
        code, np_dtype = 8, _DTYPE_CODES[8]
    elif dtype == "f32":
        code, np_dtype = 4, _DTYPE_CODES[4]
    else:
        raise ConfigError(f"dtype must be 'f32' or 'f64', got {dtype!r}")
    n, d = features.shape
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<BBII", EMBEDDING_VERSION, code, n, d))
        fh.write(np.ascontiguousarray(features, dtype=np_dtype).tobytes())


def read_embedding(path: str | Path) -> np.ndarray:
    """Load one embedding bag as float64; validates header before payload."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"{path}: no such embedding file") from None
    if len(raw) < _HEADER_LEN:
        raise FormatError(
            f"{path}: header needs {_HEADER_LEN} bytes, file has {len(raw)} (byte 0)"
        )
    if raw[:8] != EMBEDDING_MAGIC:
        raise FormatError(
            f"{path}: bad magic at byte 0 (got {raw[:8]!r}, want {EMBEDDING_MAGIC!r})"
        )
    version, code, n, d = struct.unpack_from("<BBII", raw, 8)
    if version != EMBEDDING_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 8")
    if code not in _DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code} at byte 9")
    if n < 1 or d < 1:
        raise FormatError(f"{path}: header declares empty payload n={n} d={d} at byte 10")
    expected = _HEADER_LEN + n * d * code
    if len(raw) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {n}x{d} payload, got {len(raw)} "
            f"(byte {min(len(raw), expected)})"
        )
    flat = np.frombuffer(raw, dtype=_DTYPE_CODES[code], offset=_HEADER_LEN)
    features = flat.reshape(n, d).astype(np.float64)
    if not np.isfinite(features).all():
        raise FormatError(f"{path}: payload contains non-finite values")
    return features


# -- manifest ----------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    slide_id: str
    label: str
    cohort: str
    split: str
    path: str  # relative to the manifest's root directory


@dataclass
class DatasetManifest:
    task_name: str
    classes: list[str]
    feature_dim: int
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def validate(self) -> None:
        if not self.task_name:
            raise ManifestError(BAD_HEADER, "manifest task name is empty")
        if len(self.classes) < 2:
            raise ManifestError(BAD_HEADER, f"need >= 2 classes, got {self.classes}")
        if len(set(self.classes)) != len(self.classes):
            raise ManifestError(BAD_HEADER, f"duplicate class names in {self.classes}")
        if self.feature_dim < 1:
            raise ManifestError(BAD_HEADER, f"feature_dim must be >= 1, got {self.feature_dim}")
        seen = set()
        class_set = set(self.classes)
        for entry in self.entries:
            for value in (entry.slide_id, entry.label, entry.cohort, entry.split, entry.path):
                if not value or "\t" in value or "\n" in value:
                    raise ManifestError(
                        BAD_RECORD, f"slide {entry.slide_id!r}: bad field {value!r}"
                    )
            if entry.slide_id in seen:
                raise ManifestError(DUPLICATE_ID, f"duplicate slide id {entry.slide_id!r}")
            seen.add(entry.slide_id)
            if entry.label not in class_set:
                raise ManifestError(
                    UNKNOWN_LABEL,
                    f"slide {entry.slide_id!r} has label {entry.label!r} "
                    f"not in class list",
                )
            if entry.split not in SPLITS:
                raise ManifestError(
                    BAD_SPLIT, f"slide {entry.slide_id!r} has split {entry.split!r}"
                )
        if not self.entries:
            raise ManifestError(BAD_RECORD, "manifest has no entries")

    # -- convenience views --------------------------------------------------

    def label_index(self, label: str) -> int:
        return self.classes.index(label)

    def train_entries(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == "train"]

    def test_entries(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == "test"]

    def cohorts(self) -> list[str]:
        seen: dict[str, None] = {}
        for entry in self.entries:
            seen.setdefault(entry.cohort, None)
        return list(seen)

    def embedding_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def subset(self, entries: list[ManifestEntry]) -> "DatasetManifest":
        return DatasetManifest(
            task_name=self.task_name,
            classes=list(self.classes),
            feature_dim=self.feature_dim,
            entries=list(entries),
            root=self.root,
        )


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    manifest.validate()
    path = Path(path)
    lines = [
        MANIFEST_HEADER,
        f"#task\t{manifest.task_name}",
        f"#dim\t{manifest.feature_dim}",
        "#classes\t" + "\t".join(manifest.classes),
        "\t".join(_COLUMNS),
    ]
    for entry in sorted(manifest.entries, key=lambda e: e.slide_id):
        lines.append(
            "\t".join((entry.slide_id, entry.label, entry.cohort, entry.split, entry.path))
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ManifestError(MISSING_FILE, f"manifest not found: {path}") from None
    lines = text.splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ManifestError(
            BAD_HEADER,
            f"{path}:1: first line must be {MANIFEST_HEADER!r}",
        )
    meta: dict[str, list[str]] = {}
    body_start = None
    for i, line in enumerate(lines[1:], start=2):
        if line.startswith("#"):
            fields = line[1:].split("\t")
            meta[fields[0]] = fields[1:]
        else:
            body_start = i
            break
    if body_start is None:
        raise ManifestError(BAD_HEADER, f"{path}: no column-header line")
    for key in ("task", "dim", "classes"):
        if key not in meta:
            raise ManifestError(BAD_HEADER, f"{path}: missing #{key} line")
    if tuple(lines[body_start - 1].split("\t")) != _COLUMNS:
        raise ManifestError(
            BAD_HEADER,
            f"{path}:{body_start}: column header must be {' '.join(_COLUMNS)}",
        )
    try:
        feature_dim = int(meta["dim"][0])
    except (IndexError, ValueError):
        raise ManifestError(BAD_HEADER, f"{path}: #dim line is not an integer") from None
    entries = []
    for i, line in enumerate(lines[body_start:], start=body_start + 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(_COLUMNS):
            raise ManifestError(
                BAD_RECORD,
                f"{path}:{i}: expected {len(_COLUMNS)} tab-separated fields, "
                f"got {len(fields)}",
            )
        entries.append(ManifestEntry(*fields))
    manifest = DatasetManifest(
        task_name=meta["task"][0] if meta["task"] else "",
        classes=list(meta["classes"]),
        feature_dim=feature_dim,
        entries=entries,
        root=path.parent,
    )
    manifest.validate()
    return manifest


def validate_manifest_files(manifest: DatasetManifest) -> None:
    """Pre-flight check: every embedding file exists and matches #dim.

    Raises one ManifestError listing every offending slide, so a bad corpus
    is reported in a single pass.
    """
    missing = []
    mismatched = []
    for entry in manifest.entries:
        file_path = manifest.embedding_path(entry)
        if not file_path.is_file():
            missing.append(entry.slide_id)
            continue
        features = read_embedding(file_path)
        if features.shape[1] != manifest.feature_dim:
            mismatched.append(f"{entry.slide_id} (dim {features.shape[1]})")
    if missing:
        raise ManifestError(
            MISSING_FILE, "missing embedding files for slides: " + ", ".join(missing)
        )
    if mismatched:
        raise ManifestError(
            DIM_MISMATCH,
            f"embedding dim != manifest dim {manifest.feature_dim} for slides: "
            + ", ".join(mismatched),
        )


def load_bags(
    manifest: DatasetManifest, entries: list[ManifestEntry] | None = None
) -> tuple[list[SlideBag], list[int]]:
    """Load (bags, integer labels) for the given entries (default: all)."""
    if entries is None:
        entries = manifest.entries
    class_index = {label: i for i, label in enumerate(manifest.classes)}
    bags = []
    labels = []
    for entry in entries:
        file_path = manifest.embedding_path(entry)
        if not file_path.is_file():
            raise ManifestError(
                MISSING_FILE,
                f"slide {entry.slide_id!r}: missing embedding file {file_path}",
            )
        features = read_embedding(file_path)
        if features.shape[1] != manifest.feature_dim:
            raise ManifestError(
                DIM_MISMATCH,
                f"slide {entry.slide_id!r} has dim {features.shape[1]}, "
                f"manifest declares {manifest.feature_dim}",
            )
        bags.append(SlideBag(entry.slide_id, features))
        labels.append(class_index[entry.label])
    return bags, labels


# -- synthetic corpus --------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Gaussian bag corpus standing in for frozen patch-encoder features.

    Each class c gets a unit-norm center mu_c. A slide of class c draws
    ceil(rho * n) informative patches from N(sigma_sep * mu_c, sigma_noise^2 I)
    and the rest from a class-free background N(0, sigma_noise^2 I), so the
    expected bag mean is rho * sigma_sep * mu_c. Cohorts beyond the first add
    a fixed offset vector of length cohort_shift to every patch.
    """

    num_classes: int = 10
    feature_dim: int = 64
    train_slides_per_class: int = 20
    test_slides_per_class: int = 10
    patches_min: int = 8
    patches_max: int = 32
    class_separation: float = 3.0
    noise_scale: float = 1.0
    informative_fraction: float = 1.0
    cohort_shift: float = 0.0
    num_cohorts: int = 1
    seed: int = 0
    task_name: str = "synth"

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.train_slides_per_class < 1 or self.test_slides_per_class < 1:
            raise ConfigError("need >= 1 train and test slide per class")
        if not (1 <= self.patches_min <= self.patches_max):
            raise ConfigError(
                f"need 1 <= patches_min <= patches_max, got "
                f"[{self.patches_min}, {self.patches_max}]"
            )
        if not (0.0 < self.informative_fraction <= 1.0):
            raise ConfigError(
                f"informative_fraction must be in (0, 1], got "
                f"{self.informative_fraction}"
            )
        if self.noise_scale < 0.0 or self.class_separation < 0.0:
            raise ConfigError("noise_scale and class_separation must be >= 0")
        if self.cohort_shift < 0.0:
            raise ConfigError(f"cohort_shift must be >= 0, got {self.cohort_shift}")
        if self.num_cohorts < 1:
            raise ConfigError(f"num_cohorts must be >= 1, got {self.num_cohorts}")


def class_centers(config: SynthConfig) -> np.ndarray:
    """Unit-norm class centers, deterministic in config.seed alone."""
    rng = make_rng(config.seed, "centers")
    centers = rng.normal(size=(config.num_classes, config.feature_dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    return centers


def cohort_offsets(config: SynthConfig) -> np.ndarray:
    """Per-cohort patch offsets; cohort 0 is the unshifted reference."""
    offsets = np.zeros((config.num_cohorts, config.feature_dim))
    for j in range(1, config.num_cohorts):
        rng = make_rng(config.seed, "cohort", j)
        direction = rng.normal(size=config.feature_dim)
        offsets[j] = config.cohort_shift * direction / np.linalg.norm(direction)
    return offsets


def _synth_slide(
    config: SynthConfig, center: np.ndarray, offset: np.ndarray, stream_keys: tuple
) -> np.ndarray:
    rng = make_rng(*stream_keys)
    n = int(rng.integers(config.patches_min, config.patches_max + 1))
    n_info = math.ceil(config.informative_fraction * n)
    patches = rng.normal(scale=config.noise_scale, size=(n, config.feature_dim))
    patches[:n_info] += config.class_separation * center
    patches += offset
    return patches


def generate_synthetic_corpus(
    config: SynthConfig, out_dir: str | Path
) -> tuple[DatasetManifest, Path]:
    """Write embeddings + manifest under out_dir; returns (manifest, path).

    Every slide draws from its own RNG stream keyed by
    (seed, "slide", cohort, class, split, index), so the corpus is
    byte-identical for a given config no matter the generation order.
    """
    config.validate()
    out_dir = Path(out_dir)
    emb_dir = out_dir / "embeddings"
    emb_dir.mkdir(parents=True, exist_ok=True)
    centers = class_centers(config)
    offsets = cohort_offsets(config)
    entries = []
    classes = [f"class_{c:02d}" for c in range(config.num_classes)]
    for cohort_idx in range(config.num_cohorts):
        cohort = f"cohort_{cohort_idx:02d}"
        for class_idx, label in enumerate(classes):
            per_split = (
                ("train", config.train_slides_per_class),
                ("test", config.test_slides_per_class),
            )
            for split, count in per_split:
                for i in range(count):
                    slide_id = f"{cohort}-{label}-{split}-{i:04d}"
                    features = _synth_slide(
                        config,
                        centers[class_idx],
                        offsets[cohort_idx],
                        (config.seed, "slide", cohort_idx, class_idx, split, i),
                    )
                    rel_path = f"embeddings/{slide_id}.semb"
                    write_embedding(out_dir / rel_path, features)
                    entries.append(
                        ManifestEntry(slide_id, label, cohort, split, rel_path)
                    )
    manifest = DatasetManifest(
        task_name=config.task_name,
        classes=classes,
        feature_dim=config.feature_dim,
        entries=entries,
        root=out_dir,
    )
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(manifest, manifest_path)
    return read_manifest(manifest_path), manifest_path


# -- sampling and splits -----------------------------------------------------

def few_shot_sample(
    manifest: DatasetManifest, k: int, seed: int
) -> tuple[DatasetManifest, list[str]]:
    """Keep min(k, class size) train slides per class; test split untouched.

    Per-class orders come from streams keyed by (seed, "fewshot", label) and
    samples are prefixes of those orders, so the sample for a larger k is a
    superset of the sample for a smaller k under the same seed.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    by_class: dict[str, list[ManifestEntry]] = {label: [] for label in manifest.classes}
    for entry in manifest.train_entries():
        by_class[entry.label].append(entry)
    warnings = []
    sampled = []
    for label in manifest.classes:
        pool = sorted(by_class[label], key=lambda e: e.slide_id)
        if not pool:
            raise ConfigError(f"class {label!r} has no train slides to sample")
        order = make_rng(seed, "fewshot", label).permutation(len(pool))
        take = min(k, len(pool))
        if take < k:
            warnings.append(
                f"class {label}: requested {k} train slides, only {len(pool)} "
                f"available (clamped)"
            )
        sampled.extend(pool[idx] for idx in order[:take])
    subset = manifest.subset(sampled + manifest.test_entries())
    return subset, warnings


@dataclass
class TransferSplit:
    train_cohort: str
    train: list[ManifestEntry]
    test_sets: dict[str, list[ManifestEntry]]


def split_by_cohort(
    manifest: DatasetManifest, train_cohort: str, test_cohorts: list[str]
) -> TransferSplit:
    """Train on train_cohort's train split; test per cohort.

    The training cohort is evaluated on its held-out test split; every other
    named cohort is evaluated on all of its slides, since none were trained
    on. Train ids and every test set are disjoint by construction.
    """
    present = set(manifest.cohorts())
    for cohort in [train_cohort, *test_cohorts]:
        if cohort not in present:
            raise ConfigError(
                f"cohort {cohort!r} not in manifest (has {sorted(present)})"
            )
    train = [
        e for e in manifest.train_entries() if e.cohort == train_cohort
    ]
    if not train:
        raise ConfigError(f"cohort {train_cohort!r} has no train slides")
    test_sets: dict[str, list[ManifestEntry]] = {}
    for cohort in test_cohorts:
        if cohort == train_cohort:
            test_sets[cohort] = [
                e for e in manifest.test_entries() if e.cohort == cohort
            ]
        else:
            test_sets[cohort] = [e for e in manifest.entries if e.cohort == cohort]
        if not test_sets[cohort]:
            raise ConfigError(f"cohort {cohort!r} has no test slides")
    return TransferSplit(train_cohort=train_cohort, train=train, test_sets=test_sets)
