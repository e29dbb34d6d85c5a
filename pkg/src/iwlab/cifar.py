"""Bit-exact reader/writer for the CIFAR-10 binary batch format and the
binary task constructions built on it.

Wire format: records of exactly 3073 bytes — 1 label byte (0-9) followed
by 3072 pixel bytes, channel-planar R/G/B, each plane 32x32 row-major.
Feature normalization is a plain divide by 255 (no standardization).
"""

from __future__ import annotations

import hashlib
import tarfile
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import Dataset
from .errors import ConfigError, FormatError
from .rngs import stream

RECORD_BYTES = 3073
CLASS_NAMES = ("airplane", "automobile", "bird", "cat", "deer",
               "dog", "frog", "horse", "ship", "truck")
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"
ARCHIVE_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"


@dataclass(frozen=True)
class CifarRecord:
    label: int
    pixels: bytes  # 3072 bytes, channel-planar

    def __post_init__(self):
        if not 0 <= self.label <= 9:
            raise FormatError(f"label {self.label} out of range 0-9")
        if len(self.pixels) != RECORD_BYTES - 1:
            raise FormatError(f"record pixel payload must be 3072 bytes, "
                              f"got {len(self.pixels)}")


def read_batch_file(path) -> list[CifarRecord]:
    """Parse one binary batch file into records, validating structure."""
    raw = Path(path).read_bytes()
    if len(raw) % RECORD_BYTES:
        offset = (len(raw) // RECORD_BYTES) * RECORD_BYTES
        raise FormatError(
            f"{path}: truncated batch file, {len(raw) - offset} trailing bytes "
            f"at offset {offset}")
    records = []
    for i in range(0, len(raw), RECORD_BYTES):
        label = raw[i]
        if label > 9:
            raise FormatError(f"{path}: invalid label {label} at offset {i}")
        records.append(CifarRecord(label, raw[i + 1:i + RECORD_BYTES]))
    return records


def write_batch_file(records, path) -> None:
    """Inverse of read_batch_file; read(write(r)) is the identity."""
    with open(path, "wb") as fh:
        for rec in records:
            fh.write(bytes([rec.label]))
            fh.write(rec.pixels)


def records_to_arrays(records) -> tuple[np.ndarray, np.ndarray]:
    """Records -> (features (N,3,32,32) in [0,1], source labels (N,))."""
    labels = np.array([r.label for r in records], dtype=np.int64)
    pixels = np.frombuffer(b"".join(r.pixels for r in records), dtype=np.uint8)
    features = pixels.reshape(len(records), 3, 32, 32).astype(np.float64) / 255.0
    return features, labels


def arrays_to_records(pixels: np.ndarray, labels: np.ndarray) -> list[CifarRecord]:
    """(N,3,32,32) uint8 pixel planes + labels -> records."""
    return [CifarRecord(int(y), p.tobytes()) for p, y in zip(pixels, labels)]


@dataclass(frozen=True)
class TaskMap:
    """Source-class -> binary-target assignment with per-class sampling
    ratios. Within each binary target, the class with the largest ratio is
    kept in full and the others are subsampled proportionally."""

    mode: str  # "pair" | "superclass"
    assignment: dict = field(default_factory=dict)  # source class -> 0/1
    ratios: dict = field(default_factory=dict)  # source class -> positive number

    def __post_init__(self):
        if self.mode not in ("pair", "superclass"):
            raise ConfigError(f"TaskMap mode must be pair or superclass, got {self.mode!r}")
        if not self.assignment:
            raise ConfigError("TaskMap needs at least one source class")
        for cls, tgt in self.assignment.items():
            if tgt not in (0, 1):
                raise ConfigError(f"binary target for class {cls} must be 0 or 1")
        for cls, r in self.ratio_map().items():
            if r <= 0:
                raise ConfigError(f"sampling ratio for class {cls} must be positive")

    def ratio_map(self) -> dict:
        return {cls: self.ratios.get(cls, 1.0) for cls in self.assignment}


def superclass_map(animal_ratio: tuple[float, float] = (1.0, 1.0),
                   vehicle_ratio: tuple[float, float] = (1.0, 1.0)) -> TaskMap:
    """cat/dog -> animal (label 0), automobile/truck -> vehicle (label 1),
    with (cat:dog) and (car:truck) train sampling ratios."""
    cat, dog = CLASS_NAMES.index("cat"), CLASS_NAMES.index("dog")
    car, truck = CLASS_NAMES.index("automobile"), CLASS_NAMES.index("truck")
    return TaskMap(mode="superclass",
                   assignment={cat: 0, dog: 0, car: 1, truck: 1},
                   ratios={cat: animal_ratio[0], dog: animal_ratio[1],
                           car: vehicle_ratio[0], truck: vehicle_ratio[1]})


def select_pair(records, class_a: int, class_b: int, split: str = "train") -> Dataset:
    """Binary dataset from two source classes; label 1 = class_b."""
    if class_a == class_b:
        raise ConfigError("select_pair needs two distinct classes")
    chosen = [r for r in records if r.label in (class_a, class_b)]
    if not chosen:
        raise ConfigError(f"no records with labels {class_a} or {class_b}")
    features, source = records_to_arrays(chosen)
    labels = (source == class_b).astype(np.int64)
    return Dataset(features, labels, np.ones(len(labels)), split,
                   {"generator": "cifar-pair", "classes": (class_a, class_b),
                    "source_labels": source, "split": split})


def remap_superclass(records, task: TaskMap, seed: int = 0,
                     split: str = "train") -> Dataset:
    """Apply a superclass TaskMap: subset to the mapped classes, subsample
    each source class by its ratio (within its binary target, the largest
    ratio keeps all examples; floor arithmetic), and attach binary labels.
    Source labels ride along in provenance for weight construction."""
    features, source = records_to_arrays(records)
    present = set(np.unique(source[np.isin(source, list(task.assignment))]))
    missing = set(task.assignment) - present
    if missing:
        raise ConfigError(f"source classes {sorted(missing)} not present in records")
    ratios = task.ratio_map()
    keep_parts = []
    for cls, ratio in sorted(ratios.items()):
        idx = np.flatnonzero(source == cls)
        group_max = max(r for c, r in ratios.items()
                        if task.assignment[c] == task.assignment[cls])
        want = int(len(idx) * ratio // group_max)
        if want < 1:
            raise ConfigError(f"ratio {ratio} leaves no examples of class {cls}")
        if want < len(idx):
            rng = stream(seed, f"remap-{cls}")
            idx = np.sort(rng.choice(idx, size=want, replace=False))
        keep_parts.append(idx)
    keep = np.sort(np.concatenate(keep_parts))
    source_kept = source[keep]
    labels = np.array([task.assignment[int(c)] for c in source_kept], dtype=np.int64)
    return Dataset(features[keep], labels, np.ones(len(keep)), split,
                   {"generator": "cifar-superclass", "task": task, "seed": seed,
                    "source_labels": source_kept, "split": split})


def covariate_weights(ds: Dataset, task: TaskMap,
                      test_proportions: dict | None = None) -> np.ndarray:
    """Per-example weights = (test-time proportion of the example's source
    class within its binary target) / (realized train-time proportion),
    min-normalized to 1. Defaults to a balanced test population per target.

    Using realized train counts makes the reweighting identity exact: the
    weighted empirical source-class proportions equal the test proportions.
    """
    source = ds.provenance.get("source_labels")
    if source is None:
        raise ConfigError("dataset has no source_labels provenance")
    per_class_weight = {}
    for target in (0, 1):
        classes = sorted(c for c, t in task.assignment.items() if t == target)
        counts = {c: int(np.sum(source == c)) for c in classes}
        total = sum(counts.values())
        if any(v == 0 for v in counts.values()):
            raise ConfigError(f"zero train proportion within target {target}")
        for c in classes:
            train_prop = counts[c] / total
            test_prop = (test_proportions[c] if test_proportions is not None
                         else 1.0 / len(classes))
            per_class_weight[c] = test_prop / train_prop
    low = min(per_class_weight.values())
    per_class_weight = {c: w / low for c, w in per_class_weight.items()}
    return np.array([per_class_weight[int(c)] for c in source])


CACHE_MAGIC = b"IWDS1\n"


def save_dataset_cache(ds: Dataset, path) -> None:
    """Versioned binary cache: magic, one JSON header line (shape, label
    presence, split), then row-major float64 features, int64 labels, and
    float64 weights."""
    import json

    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        header = {"shape": list(ds.features.shape),
                  "labeled": ds.labels is not None, "split": ds.split}
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(np.ascontiguousarray(ds.features, dtype=np.float64).tobytes())
        if ds.labels is not None:
            fh.write(np.ascontiguousarray(ds.labels, dtype=np.int64).tobytes())
        fh.write(np.ascontiguousarray(ds.weights, dtype=np.float64).tobytes())


def load_dataset_cache(path) -> Dataset:
    import json

    with open(path, "rb") as fh:
        magic = fh.read(len(CACHE_MAGIC))
        if magic != CACHE_MAGIC:
            raise FormatError(f"{path}: not a dataset cache (bad magic {magic!r})")
        header = json.loads(fh.readline().decode())
        shape = tuple(header["shape"])
        n = shape[0]
        feats = np.frombuffer(fh.read(8 * int(np.prod(shape)))).reshape(shape)
        labels = None
        if header["labeled"]:
            labels = np.frombuffer(fh.read(8 * n), dtype=np.int64).copy()
        weights = np.frombuffer(fh.read(8 * n)).copy()
    return Dataset(feats.copy(), labels, weights, header["split"],
                   {"generator": "cache", "path": str(path)})


# -- on-disk corpus management ------------------------------------------------

def load_split(data_dir, split: str) -> list[CifarRecord]:
    """Read the train (5 batch files) or test (1 file) record stream."""
    data_dir = Path(data_dir)
    names = TRAIN_FILES if split == "train" else (TEST_FILE,)
    records: list[CifarRecord] = []
    for name in names:
        path = _find_batch(data_dir, name)
        if path is None:
            raise ConfigError(
                f"missing {name} under {data_dir}; run `iwlab fetch-cifar {data_dir}` "
                f"or point --data-dir at a prepared directory")
        records.extend(read_batch_file(path))
    return records


def _find_batch(data_dir: Path, name: str) -> Path | None:
    direct = data_dir / name
    if direct.exists():
        return direct
    nested = data_dir / "cifar-10-batches-bin" / name
    if nested.exists():
        return nested
    return None


def fetch_archive(data_dir, url: str = ARCHIVE_URL, sha256: str | None = None) -> Path:
    """Download and unpack the canonical archive into data_dir.

    Always validates structure (6 batch files, 10000 records each); an
    expected sha256 may be supplied to pin the archive bytes exactly.
    """
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    archive = data_dir / "cifar-10-binary.tar.gz"
    if not archive.exists():
        urllib.request.urlretrieve(url, archive)
    if sha256 is not None:
        digest = hashlib.sha256(archive.read_bytes()).hexdigest()
        if digest != sha256:
            raise FormatError(f"archive digest {digest} != expected {sha256}")
    with tarfile.open(archive, "r:gz") as tar:
        tar.extractall(data_dir)
    for name in TRAIN_FILES + (TEST_FILE,):
        path = _find_batch(data_dir, name)
        if path is None:
            raise FormatError(f"archive did not contain {name}")
        if len(read_batch_file(path)) != 10000:
            raise FormatError(f"{name} does not hold 10000 records")
    return data_dir


def write_synthetic_corpus(data_dir, per_class_train: int = 1000,
                           per_class_test: int = 200, seed: int = 0,
                           shared_modes: bool = True) -> Path:
    """Write a mode-template image corpus in the exact batch wire format,
    so every downstream reader path is exercised bit-for-bit."""
    from .datagen import synth_image_classes

    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    pixels, labels = synth_image_classes(per_class_train, seed=seed, split="train",
                                         shared_modes=shared_modes)
    order = stream(seed, "synth-order-train").permutation(len(labels))
    records = arrays_to_records(pixels[order], labels[order])
    per_file = max(1, len(records) // len(TRAIN_FILES))
    for i, name in enumerate(TRAIN_FILES):
        chunk = records[i * per_file:(i + 1) * per_file]
        write_batch_file(chunk, data_dir / name)
    pixels, labels = synth_image_classes(per_class_test, seed=seed, split="test",
                                         shared_modes=shared_modes)
    order = stream(seed, "synth-order-test").permutation(len(labels))
    write_batch_file(arrays_to_records(pixels[order], labels[order]),
                     data_dir / TEST_FILE)
    return data_dir
