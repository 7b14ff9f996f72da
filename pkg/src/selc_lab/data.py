"""Dataset containers, synthetic blob generation, and IDX/CSV ingestion.

True labels live only on :class:`NoisyDataset`; the training loop receives a
:class:`TrainView`, which physically lacks them. Evaluation code takes the
full dataset.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError, ParameterError
from .noise import TransitionMatrix, inject_noise
from .rng import stream

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class TrainView:
    """What the training path is allowed to see: no true labels."""

    features: np.ndarray
    noisy_labels: np.ndarray
    ids: np.ndarray
    num_classes: int

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass
class NoisyDataset:
    features: np.ndarray
    noisy_labels: np.ndarray
    true_labels: np.ndarray
    ids: np.ndarray
    num_classes: int

    def __post_init__(self):
        n = self.features.shape[0]
        if not (len(self.noisy_labels) == len(self.true_labels) == len(self.ids) == n):
            raise DimensionError("features, labels, and ids must agree in length")
        if len(np.unique(self.ids)) != n:
            raise ParameterError("sample ids must be unique")

    def train_view(self) -> TrainView:
        return TrainView(
            features=self.features,
            noisy_labels=self.noisy_labels,
            ids=self.ids,
            num_classes=self.num_classes,
        )


def make_noisy_dataset(features, clean_labels, tm: TransitionMatrix, seed: int) -> NoisyDataset:
    """Corrupt clean labels through the transition matrix and bundle the result."""
    features = np.asarray(features, dtype=np.float64)
    clean = np.asarray(clean_labels, dtype=np.int64)
    noisy = inject_noise(clean, tm, seed)
    return NoisyDataset(
        features=features,
        noisy_labels=noisy,
        true_labels=clean,
        ids=np.arange(features.shape[0]),
        num_classes=tm.num_classes,
    )


@dataclass
class BlobSpec:
    """Isotropic Gaussian clusters around well-separated random centers."""

    n: int
    dim: int
    num_classes: int
    cluster_std: float = 1.0
    seed: int = 0
    test_n: int | None = None  # defaults to n // 4

    def __post_init__(self):
        if self.num_classes < 2:
            raise ParameterError(f"need at least 2 classes, got {self.num_classes}")
        if self.n < self.num_classes:
            raise ParameterError(f"n={self.n} smaller than the number of classes")
        if self.dim < 1 or self.cluster_std <= 0:
            raise ParameterError("dim must be >= 1 and cluster_std positive")


# Fixed center box; cluster_std against it sets task hardness. At std=1.0
# clusters sit 4-5 std apart, close enough that label noise can drag a small
# net's boundary while clean training stays near-perfect.
_CENTER_BOX = 1.6
_CENTER_ATTEMPTS = 1000


def _blob_centers(spec: BlobSpec) -> np.ndarray:
    """Centers drawn uniformly in a box, rejection-resampled so every pair
    is at least 4 * cluster_std apart."""
    rng = stream(spec.seed, "blobs", "centers")
    min_dist = 4.0 * spec.cluster_std
    centers = []
    for _ in range(spec.num_classes):
        for attempt in range(_CENTER_ATTEMPTS):
            cand = rng.uniform(-_CENTER_BOX, _CENTER_BOX, size=spec.dim)
            if all(np.linalg.norm(cand - c) >= min_dist for c in centers):
                centers.append(cand)
                break
        else:
            raise ParameterError(
                f"could not place {spec.num_classes} centers at pairwise distance "
                f">= {min_dist} in {spec.dim}-D after {_CENTER_ATTEMPTS} attempts; "
                "cluster_std too large for this dimension"
            )
    return np.stack(centers)


def _balanced_labels(n: int, num_classes: int) -> np.ndarray:
    base = n // num_classes
    counts = [base + (1 if c < n % num_classes else 0) for c in range(num_classes)]
    return np.repeat(np.arange(num_classes), counts)


def generate_blobs(spec: BlobSpec, split: str = "train"):
    """Return (features, labels) for the requested split.

    Train and test splits share the same centers but use disjoint point
    streams; everything is deterministic per (spec, split).
    """
    if split not in ("train", "test"):
        raise ParameterError(f"split must be 'train' or 'test', got {split!r}")
    n = spec.n if split == "train" else (spec.test_n if spec.test_n is not None else spec.n // 4)
    if n < spec.num_classes:
        raise ParameterError(f"{split} split of size {n} cannot balance {spec.num_classes} classes")
    centers = _blob_centers(spec)
    labels = _balanced_labels(n, spec.num_classes)
    rng = stream(spec.seed, "blobs", split)
    features = centers[labels] + spec.cluster_std * rng.standard_normal((n, spec.dim))
    return features, labels


def _read_be32(fh, path, what):
    raw = fh.read(4)
    if len(raw) != 4:
        raise FormatError(f"{path}: truncated while reading {what} at offset {fh.tell() - len(raw)}")
    return struct.unpack(">i", raw)[0]


def load_idx(images_path, labels_path):
    """Read an IDX image/label file pair.

    Returns (features, labels) with pixel values scaled to [0, 1] and
    images flattened to rows.
    """
    with open(images_path, "rb") as fh:
        magic = _read_be32(fh, images_path, "magic")
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(f"{images_path}: bad image magic {magic:#010x} at offset 0")
        count = _read_be32(fh, images_path, "count")
        rows = _read_be32(fh, images_path, "rows")
        cols = _read_be32(fh, images_path, "cols")
        expected = count * rows * cols
        pixels = fh.read(expected)
        if len(pixels) != expected:
            raise FormatError(
                f"{images_path}: expected {expected} pixel bytes, got {len(pixels)} "
                f"(truncated at offset {16 + len(pixels)})"
            )
    with open(labels_path, "rb") as fh:
        magic = _read_be32(fh, labels_path, "magic")
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(f"{labels_path}: bad label magic {magic:#010x} at offset 0")
        label_count = _read_be32(fh, labels_path, "count")
        raw = fh.read(label_count)
        if len(raw) != label_count:
            raise FormatError(
                f"{labels_path}: expected {label_count} label bytes, got {len(raw)} "
                f"(truncated at offset {8 + len(raw)})"
            )
    if label_count != count:
        raise FormatError(
            f"count mismatch: {images_path} holds {count} images but {labels_path} holds {label_count} labels"
        )
    features = np.frombuffer(pixels, dtype=np.uint8).astype(np.float64).reshape(count, rows * cols) / 255.0
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    return features, labels


def write_idx(images_path, labels_path, images, labels) -> None:
    """Write uint8 images (n, rows, cols) and labels (n,) in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise DimensionError(f"images must be (n, rows, cols), got shape {images.shape}")
    if labels.shape != (images.shape[0],):
        raise DimensionError("labels length must match image count")
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABEL_MAGIC, n))
        fh.write(labels.tobytes())


def save_csv_dataset(path, features, labels) -> None:
    """Header ``label,f0,...``; full-precision decimals, LF endings."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] != labels.shape[0]:
        raise DimensionError("features and labels must agree in length")
    with open(path, "w", newline="\n") as fh:
        fh.write("label," + ",".join(f"f{j}" for j in range(features.shape[1])) + "\n")
        for y, row in zip(labels, features):
            fh.write(str(int(y)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def load_csv_dataset(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("label,"):
            raise FormatError(f"{path}: expected header starting with 'label,', got {header!r}")
        width = len(header.split(",")) - 1
        feats, labels = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            toks = line.split(",")
            if len(toks) != width + 1:
                raise FormatError(f"{path}: line {lineno} has {len(toks)} fields, expected {width + 1}")
            labels.append(int(toks[0]))
            feats.append([float(t) for t in toks[1:]])
    if not feats:
        raise FormatError(f"{path}: no data rows")
    return np.asarray(feats, dtype=np.float64), np.asarray(labels, dtype=np.int64)
