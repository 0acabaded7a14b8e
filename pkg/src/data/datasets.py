"""
Dataset ingestion: MNIST-style IDX files, CIFAR-10 binary batches and a
synthetic class-conditional blob generator.

Pixels are scaled to [0, 1] and then standardized per channel. The
training split computes the NormalizationStats; evaluation splits reuse
the training split's stats.
"""

import gzip
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.autodiff.tensor import Tensor
from src.utils.errors import DataError
from src.utils.logger import get_logger

log = get_logger("data.datasets")

PathLike = Union[str, Path]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CIFAR_RECORD_BYTES = 3073
CIFAR_CLASSES = 10
MNIST_CLASSES = 10

SYNTHETIC_SHAPE = (3, 16, 16)


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel mean and standard deviation of the training split."""
    mean: Tuple[float, ...]
    std: Tuple[float, ...]

    @classmethod
    def from_images(cls, images: np.ndarray) -> "NormalizationStats":
        mean = images.mean(axis=(0, 2, 3))
        std = images.std(axis=(0, 2, 3))
        std = np.where(std > 0, std, 1.0)
        return cls(tuple(float(m) for m in mean), tuple(float(s) for s in std))

    def apply(self, images: np.ndarray) -> np.ndarray:
        if images.shape[1] != len(self.mean):
            raise DataError(f"stats cover {len(self.mean)} channels, images have {images.shape[1]}")
        mean = np.asarray(self.mean).reshape(1, -1, 1, 1)
        std = np.asarray(self.std).reshape(1, -1, 1, 1)
        return (images - mean) / std


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    class_count: int
    stats: NormalizationStats
    name: str = "dataset"

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DataError(f"{self.name}: images must be [n, c, h, w], got {self.images.shape}")
        if len(self.images) < 1:
            raise DataError(f"{self.name}: dataset is empty")
        if len(self.labels) != len(self.images):
            raise DataError(f"{self.name}: {len(self.images)} images but {len(self.labels)} labels")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise DataError(f"{self.name}: labels outside [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def sample_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def tensor(self) -> Tensor:
        return Tensor(self.images)

    def head(self, count: int) -> "Dataset":
        """The first ``count`` samples, sharing normalization stats."""
        return Dataset(self.images[:count], self.labels[:count], self.class_count, self.stats, self.name)


def _finalize(
    pixels: np.ndarray,
    labels: np.ndarray,
    class_count: int,
    stats: Optional[NormalizationStats],
    name: str,
    limit: Optional[int] = None,
) -> Dataset:
    if limit is not None:
        pixels, labels = pixels[:limit], labels[:limit]
    scaled = pixels.astype(np.float64)
    if stats is None:
        stats = NormalizationStats.from_images(scaled)
    return Dataset(
        images=stats.apply(scaled),
        labels=labels.astype(np.int64),
        class_count=class_count,
        stats=stats,
        name=name,
    )


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Dataset file not found: {path}")
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _read_idx(path: PathLike, magic: int, rank: int) -> np.ndarray:
    raw = _read_bytes(path)
    header_bytes = 4 + 4 * rank
    if len(raw) < header_bytes:
        raise DataError(f"{path}: truncated IDX file ({len(raw)} bytes)")
    header = np.frombuffer(raw[:header_bytes], dtype=">u4")
    if int(header[0]) != magic:
        raise DataError(f"{path}: bad magic 0x{int(header[0]):08x}, expected 0x{magic:08x}")
    dims = tuple(int(v) for v in header[1:])
    expected = int(np.prod(dims))
    if len(raw) - header_bytes < expected:
        raise DataError(f"{path}: truncated IDX payload, {len(raw) - header_bytes} of {expected} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header_bytes).reshape(dims)


def load_idx(
    images_path: PathLike,
    labels_path: PathLike,
    stats: Optional[NormalizationStats] = None,
    limit: Optional[int] = None,
) -> Dataset:
    """
    Load an IDX image/label pair (e.g. MNIST) as a single-channel Dataset.

    Args:
        images_path: IDX3 image file (optionally .gz)
        labels_path: IDX1 label file (optionally .gz)
        stats: Training-split statistics; computed from these images if None
        limit: Keep only the first ``limit`` samples

    Returns:
        Dataset with shape [n, 1, rows, cols]
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise DataError(f"count mismatch: {len(images)} images vs {len(labels)} labels")
    if labels.size and labels.max() >= MNIST_CLASSES:
        raise DataError(f"{labels_path}: label {labels.max()} out of range")
    log.info(f"Loaded IDX pair {Path(images_path).name}: {len(images)} samples")
    return _finalize(images[:, None, :, :] / 255.0, labels, MNIST_CLASSES, stats, "mnist", limit)


def load_cifar10(
    batch_files: Sequence[PathLike],
    stats: Optional[NormalizationStats] = None,
    limit: Optional[int] = None,
) -> Dataset:
    """Load CIFAR-10 binary batches (3073-byte records: label, R, G, B planes)."""
    if not batch_files:
        raise DataError("no CIFAR-10 batch files given")
    images, labels = [], []
    for path in batch_files:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES:
            raise DataError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        if records[:, 0].max() >= CIFAR_CLASSES:
            raise DataError(f"{path}: label byte {records[:, 0].max()} > {CIFAR_CLASSES - 1}")
        labels.append(records[:, 0])
        images.append(records[:, 1:].reshape(-1, 3, 32, 32))
    pixels = np.concatenate(images) / 255.0
    log.info(f"Loaded {len(batch_files)} CIFAR-10 batch file(s): {len(pixels)} samples")
    return _finalize(pixels, np.concatenate(labels), CIFAR_CLASSES, stats, "cifar10", limit)


def synthetic_dataset(
    classes: int,
    per_class: int,
    seed: int,
    split: str = "train",
    stats: Optional[NormalizationStats] = None,
) -> Dataset:
    """
    Class-conditional Gaussian blob images of shape 3x16x16.

    Each class owns a blob position on a ring and an RGB colour drawn from
    ``seed``; samples jitter the position and amplitude and add pixel
    noise. Train and test splits share class templates but draw samples
    from separate streams.
    """
    if classes < 2:
        raise DataError(f"synthetic_dataset needs >= 2 classes, got {classes}")
    if split not in ("train", "test"):
        raise DataError(f"Unknown split: {split}")
    channels, height, width = SYNTHETIC_SHAPE

    templates = np.random.default_rng(seed)
    phase = templates.uniform(0.0, 2.0 * np.pi)
    angles = phase + 2.0 * np.pi * np.arange(classes) / classes
    centers = np.stack([7.5 + 4.5 * np.sin(angles), 7.5 + 4.5 * np.cos(angles)], axis=1)
    colours = templates.normal(size=(classes, channels))
    colours *= 1.5 / np.linalg.norm(colours, axis=1, keepdims=True)

    samples = np.random.default_rng([seed, 0 if split == "train" else 1])
    n = classes * per_class
    labels = samples.permutation(np.repeat(np.arange(classes), per_class))
    jitter = samples.uniform(-1.0, 1.0, size=(n, 2))
    amplitude = samples.uniform(0.8, 1.2, size=n)
    noise = samples.normal(0.0, 0.5, size=(n, channels, height, width))

    rows = np.arange(height).reshape(1, height, 1)
    cols = np.arange(width).reshape(1, 1, width)
    cy = (centers[labels, 0] + jitter[:, 0]).reshape(n, 1, 1)
    cx = (centers[labels, 1] + jitter[:, 1]).reshape(n, 1, 1)
    blob = np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2.0 * 2.5 ** 2))
    pixels = amplitude.reshape(n, 1, 1, 1) * colours[labels][:, :, None, None] * blob[:, None] + noise

    return _finalize(pixels, labels, classes, stats, f"synthetic-{split}")
