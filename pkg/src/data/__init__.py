"""Data package initialization"""

from src.data.datasets import (
    Dataset,
    NormalizationStats,
    load_idx,
    load_cifar10,
    synthetic_dataset,
)
from src.data.batching import augment_batch, batches, epoch_order, prefetch

__all__ = [
    "Dataset",
    "NormalizationStats",
    "load_idx",
    "load_cifar10",
    "synthetic_dataset",
    "augment_batch",
    "batches",
    "epoch_order",
    "prefetch",
]
