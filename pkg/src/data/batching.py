"""
Deterministic mini-batching with training-time augmentation.

The sample order of an epoch depends only on (shuffle_seed, epoch); the
augmentation draws for batch k depend only on (shuffle_seed, epoch, k).
Delivery order is therefore identical with or without prefetching.
"""

import queue
import threading
from typing import Iterator, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.autodiff.tensor import Tensor
from src.data.datasets import Dataset
from src.models.spec_schema import AugmentationPolicy
from src.utils.errors import ConfigError

Batch = Tuple[Tensor, np.ndarray]


def augment_batch(
    images: np.ndarray,
    policy: AugmentationPolicy,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Pad, randomly crop and randomly flip each image of a [b, c, h, w] batch.

    Args:
        images: Batch to augment (left untouched)
        policy: Padding, crop size, flip probability and fill mode
        rng: Generator supplying crop offsets then flip draws

    Returns:
        Augmented copy of shape [b, c, crop_h, crop_w]
    """
    b, _, h, w = images.shape
    pad = policy.pad_pixels
    crop_h, crop_w = policy.crop_shape(h, w)
    if crop_h > h + 2 * pad or crop_w > w + 2 * pad:
        raise ConfigError(f"crop {crop_h}x{crop_w} exceeds padded extent {h + 2 * pad}x{w + 2 * pad}")

    if pad:
        mode = "reflect" if policy.fill_mode == "reflect" else "constant"
        padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode=mode)
    else:
        padded = images
    top = rng.integers(0, h + 2 * pad - crop_h + 1, size=b)
    left = rng.integers(0, w + 2 * pad - crop_w + 1, size=b)
    windows = sliding_window_view(padded, (crop_h, crop_w), axis=(2, 3))
    out = windows[np.arange(b), :, top, left]

    flip = rng.random(b) < policy.hflip_probability
    out[flip] = out[flip][..., ::-1]
    return out


def epoch_order(n: int, shuffle_seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([shuffle_seed, epoch]).permutation(n)


def _iterate(
    dataset: Dataset,
    batch_size: int,
    shuffle_seed: int,
    policy: Optional[AugmentationPolicy],
    epoch: int,
    training: bool,
) -> Iterator[Batch]:
    n = len(dataset)
    order = epoch_order(n, shuffle_seed, epoch) if training else np.arange(n)
    augment = training and policy is not None and policy.enabled
    for k, start in enumerate(range(0, n, batch_size)):
        index = order[start:start + batch_size]
        if training and len(index) < batch_size:
            break
        images = dataset.images[index]
        if augment:
            images = augment_batch(images, policy, np.random.default_rng([shuffle_seed, epoch, k + 1]))
        yield Tensor(images), dataset.labels[index]


def batches(
    dataset: Dataset,
    batch_size: int,
    shuffle_seed: int,
    policy: Optional[AugmentationPolicy] = None,
    epoch: int = 0,
    training: bool = True,
    prefetch_depth: int = 0,
) -> Iterator[Batch]:
    """
    Yield (images, labels) batches for one epoch.

    Training batches follow the (shuffle_seed, epoch) permutation, are
    augmented per ``policy`` and drop the final short batch. Evaluation
    batches keep dataset order, skip augmentation and keep the short batch.

    Raises:
        ConfigError: batch_size < 1 or larger than the dataset
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if batch_size > len(dataset):
        raise ConfigError(f"batch_size {batch_size} exceeds dataset size {len(dataset)}")
    source = _iterate(dataset, batch_size, shuffle_seed, policy, epoch, training)
    if prefetch_depth > 0:
        return prefetch(source, prefetch_depth)
    return source


class _Failure:
    def __init__(self, error: BaseException):
        self.error = error


_DONE = object()


def prefetch(source: Iterator, depth: int) -> Iterator:
    """Run ``source`` on a background thread through a bounded queue."""
    buffer: "queue.Queue" = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def _put(item) -> bool:
        while not stop.is_set():
            try:
                buffer.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _produce():
        try:
            for item in source:
                if not _put(item):
                    return
        except BaseException as e:
            _put(_Failure(e))
            return
        _put(_DONE)

    worker = threading.Thread(target=_produce, name="batch-prefetch", daemon=True)
    worker.start()
    try:
        while True:
            item = buffer.get()
            if item is _DONE:
                break
            if isinstance(item, _Failure):
                raise item.error
            yield item
    finally:
        stop.set()
        worker.join(timeout=1.0)
