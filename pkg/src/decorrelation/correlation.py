"""
Pearson correlation between channel feature maps.

For stage activations of shape [b, d, h, w], each channel is observed as
its b feature maps. Deviations are taken from the per-location batch mean
map, so every coefficient is the Pearson coefficient of two flattened
deviation vectors of length b*h*w.

A channel whose summed squared deviation is at most ZERO_VARIANCE_RTOL
times its summed squared value is a zero-variance channel: every
coefficient involving it, its diagonal included, is exactly 0 and receives
no gradient. The test is relative, so rescaling a channel never changes
whether it counts as zero-variance.
"""

from dataclasses import dataclass, field
from typing import FrozenSet, Sequence, Union

import numpy as np

from src.autodiff.tensor import Tensor, record_op
from src.utils.errors import ShapeError

# Rounding leaves a constant channel with a relative spread near 1e-32.
ZERO_VARIANCE_RTOL = 1e-20


@dataclass(frozen=True)
class StageActivations:
    """Rank-4 activation block [b, d, h, w] captured at a stage boundary."""
    tensor: Tensor
    stage_id: int

    def __post_init__(self):
        if self.tensor.ndim != 4:
            raise ShapeError(f"stage {self.stage_id}: activations must be rank 4, got {self.tensor.shape}")
        if self.stage_id < 0:
            raise ShapeError(f"stage id must be >= 0, got {self.stage_id}")

    @property
    def batch_size(self) -> int:
        return self.tensor.shape[0]

    @property
    def channels(self) -> int:
        return self.tensor.shape[1]

    def check_correlatable(self) -> None:
        """Raise ShapeError unless b >= 2 and d >= 2."""
        if self.batch_size < 2:
            raise ShapeError(f"stage {self.stage_id}: correlation needs batch >= 2, got {self.batch_size}")
        if self.channels < 2:
            raise ShapeError(f"stage {self.stage_id}: correlation needs >= 2 channels, got {self.channels}")


@dataclass(frozen=True)
class CorrelationMatrix:
    """Symmetric d x d Pearson coefficients between the channels of one stage."""
    values: Tensor
    zero_variance_channels: FrozenSet[int] = field(default_factory=frozenset)
    stage_id: int = 0

    @property
    def dimension(self) -> int:
        return self.values.shape[0]

    def array(self) -> np.ndarray:
        return self.values.data


def _batch_sum(values: np.ndarray) -> np.ndarray:
    # Sorting along the batch axis makes the sum independent of sample order.
    return np.sort(values, axis=0).sum(axis=0)


def _varies(sq_deviation, sq_value):
    return (sq_deviation > 0) & (sq_deviation > ZERO_VARIANCE_RTOL * sq_value)


def pearson_scalar(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Pearson correlation coefficient of two equal-length sequences.

    Returns 0.0 when either sequence has zero variance.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise ShapeError(f"pearson_scalar: length mismatch {x.size} vs {y.size}")
    if x.size < 2:
        raise ShapeError(f"pearson_scalar needs at least 2 observations, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if not (_varies(sxx, float(np.dot(x, x))) and _varies(syy, float(np.dot(y, y)))):
        return 0.0
    r = float(np.dot(dx, dy)) / np.sqrt(sxx * syy)
    # Clamp r in [-1, +1] in case of floating-point error.
    return float(min(max(r, -1.0), 1.0))


def correlation_matrix(acts: StageActivations) -> CorrelationMatrix:
    """
    Differentiable channel-by-channel Pearson matrix of a stage's activations.

    Computed in float64 regardless of the global precision.
    """
    acts.check_correlatable()
    x = acts.tensor
    b, d, h, w = x.shape
    x64 = x.data.astype(np.float64)

    deviations = x64 - _batch_sum(x64) / b
    per_sample = deviations.reshape(b, d, h * w)
    gram = _batch_sum(np.matmul(per_sample, per_sample.transpose(0, 2, 1)))

    sq_norms = np.diag(gram).copy()
    energy = np.square(x64).sum(axis=(0, 2, 3))
    active = _varies(sq_norms, energy)
    norms = np.where(active, np.sqrt(np.where(active, sq_norms, 1.0)), 1.0)

    values = gram / np.outer(norms, norms)
    values[~active, :] = 0.0
    values[:, ~active] = 0.0
    values[np.diag_indices(d)] = np.where(active, 1.0, 0.0)

    def _backward(g):
        g = np.asarray(g, dtype=np.float64).copy()
        g[np.diag_indices(d)] = 0.0
        g[~active, :] = 0.0
        g[:, ~active] = 0.0
        flat = deviations.transpose(1, 0, 2, 3).reshape(d, -1)
        unit = flat / norms[:, None]
        unit[~active] = 0.0
        d_unit = (g + g.T) @ unit
        d_flat = (d_unit - (d_unit * unit).sum(axis=1, keepdims=True) * unit) / norms[:, None]
        d_flat[~active] = 0.0
        d_dev = d_flat.reshape(d, b, h, w).transpose(1, 0, 2, 3)
        return ((d_dev - d_dev.mean(axis=0, keepdims=True)).astype(x.data.dtype),)

    out = record_op(f"correlation_matrix[stage {acts.stage_id}]", values, (x,), _backward)
    zero_variance = frozenset(int(i) for i in np.flatnonzero(~active))
    return CorrelationMatrix(values=out, zero_variance_channels=zero_variance, stage_id=acts.stage_id)


def mean_abs_offdiag(F: Union[CorrelationMatrix, np.ndarray]) -> float:
    """Mean of |F_ij| over i != j. Reporting statistic, not differentiable."""
    values = F.array() if isinstance(F, CorrelationMatrix) else np.asarray(F, dtype=np.float64)
    d = values.shape[0]
    if values.ndim != 2 or values.shape[1] != d:
        raise ShapeError(f"mean_abs_offdiag expects a square matrix, got {values.shape}")
    if d < 2:
        raise ShapeError(f"mean_abs_offdiag needs d >= 2, got {d}")
    off = ~np.eye(d, dtype=bool)
    return float(np.abs(values[off]).mean())
