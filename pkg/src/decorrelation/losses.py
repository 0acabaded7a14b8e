"""
Classification loss, decorrelation loss and the joint objective.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.autodiff.tensor import Tensor, no_grad, record_op, tensor_sum
from src.decorrelation.correlation import CorrelationMatrix, StageActivations, correlation_matrix
from src.utils.errors import ConfigError, DataError, ShapeError


@dataclass
class LossBreakdown:
    """Scalar parts of one joint-loss evaluation plus the differentiable objective."""
    softmax_loss: float
    mfd_per_stage: List[Tuple[int, float]]
    lambda_: float
    total: float
    objective: Tensor
    correlations: Dict[int, CorrelationMatrix] = field(default_factory=dict)

    @property
    def mfd_sum(self) -> float:
        return float(sum(value for _, value in self.mfd_per_stage))


def mfd_loss(F: CorrelationMatrix) -> Tensor:
    """Sum of squared off-diagonal coefficients over d(d-1) ordered pairs."""
    d = F.dimension
    if d < 2:
        raise ShapeError(f"mfd_loss needs d >= 2, got {d}")
    off_diagonal = Tensor(1.0 - np.eye(d))
    squared = F.values * F.values
    return tensor_sum(squared * off_diagonal) / float(d * (d - 1))


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """
    Mean over the batch of -log softmax(logits)[label], computed with
    max-subtraction.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [b, classes], got {logits.shape}")
    b, classes = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size != b:
        raise ShapeError(f"{labels.size} labels for a batch of {b}")
    if b < 1:
        raise ShapeError("softmax_cross_entropy needs a non-empty batch")
    if labels.min() < 0 or labels.max() >= classes:
        raise DataError(f"label out of range [0, {classes}): {labels.min()}..{labels.max()}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    rows = np.arange(b)
    loss = -log_probs[rows, labels].mean()

    def _backward(g):
        grad = exp / total
        grad[rows, labels] -= 1.0
        return (grad * (g / b),)

    return record_op("softmax_cross_entropy", np.asarray(loss), (logits,), _backward)


def joint_loss(
    logits: Tensor,
    labels: Sequence[int],
    taps: Sequence[StageActivations],
    lambda_: float,
) -> LossBreakdown:
    """
    Softmax cross-entropy plus lambda times the summed per-stage MFD loss.

    With lambda == 0 the objective is the cross-entropy tensor itself; the
    stage terms are still evaluated off the tape for reporting whenever the
    taps admit a correlation (b >= 2, d >= 2).

    Args:
        logits: Classifier output [b, classes]
        labels: Class index per sample
        taps: Tapped stage activations, one per stage
        lambda_: Balance factor (>= 0)

    Returns:
        LossBreakdown
    """
    if lambda_ < 0:
        raise ConfigError(f"lambda must be >= 0, got {lambda_}")
    ce = softmax_cross_entropy(logits, labels)

    if lambda_ == 0:
        correlations: Dict[int, CorrelationMatrix] = {}
        per_stage: List[Tuple[int, float]] = []
        with no_grad():
            for tap in taps:
                if tap.batch_size < 2 or tap.channels < 2:
                    continue
                F = correlation_matrix(tap)
                correlations[tap.stage_id] = F
                per_stage.append((tap.stage_id, mfd_loss(F).item()))
        return LossBreakdown(
            softmax_loss=ce.item(),
            mfd_per_stage=per_stage,
            lambda_=0.0,
            total=ce.item(),
            objective=ce,
            correlations=correlations,
        )

    if not taps:
        raise ConfigError("lambda > 0 requires at least one tapped stage")

    correlations = {}
    terms = []
    for tap in taps:
        F = correlation_matrix(tap)
        correlations[tap.stage_id] = F
        terms.append((tap.stage_id, mfd_loss(F)))

    penalty = terms[0][1]
    for _, term in terms[1:]:
        penalty = penalty + term
    objective = ce + penalty * float(lambda_)

    return LossBreakdown(
        softmax_loss=ce.item(),
        mfd_per_stage=[(stage_id, term.item()) for stage_id, term in terms],
        lambda_=float(lambda_),
        total=objective.item(),
        objective=objective,
        correlations=correlations,
    )
