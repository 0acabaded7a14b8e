"""Decorrelation package initialization"""

from src.decorrelation.correlation import (
    StageActivations,
    CorrelationMatrix,
    ZERO_VARIANCE_RTOL,
    pearson_scalar,
    correlation_matrix,
    mean_abs_offdiag,
)
from src.decorrelation.losses import (
    LossBreakdown,
    mfd_loss,
    softmax_cross_entropy,
    joint_loss,
)

__all__ = [
    "StageActivations",
    "CorrelationMatrix",
    "ZERO_VARIANCE_RTOL",
    "pearson_scalar",
    "correlation_matrix",
    "mean_abs_offdiag",
    "LossBreakdown",
    "mfd_loss",
    "softmax_cross_entropy",
    "joint_loss",
]
