"""Training package initialization"""

from src.training.optimizer import OptimizerState, sgd_step, lr_at
from src.training.trainer import (
    StageStatistics,
    evaluate,
    resolve_taps,
    stage_statistics,
    train,
)

__all__ = [
    "OptimizerState",
    "sgd_step",
    "lr_at",
    "StageStatistics",
    "evaluate",
    "resolve_taps",
    "stage_statistics",
    "train",
]
