"""Models package initialization"""

from src.models.spec_schema import (
    BlockKind,
    DatasetName,
    BlockSpec,
    StageSpec,
    ClassifierSpec,
    ModelSpec,
    TrainConfig,
    MetricsRecord,
    AugmentationPolicy,
    DatasetSelection,
    ExperimentConfig,
)

__all__ = [
    "BlockKind",
    "DatasetName",
    "BlockSpec",
    "StageSpec",
    "ClassifierSpec",
    "ModelSpec",
    "TrainConfig",
    "MetricsRecord",
    "AugmentationPolicy",
    "DatasetSelection",
    "ExperimentConfig",
]
