"""Experiments package initialization"""

from src.experiments.config_loader import (
    RESOLVED_CONFIG_NAME,
    describe_validation_error,
    load_experiment_config,
    resolved_json,
    with_updates,
    write_resolved_config,
)
from src.experiments.runner import (
    DumpOutcome,
    RunOutcome,
    cmd_corr_report,
    cmd_dump_features,
    cmd_eval,
    cmd_lambda_sweep,
    cmd_train,
    experiment_for_checkpoint,
    load_datasets,
    load_trained,
)

__all__ = [
    "RESOLVED_CONFIG_NAME",
    "describe_validation_error",
    "load_experiment_config",
    "resolved_json",
    "with_updates",
    "write_resolved_config",
    "DumpOutcome",
    "RunOutcome",
    "cmd_corr_report",
    "cmd_dump_features",
    "cmd_eval",
    "cmd_lambda_sweep",
    "cmd_train",
    "experiment_for_checkpoint",
    "load_datasets",
    "load_trained",
]
