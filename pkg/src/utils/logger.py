"""
Logging utilities for the decorrelation toolkit.

Provides structured logging with JSON formatting. Records go to stderr so
tables and CSV paths printed by the CLI on stdout stay machine-readable.
"""

import logging
import sys
from typing import Any, Dict, Mapping, Optional
from datetime import datetime, timezone
from pythonjsonlogger import jsonlogger

from src.utils.config import config


class CustomJsonFormatter(jsonlogger.JsonFormatter):
    """Custom JSON formatter with timestamp"""

    def add_fields(self, log_record, record, message_dict):
        super(CustomJsonFormatter, self).add_fields(log_record, record, message_dict)
        log_record['timestamp'] = datetime.now(timezone.utc).isoformat()
        log_record['level'] = record.levelname
        log_record['logger'] = record.name


def setup_logger(
    name: str,
    level: str = "INFO",
    json_format: bool = True
) -> logging.Logger:
    """
    Set up a logger with appropriate formatting.

    Args:
        name: Logger name
        level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        json_format: Use JSON formatting if True

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, level.upper()))

    # Remove existing handlers
    logger.handlers = []

    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(getattr(logging, level.upper()))

    if json_format:
        formatter = CustomJsonFormatter(
            '%(timestamp)s %(level)s %(name)s %(message)s'
        )
    else:
        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )

    handler.setFormatter(formatter)
    logger.addHandler(handler)
    logger.propagate = False

    return logger


def get_logger(module_name: str) -> logging.Logger:
    """Child logger of the toolkit logger, sharing its handler"""
    return logging.getLogger(f"decorr.{module_name}")


# Create default logger
logger = setup_logger("decorr", config.app.log_level, config.app.log_json)


def _rounded(values: Mapping[Any, float]) -> Dict[str, float]:
    return {str(k): round(float(v), 6) for k, v in values.items()}


def log_run_start(
    run_id: str,
    model: str,
    dataset: str,
    lambda_: float,
    seed: int,
    epochs: int,
    logger_instance: Optional[logging.Logger] = None
):
    """Log training run start"""
    log = logger_instance or logger
    log.info(
        f"Run {run_id} started",
        extra={
            "run_id": run_id,
            "model": model,
            "dataset": dataset,
            "lambda": lambda_,
            "seed": seed,
            "epochs": epochs,
            "event_type": "run_start"
        }
    )


def log_epoch_metrics(
    run_id: str,
    epoch: int,
    split: str,
    softmax_loss: float,
    total_loss: float,
    accuracy: float,
    mean_abs_corr: Mapping[int, float],
    wall_seconds: float,
    logger_instance: Optional[logging.Logger] = None
):
    """Log one MetricsRecord"""
    log = logger_instance or logger
    log.info(
        f"[{split}] epoch {epoch} acc={accuracy:.4f} loss={total_loss:.4f}",
        extra={
            "run_id": run_id,
            "epoch": epoch,
            "split": split,
            "softmax_loss": round(softmax_loss, 6),
            "total_loss": round(total_loss, 6),
            "accuracy": round(accuracy, 6),
            "mean_abs_corr": _rounded(mean_abs_corr),
            "wall_seconds": round(wall_seconds, 3),
            "event_type": "epoch_metrics"
        }
    )


def log_checkpoint_save(
    run_id: str,
    path: str,
    parameter_count: int,
    logger_instance: Optional[logging.Logger] = None
):
    """Log checkpoint save event"""
    log = logger_instance or logger
    log.info(
        "Checkpoint saved",
        extra={
            "run_id": run_id,
            "path": path,
            "parameter_count": parameter_count,
            "event_type": "checkpoint_save"
        }
    )


def log_artifact_written(
    path: str,
    kind: str,
    logger_instance: Optional[logging.Logger] = None
):
    """Log artifact write"""
    log = logger_instance or logger
    log.info(
        f"Wrote {kind}: {path}",
        extra={"path": path, "kind": kind, "event_type": "artifact_written"}
    )


def log_sweep_entry(
    lambda_: float,
    repeat: int,
    accuracy: float,
    mean_abs_corr: Mapping[int, float],
    logger_instance: Optional[logging.Logger] = None
):
    """Log the outcome of one lambda-sweep entry"""
    log = logger_instance or logger
    log.info(
        f"Sweep entry lambda={lambda_:g} repeat={repeat} acc={accuracy:.4f}",
        extra={
            "lambda": lambda_,
            "repeat": repeat,
            "accuracy": round(accuracy, 6),
            "mean_abs_corr": _rounded(mean_abs_corr),
            "event_type": "sweep_entry"
        }
    )


def log_error(
    command: str,
    error_type: str,
    error_message: str,
    exit_code: Optional[int] = None,
    logger_instance: Optional[logging.Logger] = None
):
    """Log error event"""
    log = logger_instance or logger
    extra = {
        "command": command,
        "error_type": error_type,
        "error_message": error_message,
        "event_type": "error"
    }
    if exit_code is not None:
        extra["exit_code"] = exit_code

    log.error("Error occurred", extra=extra)
