"""Utils package initialization"""

from src.utils.config import config
from src.utils.logger import logger, setup_logger, get_logger
from src.utils.errors import (
    DecorrError,
    ShapeError,
    NumericError,
    TapeError,
    ConfigError,
    DataError,
    FormatError,
    TrainingAborted,
    exit_code_for,
)

__all__ = [
    "config",
    "logger",
    "setup_logger",
    "get_logger",
    "DecorrError",
    "ShapeError",
    "NumericError",
    "TapeError",
    "ConfigError",
    "DataError",
    "FormatError",
    "TrainingAborted",
    "exit_code_for",
]
