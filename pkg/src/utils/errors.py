"""
Exception hierarchy for the decorrelation toolkit.

Every error raised by the library derives from DecorrError and from the
builtin exception it refines, so callers may catch either.
"""

from typing import Optional


class DecorrError(Exception):
    """Base class for all toolkit errors"""


class ShapeError(DecorrError, ValueError):
    """Operand shapes are incompatible with an operation"""


class NumericError(DecorrError, ArithmeticError):
    """A forward computation produced NaN/Inf or divided by exact zero"""

    def __init__(self, message: str, op: Optional[str] = None):
        super().__init__(message)
        self.op = op


class TapeError(DecorrError, RuntimeError):
    """Misuse of the computation tape (consumed tape, non-scalar loss)"""


class ConfigError(DecorrError, ValueError):
    """Invalid model, training or experiment configuration"""


class DataError(DecorrError, ValueError):
    """Dataset files missing, truncated or malformed"""


class FormatError(DecorrError, ValueError):
    """Malformed checkpoint or feature dump container"""


class TrainingAborted(NumericError):
    """Training hit a non-finite loss term"""

    def __init__(self, message: str, epoch: int, step: int, term: str):
        super().__init__(message, op=term)
        self.epoch = epoch
        self.step = step
        self.term = term

    def __reduce__(self):
        # Sweep workers send exceptions back through pickle.
        return type(self), (str(self), self.epoch, self.step, self.term)


# CLI exit codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_MISSING_DATA = 3
EXIT_NUMERIC = 4


def exit_code_for(exc: BaseException) -> int:
    """
    Map an exception to the CLI exit code.

    Args:
        exc: Exception raised by a command

    Returns:
        Exit code (never 0)
    """
    from pydantic import ValidationError

    if isinstance(exc, (ConfigError, ValidationError)):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, FileNotFoundError)):
        return EXIT_MISSING_DATA
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    return EXIT_FAILURE
