"""Exception hierarchy shared by the numerics, the runner and the API."""

from typing import Any, Optional


class NikodymError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(NikodymError, ValueError):
    pass


class InvalidGridError(NikodymError, ValueError):
    pass


class DegenerateCurveError(NikodymError):
    def __init__(self, message: str, order: Optional[int] = None):
        super().__init__(message)
        self.order = order


class CalibrationError(NikodymError):
    def __init__(self, message: str, worst_point: Any = None):
        super().__init__(message)
        self.worst_point = worst_point


class ConfigurationError(NikodymError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class InvalidStrategyError(NikodymError, ValueError):
    pass


class InsufficientDataError(NikodymError, ValueError):
    pass


class StageFailure(NikodymError):
    def __init__(self, stage: str, message: str = ""):
        super().__init__(f"stage '{stage}' failed" + (f": {message}" if message else ""))
        self.stage = stage
