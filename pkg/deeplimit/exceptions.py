"""
Exception hierarchy shared by the numerical services and the drivers.
Services raise; drivers catch per unit of work, log, and keep going.
"""
from __future__ import annotations


class DeepLimitError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatchError(DeepLimitError, ValueError):
    """Arrays, paths or parameter sets with incompatible dimensions."""


class NumericalBlowupError(DeepLimitError, FloatingPointError):
    """A state, objective or gradient became non-finite."""


class LineSearchError(DeepLimitError):
    """Armijo backtracking exhausted its budget without sufficient decrease."""


class ConfigError(DeepLimitError):
    """Run configuration could not be parsed or validated."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        super().__init__(message)
        self.key = key
        self.line = line
