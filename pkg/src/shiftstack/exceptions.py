"""Exception types shared across the package."""

from __future__ import annotations


class ShiftstackError(Exception):
    """Base class for all library-specific errors."""


class DimensionMismatchError(ShiftstackError, ValueError):
    """Array shapes do not line up; the message names the offending piece."""


class DegenerateDataError(ShiftstackError, ValueError):
    """Input data cannot support the requested operation (ties, constants, ...)."""


class InfeasibleProblemError(ShiftstackError):
    """Constrained problem has an empty feasible set (detected in phase 1)."""


class IterationLimitError(ShiftstackError):
    """Iterative solver hit its cap; carries the best iterate found so far."""

    def __init__(self, message: str, best_iterate=None):
        super().__init__(message)
        self.best_iterate = best_iterate


class TrainingDivergedError(ShiftstackError):
    """Adversarial training produced a non-finite or exploding loss."""

    def __init__(self, message: str, epoch: int, history: list):
        super().__init__(message)
        self.epoch = epoch
        self.history = history


class ConfigError(ShiftstackError, ValueError):
    """Invalid or unknown configuration keys/values."""
