"""Exceptions raised by the levyrkhs package."""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .hyperselect import BilevelTrace


class LevyRkhsError(Exception):
    """Base class for all levyrkhs errors."""


class ConfigurationError(LevyRkhsError):
    """Error to indicate an invalid configuration or violated precondition."""


class DomainError(LevyRkhsError):
    """Error to indicate an argument outside the domain of a function."""


class InstabilityError(LevyRkhsError):
    """Error to indicate the explicit FPE scheme produced a negative density."""


class SizeError(LevyRkhsError):
    """Error to indicate an input too short for the requested operation."""


class AssemblyError(LevyRkhsError):
    """Error to indicate the regression system cannot be assembled."""


class SplitError(LevyRkhsError):
    """Error to indicate snapshots cannot be split into train and validation."""


class DecompositionError(LevyRkhsError):
    """Error to indicate a matrix decomposition failed."""


class NotPositiveSemidefiniteError(DecompositionError):
    """Error to indicate a matrix has a significantly negative eigenvalue."""


class SolveError(LevyRkhsError):
    """Error to indicate a linear system could not be solved."""


class StateError(LevyRkhsError):
    """Error to indicate an operation was called before its inputs exist."""


class MetricError(LevyRkhsError):
    """Error to indicate a metric is undefined for the given inputs."""


class DivergenceError(LevyRkhsError):
    """Error to indicate the bilevel iteration left the finite range."""

    def __init__(self, message: str, trace: BilevelTrace) -> None:
        """Initialize with the trace recorded up to the failure."""
        super().__init__(message)
        self.trace = trace
