"""Exceptions: custom exceptions for library"""

from typing import Any, Dict, List, Optional


class PyppivException(Exception):
    """Wrapper for custom pyppiv library exceptions."""

    pass


class PyppivValueError(ValueError, PyppivException):
    """Value Error for the pyppiv library."""


class InvalidOperation(PyppivException):
    """An invalid operation was requested to be performed."""

    pass


class DimensionMismatchError(PyppivValueError):
    """Arrays passed together do not agree in shape."""

    pass


class EmptyResultError(PyppivException):
    """A filtering step left no records; `ledger` records where, when known."""

    def __init__(self, message: str, ledger: Any = None) -> None:
        self.ledger = ledger
        super().__init__(message)


class RankDeficiencyError(PyppivException):
    """A design matrix is not of full column rank."""

    def __init__(self, column: str, message: Optional[str] = None) -> None:
        self.column = column
        super().__init__(message or f"design is rank deficient at column '{column}'")


class ConvergenceError(PyppivException):
    """An iterative fit did not converge; the last iterate is kept on `fit`."""

    def __init__(self, message: str, fit: Any = None) -> None:
        self.fit = fit
        super().__init__(message)


class NestingError(PyppivException):
    """The restricted model fits better than the full model."""

    pass


class ConstructionError(PyppivException):
    """An instrument could not be constructed for a method."""

    def __init__(self, method: str, message: str) -> None:
        self.method = method
        super().__init__(f"{method}: {message}")


class MissingTruePreference(PyppivException):
    """A benchmark needs the simulated preference but the data has none."""

    pass


class InvalidProbability(PyppivValueError):
    """A generated probability was not finite."""

    pass


class NonBracketingError(PyppivException):
    """A calibration target cannot be bracketed by the search interval."""

    pass


class ConfigError(PyppivException):
    """Error when a configuration or column-spec file is invalid."""

    def __init__(self, message: str, diagnostics: Optional[List[str]] = None) -> None:
        self.diagnostics: List[str] = diagnostics or []
        detail = "\n".join(f"  {d}" for d in self.diagnostics)
        super().__init__(f"{message}\n{detail}" if detail else message)


class SchemaError(PyppivException):
    """Error when an input CSV does not follow the expected columns."""

    pass


class ReplicationError(PyppivException):
    """A simulation replication failed outside of method estimation."""

    def __init__(
        self, seed: int, message: str, context: Optional[Dict[str, Any]] = None
    ) -> None:
        self.seed = seed
        self.context = context or {}
        super().__init__(f"replication with seed {seed} failed: {message}")
