"""Exception hierarchy shared by the solver, diagnostics and CLI."""

from typing import Any


class MoistPEError(Exception):
    """Base error. ``exit_code`` is what the CLI returns when it escapes."""

    exit_code = 1

    def __init__(self, message: str, **detail: Any) -> None:
        super().__init__(message)
        self.message = message
        self.detail = detail

    def summary(self) -> dict[str, Any]:
        return {"error": type(self).__name__, "message": self.message, **self.detail}


class GridSizingError(MoistPEError, ValueError):
    """Truncation or node counts violate the transform bounds."""

    exit_code = 2


class GaugeError(MoistPEError):
    """Poisson right-hand side has a mean beyond tolerance."""

    exit_code = 3


class ColumnDomainError(MoistPEError, ValueError):
    """Vertical coordinate or pressure parameters out of range."""

    exit_code = 2


class BoundaryConditionError(MoistPEError, ValueError):
    """Invalid boundary closure (e.g. negative Robin coefficient)."""

    exit_code = 2


class NumericalBlowupError(MoistPEError):
    """Non-finite values in a tendency term."""

    exit_code = 4

    def __init__(self, term: str, step: int | None = None, time: float | None = None) -> None:
        super().__init__(f"non-finite values in term '{term}'", term=term, step=step, time=time)
        self.term = term
        self.step = step


class ImplicitSolveError(MoistPEError):
    """Banded implicit solve did not reach the requested residual."""

    exit_code = 4


class EigenSolverError(MoistPEError):
    """Vertical eigenproblem failed."""

    exit_code = 4


class PreconditionViolation(MoistPEError):
    """Inputs are outside the space an identity or operation assumes."""

    exit_code = 5


class ModeRangeError(MoistPEError, ValueError):
    """Projector mode count outside [0, mode count]."""

    exit_code = 2


class ConfigError(MoistPEError, ValueError):
    """Invalid configuration entry, reported with key and line."""

    exit_code = 2

    def __init__(self, message: str, key: str | None = None, line: int | None = None) -> None:
        where = f" (key '{key}'" + (f", line {line})" if line is not None else ")") if key else ""
        super().__init__(message + where, key=key, line=line)
        self.key = key
        self.line = line


class SnapshotFormatError(MoistPEError, ValueError):
    """Corrupt header, version mismatch or truncated payload."""

    exit_code = 6


__all__ = [
    "MoistPEError",
    "GridSizingError",
    "GaugeError",
    "ColumnDomainError",
    "BoundaryConditionError",
    "NumericalBlowupError",
    "ImplicitSolveError",
    "EigenSolverError",
    "PreconditionViolation",
    "ModeRangeError",
    "ConfigError",
    "SnapshotFormatError",
]
