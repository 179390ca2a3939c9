"""
Exception hierarchy for the transport solver suite.

Every error raised on purpose by this package derives from KinvError, so
callers (the CLI in particular) can map families of failures to exit codes:
configuration and validation problems vs. numerical solver failures.
"""

from typing import Any


class KinvError(Exception):
    """Base class for all errors raised by the solver suite."""


# -----------------------------------------------------------------------------
# Configuration and validation
# -----------------------------------------------------------------------------


class ConfigError(KinvError, ValueError):
    """Problem config is missing a key, has an ill-typed value, or cannot be parsed."""


class ExpressionSyntaxError(ConfigError):
    """
    Malformed coefficient expression.

    Args:
        message: Human-readable description.
        position: Zero-based character offset of the offending token.
    """

    def __init__(self, message: str, position: int) -> None:
        super().__init__(f"{message} at offset {position}")
        self.position = position


class UnknownNameError(ConfigError):
    """Expression references a variable or function outside the language."""


class UnboundVariableError(KinvError, KeyError):
    """Expression evaluated without a binding for one of its variables."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unbound variable"


class ExpressionDomainError(KinvError, ArithmeticError):
    """Division by zero, sqrt of a negative number, or a non-finite result."""


class ValidationError(KinvError, ValueError):
    """
    Invariant or hypothesis violation.

    Args:
        message: Summary of what failed.
        violations: Optional list of violation records that caused it.
    """

    def __init__(self, message: str, violations: list[Any] | None = None) -> None:
        super().__init__(message)
        self.violations = list(violations or [])


class FieldError(KinvError, ValueError):
    """Grid function has the wrong shape, non-finite entries, or a bad dump header."""


# -----------------------------------------------------------------------------
# Numerical solver failures
# -----------------------------------------------------------------------------


class SolverError(KinvError, RuntimeError):
    """A numerical stage failed to produce a trustworthy result."""


class BlowUpError(SolverError):
    """Forward time march exceeded the blow-up guard."""


class DivergenceError(SolverError):
    """
    Fixed-point iteration residuals kept growing.

    Args:
        message: Summary of the failure.
        report: Iteration report at the time of failure.
    """

    def __init__(self, message: str, report: Any = None) -> None:
        super().__init__(message)
        self.report = report


class NotConvergedError(SolverError):
    """
    Iteration hit its cap before reaching the tolerance.

    Args:
        message: Summary of the failure.
        report: Iteration report with converged=False.
    """

    def __init__(self, message: str, report: Any = None) -> None:
        super().__init__(message)
        self.report = report


class JacobianSolveError(SolverError):
    """Newton step linear system could not be solved (singular or stagnating)."""


class LineSearchError(SolverError):
    """No damping factor above the floor decreased the Newton residual."""


class IllConditionedError(SolverError):
    """Dense discrete inverse map is singular or too ill-conditioned to trust."""
