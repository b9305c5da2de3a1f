"""Exception hierarchy shared by the library and the CLI."""
from __future__ import annotations

from typing import Any, Optional, Sequence


class QretroError(Exception):
    """Root of every error raised on purpose by qretro."""


class ModelFileError(QretroError, ValueError):
    """A JSON input could not be parsed or failed schema validation."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class NonPositiveDiffusion(QretroError, ValueError):
    """D has a negative eigenvalue: the measurement is over-counted."""

    def __init__(self, min_eigenvalue: float):
        super().__init__(f"diffusion matrix has eigenvalue {min_eigenvalue:.3e} < 0")
        self.min_eigenvalue = min_eigenvalue


class DivergenceDetected(QretroError, ArithmeticError):
    """A covariance entry left the configured bound during integration."""

    def __init__(self, indices: Sequence[int], time: float, trajectory: Any = None):
        super().__init__(f"covariance diverged in diagonal entries {list(indices)} at t={time:.6g}")
        self.indices = tuple(indices)
        self.time = time
        self.trajectory = trajectory


class NoSteadyState(QretroError, ArithmeticError):
    """The Riccati flow has no finite fixed point on some quadratures."""

    def __init__(self, message: str, divergent: Sequence[int] = (), solution: Any = None):
        super().__init__(message)
        self.divergent = tuple(divergent)
        self.solution = solution


class UnstableUnconditional(QretroError, ArithmeticError):
    """The unconditional drift Q has an eigenvalue with nonnegative real part."""


class StepTooLarge(QretroError, ValueError):
    """The time step is too coarse for the fastest drift rate."""


class NotConverged(QretroError, ValueError):
    """A steady-state solution was required but did not converge."""


class GridMismatch(QretroError, ValueError):
    """A kernel grid does not line up with a measurement record."""


class NonPositiveDeterminant(QretroError, ValueError):
    """A covariance matrix has a non-positive determinant."""


class NotPositiveDefinite(QretroError, ValueError):
    """A matrix that must be symmetric positive definite is not."""


class PureDirection(QretroError, ValueError):
    """A symplectic eigenvalue sits at 1, so the exponent matrix is unbounded."""


class SingularSum(QretroError, ValueError):
    """V_E + V_rho is singular, so the outcome density is undefined."""


class CutoffTooSmall(QretroError, ValueError):
    """The truncated Fock space leaks more than the allowed tail mass."""


class UnstableDrive(QretroError, ValueError):
    """The drive detuning makes the mechanical mode unstable (Γ₊ ≥ Γ₋ + γ)."""
