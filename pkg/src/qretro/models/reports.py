from __future__ import annotations

import json
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


class CheckResult(BaseModel):
    """
    Outcome of one invariant or acceptance check.
    """
    name: str = Field(..., description="Identifier of the check.")
    passed: bool = Field(..., description="Whether the check held.")
    severity: Severity = Field(default=Severity.ERROR, description="Warnings never fail a report.")
    magnitude: Optional[float] = Field(
        default=None,
        description="Offending eigenvalue, asymmetry or relative error, whichever the check measures."
    )
    detail: str = Field(default="", description="Human-readable description of what was measured.")
    seconds: Optional[float] = Field(default=None, ge=0, description="Wall time spent on the check.")

    class Config:
        json_schema_extra = {
            "example": {
                "name": "information_constraint",
                "passed": True,
                "severity": "error",
                "magnitude": 0.0,
                "detail": "min eigenvalue of (Δ + iΩ) − (A + iB)ᴴ(A + iB)",
                "seconds": None,
            }
        }


class MinimalReportMixin:

    MINIMAL_FIELDS = {
        'passed',
        'n_failed',
    }

    def to_minimal_dict(self) -> dict:
        return json.loads(self.model_dump_json(include=self.MINIMAL_FIELDS))


class ValidationReport(BaseModel):
    """
    Per-invariant validation of a LinearModel.
    """
    model_name: str = Field(default="", description="Name of the validated model.")
    checks: List[CheckResult] = Field(default_factory=list, description="One entry per invariant.")

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.severity is Severity.ERROR)

    @property
    def n_failed(self) -> int:
        return sum(1 for c in self.checks if not c.passed and c.severity is Severity.ERROR)

    def failures(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def to_minimal_dict(self) -> dict:
        return {"model_name": self.model_name, "passed": self.passed, "n_failed": self.n_failed}

    class Config:
        json_schema_extra = {
            "example": {
                "model_name": "cavity-beam_splitter-homodyne",
                "checks": [
                    {"name": "sigma_skew", "passed": True, "severity": "error", "magnitude": 0.0,
                     "detail": "relative |σ + σᵀ|"},
                    {"name": "diffusion_psd", "passed": True, "severity": "error", "magnitude": 0.0,
                     "detail": "min eigenvalue of D"},
                ],
            }
        }


class VerifyReport(BaseModel, MinimalReportMixin):
    """
    Result of the acceptance suite run by `qretro verify`.
    """
    quick: bool = Field(default=False, description="Whether the reduced grid was used.")
    checks: List[CheckResult] = Field(default_factory=list, description="One entry per acceptance check.")
    passed: bool = Field(default=True, description="True when every error-level check passed.")
    n_failed: int = Field(default=0, ge=0, description="Number of failed error-level checks.")

    @classmethod
    def from_checks(cls, checks: List[CheckResult], quick: bool) -> "VerifyReport":
        failed = [c for c in checks if not c.passed and c.severity is Severity.ERROR]
        return cls(quick=quick, checks=checks, passed=not failed, n_failed=len(failed))

    class Config:
        json_schema_extra = {
            "example": {
                "quick": True,
                "checks": [
                    {"name": "cavity_forward", "passed": True, "severity": "error",
                     "magnitude": 1.1e-16, "detail": "max |V − I|", "seconds": 0.01},
                ],
                "passed": True,
                "n_failed": 0,
            }
        }


class SteadyStateReport(BaseModel):
    """
    JSON form of a steady-state covariance solution.
    """
    model_name: str = Field(default="", description="Name of the model the solution belongs to.")
    direction: str = Field(..., description="'forward' for states, 'backward' for effects.")
    converged: bool = Field(..., description="Whether the retrodictable block converged.")
    divergent: List[str] = Field(default_factory=list, description="Quadratures whose variance diverges.")
    v: List[List[Optional[float]]] = Field(..., description="Covariance; divergent diagonal entries are null.")
    m: List[List[Optional[float]]] = Field(..., description="Conditional drift matrix.")
    eigen_real_parts: List[Optional[float]] = Field(..., description="Real parts of the drift eigenvalues.")
    purity: Optional[float] = Field(default=None, description="1/√det V, null when a quadrature diverges.")
    residual: float = Field(..., ge=0, description="Frobenius norm of the Riccati right-hand side.")

    class Config:
        json_schema_extra = {
            "example": {
                "model_name": "optomech-resonant_resonant",
                "direction": "forward",
                "converged": True,
                "divergent": [],
                "v": [[1.0, 0.0], [0.0, 1.0]],
                "m": [[-2.5, 0.0], [0.0, -2.5]],
                "eigen_real_parts": [-2.5, -2.5],
                "purity": 1.0,
                "residual": 0.0,
            }
        }


if __name__ == "__main__":
    example_dict = VerifyReport.model_json_schema().get("example", {})
    report_instance = VerifyReport(**example_dict)
    print("----begin example: verify-report----")
    print(report_instance.model_dump_json(indent=2))
    print("----begin minmal example: verify-report----")
    print(json.dumps(report_instance.to_minimal_dict(), indent=2))

    print("----end: verify-report----")
