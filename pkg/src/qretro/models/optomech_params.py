from __future__ import annotations

import json
import math
from enum import Enum

from pydantic import BaseModel, Field


class Scheme(str, Enum):
    RESONANT_RESONANT = "resonant_resonant"
    RESONANT_RED = "resonant_red"
    RESONANT_BLUE = "resonant_blue"
    DETUNED_RED = "detuned_red"
    DETUNED_BLUE = "detuned_blue"

    @property
    def detuned(self) -> bool:
        return self in (Scheme.DETUNED_RED, Scheme.DETUNED_BLUE)

    @property
    def sideband(self) -> str:
        """Which sideband the local oscillator sits on: 'carrier', 'red' or 'blue'."""
        if self is Scheme.RESONANT_RESONANT:
            return "carrier"
        return "red" if self in (Scheme.RESONANT_RED, Scheme.DETUNED_RED) else "blue"


class MinimalOptomechParamsMixin:

    # the handful of numbers that set the cooperativities and the detection loss
    MINIMAL_FIELDS = {
        'omega_m',
        'kappa',
        'g',
        'gamma',
        'nbar',
        'delta_c',
        'eta',
    }

    def to_minimal_dict(self) -> dict:
        return json.loads(self.model_dump_json(include=self.MINIMAL_FIELDS))


class OptomechParams(BaseModel, MinimalOptomechParamsMixin):
    """
    Physical parameters of a driven optomechanical cavity with one mechanical
    mode, in units where all rates share one time unit.
    """
    omega_m: float = Field(..., gt=0, description="Mechanical frequency Ω_m.")
    kappa: float = Field(..., gt=0, description="Cavity FWHM decay rate κ.")
    g: float = Field(..., ge=0, description="Cavity-enhanced optomechanical coupling.")
    gamma: float = Field(..., gt=0, description="Mechanical FWHM damping rate γ.")
    nbar: float = Field(default=0.0, ge=0, description="Mean phonon number of the mechanical bath.")
    delta_c: float = Field(default=0.0, description="Drive detuning ω₀ − ω_c.")
    delta_lo: float = Field(
        default=0.0,
        description="LO detuning ω_lo − ω₀; informational, the scheme fixes the detected frequency.",
    )
    phi_lo: float = Field(default=0.0, description="Local-oscillator phase; rotates the measured quadrature frame.")
    eta: float = Field(default=1.0, ge=0, le=1, description="Detection efficiency.")

    class Config:
        extra = "forbid"
        json_schema_extra = {
            "example": {
                "omega_m": 1.0,
                "kappa": 10.0,
                "g": 0.161245154965971,
                "gamma": 0.01,
                "nbar": 0.0,
                "delta_c": 0.0,
                "delta_lo": 0.0,
                "phi_lo": 0.0,
                "eta": 1.0,
            }
        }

    @property
    def mechanical_quality(self) -> float:
        return self.omega_m / self.gamma

    @classmethod
    def for_cooperativity(
        cls,
        c: float,
        nbar: float = 0.0,
        eta: float = 1.0,
        omega_m: float = 1.0,
        kappa: float = 10.0,
        gamma: float = 1e-2,
        delta_c: float = 0.0,
        phi_lo: float = 0.0,
    ) -> "OptomechParams":
        """Pick g so that the resonant-drive cooperativity C = Γ/γ equals ``c``."""
        if c < 0:
            raise ValueError(f"cooperativity must be non-negative, got {c}")
        g = math.sqrt(c * gamma * ((kappa / 2.0) ** 2 + omega_m ** 2) / kappa)
        return cls(
            omega_m=omega_m, kappa=kappa, g=g, gamma=gamma, nbar=nbar,
            delta_c=delta_c, phi_lo=phi_lo, eta=eta,
        )


if __name__ == "__main__":
    example_dict = OptomechParams.model_json_schema().get("example", {})
    params_instance = OptomechParams(**example_dict)
    print("----begin example: optomech-params----")
    print(params_instance.model_dump_json(indent=2))
    print("----begin minmal example: optomech-params----")
    print(json.dumps(params_instance.to_minimal_dict(), indent=2))

    print("----end: optomech-params----")
