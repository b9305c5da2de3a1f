from __future__ import annotations

import json
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, model_validator


class DirectionName(str, Enum):
    FWD = "fwd"
    BWD = "bwd"


class MinimalRunConfigMixin:

    MINIMAL_FIELDS = {
        'dt',
        'duration',
        'seed',
        'ensemble',
    }

    def to_minimal_dict(self) -> dict:
        return json.loads(self.model_dump_json(include=self.MINIMAL_FIELDS))


class RunConfig(BaseModel, MinimalRunConfigMixin):
    """
    Settings for one CLI run. Relative paths are resolved against the
    directory of the config file; command-line flags override every field.
    """
    model: Optional[str] = Field(default=None, description="Path to a model JSON file.")
    scenario: Optional[str] = Field(default=None, description="Path to an optomechanics scenario JSON file.")
    record: Optional[str] = Field(default=None, description="Path to a measurement-record CSV.")
    dt: Optional[float] = Field(default=None, gt=0, description="Time step; derived from the drift when omitted.")
    duration: float = Field(default=10.0, ge=0, description="Length of the simulated record.")
    seed: int = Field(default=0, ge=0, lt=2 ** 64, description="Root seed of the per-trajectory streams.")
    ensemble: int = Field(default=1, ge=1, description="Number of records in an ensemble run.")
    v_large: float = Field(default=1e6, gt=0, description="Isotropic covariance standing in for the identity effect.")
    out: Optional[str] = Field(default=None, description="Output file or directory.")
    initial_means: Optional[List[float]] = Field(default=None, description="Means of the initial state.")
    initial_cov: Optional[List[List[float]]] = Field(
        default=None, description="Covariance of the initial state; the steady state when omitted."
    )
    direction: DirectionName = Field(default=DirectionName.FWD, description="Direction for `steady`.")

    class Config:
        extra = "forbid"
        json_schema_extra = {
            "example": {
                "model": "cavity_bs.json",
                "dt": 0.01,
                "duration": 10.0,
                "seed": 7,
                "ensemble": 1,
                "v_large": 1e6,
                "out": "runs/cavity",
                "initial_means": [2.0, -1.0],
                "initial_cov": [[1.0, 0.0], [0.0, 1.0]],
                "direction": "fwd",
            }
        }

    @model_validator(mode="after")
    def _one_source(self) -> "RunConfig":
        if self.model is not None and self.scenario is not None:
            raise ValueError("give either 'model' or 'scenario', not both")
        return self


if __name__ == "__main__":
    example_dict = RunConfig.model_json_schema().get("example", {})
    run_config_instance = RunConfig(**example_dict)
    print("----begin example: run-config----")
    print(run_config_instance.model_dump_json(indent=2))
    print("----begin minmal example: run-config----")
    print(json.dumps(run_config_instance.to_minimal_dict(), indent=2))

    print("----end: run-config----")
