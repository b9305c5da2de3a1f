from __future__ import annotations

import json

from pydantic import Field, model_validator

from qretro.models.optomech_params import OptomechParams, Scheme


class MinimalScenarioFileMixin:

    MINIMAL_FIELDS = {
        'scheme',
        'nbar',
        'delta_c',
        'eta',
    }

    def to_minimal_dict(self) -> dict:
        return json.loads(self.model_dump_json(include=self.MINIMAL_FIELDS))


class ScenarioFile(MinimalScenarioFileMixin, OptomechParams):
    """
    Optomechanics scenario: physical parameters plus the drive/detection scheme.
    """
    scheme: Scheme = Field(..., description="Drive and local-oscillator configuration.")

    class Config:
        extra = "forbid"
        json_schema_extra = {
            "example": {
                "omega_m": 1.0,
                "kappa": 0.25,
                "g": 0.06373774391990981,
                "gamma": 0.001,
                "nbar": 1.0,
                "delta_c": -1.0,
                "eta": 0.77,
                "scheme": "detuned_blue",
            }
        }

    @model_validator(mode="after")
    def _detuning_matches_scheme(self) -> "ScenarioFile":
        if self.scheme.detuned and self.delta_c == 0.0:
            raise ValueError(f"scheme {self.scheme.value} needs a non-zero delta_c")
        if not self.scheme.detuned and self.delta_c != 0.0:
            raise ValueError(f"scheme {self.scheme.value} drives on resonance; delta_c must be 0")
        return self

    def params(self) -> OptomechParams:
        return OptomechParams(**self.model_dump(exclude={"scheme"}))


if __name__ == "__main__":
    example_dict = ScenarioFile.model_json_schema().get("example", {})
    scenario_instance = ScenarioFile(**example_dict)
    print("----begin example: scenario-file----")
    print(scenario_instance.model_dump_json(indent=2))
    print("----begin minmal example: scenario-file----")
    print(json.dumps(scenario_instance.to_minimal_dict(), indent=2))

    print("----end: scenario-file----")
