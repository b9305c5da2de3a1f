from __future__ import annotations

import json
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from qretro.model import LinearModel, symplectic_form


class ComplexMatrix(BaseModel):
    """
    Complex matrix stored as separate real and imaginary row-major arrays.
    """
    re: List[List[float]] = Field(..., description="Real part, one list per row.")
    im: Optional[List[List[float]]] = Field(default=None, description="Imaginary part; zero when omitted.")

    class Config:
        extra = "forbid"
        json_schema_extra = {
            "example": {
                "re": [[0.7071067811865476, 0.0]],
                "im": [[0.0, 0.7071067811865476]],
            }
        }

    @model_validator(mode="after")
    def _same_shape(self) -> "ComplexMatrix":
        if self.im is not None and np.shape(self.re) != np.shape(self.im):
            raise ValueError(f"re {np.shape(self.re)} and im {np.shape(self.im)} differ in shape")
        return self

    def to_array(self) -> np.ndarray:
        real = np.array(self.re, dtype=float)
        if self.im is None:
            return real.astype(complex)
        return real + 1j * np.array(self.im, dtype=float)


class MinimalModelFileMixin:

    MINIMAL_FIELDS = {
        'name',
        'n_modes',
        'coarse_grained',
    }

    def to_minimal_dict(self) -> dict:
        return json.loads(self.model_dump_json(include=self.MINIMAL_FIELDS))


class ModelFile(BaseModel, MinimalModelFileMixin):
    """
    JSON form of a LinearModel. Matrices are row-major arrays of arrays over
    the phase-space ordering [x_1 … x_M, p_1 … p_M].
    """
    name: str = Field(default="", description="Free-form model name.")
    n_modes: int = Field(..., gt=0, description="Number of bosonic modes M.")
    sigma: Optional[List[List[float]]] = Field(
        default=None, description="Commutation form σ; the canonical [[0, I], [-I, 0]] when omitted."
    )
    h_matrix: List[List[float]] = Field(..., alias="H", description="Symmetric Hamiltonian quadratic form.")
    h_linear: Optional[List[float]] = Field(default=None, alias="h", description="Linear drive; zero when omitted.")
    lambda_: ComplexMatrix = Field(..., alias="Lambda", description="Jump-operator coefficients, one row per jump.")
    a_meas: List[List[float]] = Field(..., alias="A", description="Measurement matrix A, one row per channel.")
    b_meas: List[List[float]] = Field(..., alias="B", description="Measurement matrix B, one row per channel.")
    channel_labels: Optional[List[str]] = Field(default=None, description="Names of the measurement channels.")
    coarse_grained: bool = Field(
        default=False, description="Channels come from coarse-graining; the information check only warns."
    )

    class Config:
        extra = "forbid"
        populate_by_name = True
        json_schema_extra = {
            "example": {
                "name": "cavity-beam_splitter-homodyne",
                "n_modes": 1,
                "H": [[0.0, 0.0], [0.0, 0.0]],
                "Lambda": {"re": [[0.7071067811865476, 0.0]], "im": [[0.0, 0.7071067811865476]]},
                "A": [[0.6324555320336759, 0.0]],
                "B": [[0.0, 0.6324555320336759]],
                "channel_labels": ["c"],
                "coarse_grained": False,
            }
        }

    def to_linear_model(self) -> LinearModel:
        dim = 2 * self.n_modes
        a_meas = np.array(self.a_meas, dtype=float).reshape(-1, dim)
        return LinearModel(
            n_modes=self.n_modes,
            sigma=symplectic_form(self.n_modes) if self.sigma is None else np.array(self.sigma, dtype=float),
            h_matrix=np.array(self.h_matrix, dtype=float),
            h_linear=np.zeros(dim) if self.h_linear is None else np.array(self.h_linear, dtype=float),
            lambda_=self.lambda_.to_array(),
            a_meas=a_meas,
            b_meas=np.array(self.b_meas, dtype=float).reshape(-1, dim),
            channel_labels=tuple(self.channel_labels or ()),
            coarse_grained=self.coarse_grained,
            name=self.name,
        )

    @classmethod
    def from_linear_model(cls, model: LinearModel) -> "ModelFile":
        return cls(
            name=model.name,
            n_modes=model.n_modes,
            sigma=model.sigma.tolist(),
            H=model.h_matrix.tolist(),
            h=model.h_linear.tolist(),
            Lambda=ComplexMatrix(re=model.lambda_.real.tolist(), im=model.lambda_.imag.tolist()),
            A=model.a_meas.tolist(),
            B=model.b_meas.tolist(),
            channel_labels=list(model.channel_labels),
            coarse_grained=model.coarse_grained,
        )


if __name__ == "__main__":
    example_dict = ModelFile.model_json_schema().get("example", {})
    model_file_instance = ModelFile(**example_dict)
    print("----begin example: model-file----")
    print(model_file_instance.model_dump_json(indent=2, by_alias=True))
    print("----begin minmal example: model-file----")
    print(json.dumps(model_file_instance.to_minimal_dict(), indent=2))

    print("----end: model-file----")
