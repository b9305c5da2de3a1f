"""Linear-Gaussian description of a continuously monitored bosonic system.

Phase-space coordinates are ordered ``[x_1 … x_M, p_1 … p_M]`` with
``sigma = [[0, I], [-I, 0]]``. Covariances follow the convention
``V_jk = <{Δr_j, Δr_k}>`` so the vacuum has ``V = I``. A measurement channel
``C = (A + iB) r`` produces the current ``dY = 2 A r dt + dW``.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from qretro.errors import NonPositiveDiffusion
from qretro.models.reports import CheckResult, Severity, ValidationReport

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
PSD_FLOOR = -1e-10


def symplectic_form(n_modes: int) -> np.ndarray:
    """Canonical commutation form for the ``[x…, p…]`` ordering."""
    eye = np.eye(n_modes)
    zero = np.zeros((n_modes, n_modes))
    return np.block([[zero, eye], [-eye, zero]])


def _readonly(values, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


def decompose_lambda(lambda_: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split ΛᴴΛ into its symmetric real part Δ and skew imaginary part Ω."""
    lambda_ = np.asarray(lambda_, dtype=complex)
    product = lambda_.conj().T @ lambda_
    delta = 0.5 * (product.real + product.real.T)
    omega = 0.5 * (product.imag - product.imag.T)
    return delta, omega


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Immutable matrices (σ, H, h, Λ, A, B) of one monitored linear system."""

    n_modes: int
    sigma: np.ndarray
    h_matrix: np.ndarray
    h_linear: np.ndarray
    lambda_: np.ndarray
    a_meas: np.ndarray
    b_meas: np.ndarray
    channel_labels: tuple[str, ...] = ()
    coarse_grained: bool = False
    name: str = ""
    delta: np.ndarray = field(init=False, repr=False)
    omega: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        dim = 2 * self.n_modes
        if self.n_modes < 1:
            raise ValueError(f"n_modes must be positive, got {self.n_modes}")

        sigma = _readonly(self.sigma, float)
        h_matrix = _readonly(self.h_matrix, float)
        h_linear = _readonly(self.h_linear, float).reshape(-1)
        lambda_ = _readonly(np.atleast_2d(self.lambda_), complex).reshape(-1, dim)
        a_meas = _readonly(np.atleast_2d(self.a_meas), float).reshape(-1, dim)
        b_meas = _readonly(np.atleast_2d(self.b_meas), float).reshape(-1, dim)

        if sigma.shape != (dim, dim) or h_matrix.shape != (dim, dim):
            raise ValueError(f"sigma and H must be {dim}x{dim}")
        if h_linear.shape != (dim,):
            raise ValueError(f"h must have length {dim}, got {h_linear.shape}")
        if a_meas.shape != b_meas.shape:
            raise ValueError(f"A {a_meas.shape} and B {b_meas.shape} must have the same shape")

        labels = tuple(self.channel_labels) or tuple(str(k + 1) for k in range(a_meas.shape[0]))
        if len(labels) != a_meas.shape[0]:
            raise ValueError(f"{len(labels)} channel labels for {a_meas.shape[0]} channels")

        delta, omega = decompose_lambda(lambda_)
        delta.setflags(write=False)
        omega.setflags(write=False)

        for name, value in (
            ("sigma", sigma), ("h_matrix", h_matrix), ("h_linear", h_linear),
            ("lambda_", lambda_), ("a_meas", a_meas), ("b_meas", b_meas),
            ("channel_labels", labels), ("delta", delta), ("omega", omega),
        ):
            object.__setattr__(self, name, value)

    @property
    def dim(self) -> int:
        return 2 * self.n_modes

    @property
    def n_jumps(self) -> int:
        return self.lambda_.shape[0]

    @property
    def n_channels(self) -> int:
        return self.a_meas.shape[0]

    @property
    def quadrature_labels(self) -> tuple[str, ...]:
        if self.n_modes == 1:
            return ("x", "p")
        return tuple(f"x{k + 1}" for k in range(self.n_modes)) + tuple(
            f"p{k + 1}" for k in range(self.n_modes)
        )

    @classmethod
    def from_channels(
        cls,
        n_modes: int,
        jumps: Sequence[np.ndarray],
        measurements: Sequence[np.ndarray],
        h_matrix: Optional[np.ndarray] = None,
        h_linear: Optional[np.ndarray] = None,
        sigma: Optional[np.ndarray] = None,
        channel_labels: Sequence[str] = (),
        coarse_grained: bool = False,
        name: str = "",
    ) -> "LinearModel":
        """Assemble a model from complex jump rows and complex measurement rows."""
        dim = 2 * n_modes
        lambda_ = np.array(jumps, dtype=complex).reshape(-1, dim)
        meas = np.array(measurements, dtype=complex).reshape(-1, dim)
        return cls(
            n_modes=n_modes,
            sigma=symplectic_form(n_modes) if sigma is None else sigma,
            h_matrix=np.zeros((dim, dim)) if h_matrix is None else h_matrix,
            h_linear=np.zeros(dim) if h_linear is None else h_linear,
            lambda_=lambda_,
            a_meas=meas.real,
            b_meas=meas.imag,
            channel_labels=tuple(channel_labels),
            coarse_grained=coarse_grained,
            name=name,
        )

    def measurement_rows(self) -> np.ndarray:
        """Complex rows A + iB, one per channel."""
        return self.a_meas + 1j * self.b_meas


def ladder_row(n_modes: int, mode: int, alpha: complex, beta: complex) -> np.ndarray:
    """Row of coefficients over ``[x…, p…]`` for ``alpha·a_k + beta·a_k†``."""
    row = np.zeros(2 * n_modes, dtype=complex)
    row[mode] = (alpha + beta) / np.sqrt(2.0)
    row[n_modes + mode] = 1j * (alpha - beta) / np.sqrt(2.0)
    return row


def quadrature_rotation(n_modes: int, phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    eye = np.eye(n_modes)
    return np.block([[c * eye, s * eye], [-s * eye, c * eye]])


def rotate_measurement(model: LinearModel, phi: float) -> LinearModel:
    """Measure in the frame rotated by the local-oscillator phase ``phi``."""
    if phi == 0.0:
        return model
    rows = model.measurement_rows() @ quadrature_rotation(model.n_modes, phi)
    return dataclasses.replace(model, a_meas=rows.real, b_meas=rows.imag)


def drift_matrix(model: LinearModel) -> np.ndarray:
    """Q = σ(H + Ω)."""
    return model.sigma @ (model.h_matrix + model.omega)


def diffusion_matrix(model: LinearModel, check: bool = True) -> np.ndarray:
    """D = 2σ(Δ − BᵀB)σᵀ, symmetrized."""
    inner = model.delta - model.b_meas.T @ model.b_meas
    diffusion = 2.0 * model.sigma @ inner @ model.sigma.T
    diffusion = 0.5 * (diffusion + diffusion.T)
    if check:
        min_eig = float(np.linalg.eigvalsh(diffusion).min())
        if min_eig < PSD_FLOOR:
            raise NonPositiveDiffusion(min_eig)
    return diffusion


def _relative_asymmetry(matrix: np.ndarray, sign: float = 1.0) -> float:
    scale = 1.0 + float(np.abs(matrix).max(initial=0.0))
    return float(np.abs(matrix - sign * matrix.T).max(initial=0.0)) / scale


def validate_model(model: LinearModel) -> ValidationReport:
    """Run every structural invariant and report the offending magnitudes."""
    checks: list[CheckResult] = []

    def add(name: str, passed: bool, magnitude: float, detail: str, severity=Severity.ERROR):
        checks.append(
            CheckResult(name=name, passed=passed, severity=severity, magnitude=magnitude, detail=detail)
        )

    skew = _relative_asymmetry(model.sigma, sign=-1.0)
    add("sigma_skew", skew <= SYMMETRY_TOL, skew, "relative |σ + σᵀ|")

    sigma_det = float(abs(np.linalg.det(model.sigma)))
    add("sigma_invertible", sigma_det > SYMMETRY_TOL, sigma_det, "|det σ|")

    asym = _relative_asymmetry(model.h_matrix)
    add("h_symmetric", asym <= SYMMETRY_TOL, asym, "relative |H − Hᵀ|")

    delta_min = float(np.linalg.eigvalsh(model.delta).min())
    add("delta_psd", delta_min >= PSD_FLOOR, delta_min, "min eigenvalue of Δ")

    gram = model.delta + 1j * model.omega
    gram_min = float(np.linalg.eigvalsh(gram).min())
    add("lambda_gram_psd", gram_min >= PSD_FLOOR, gram_min, "min eigenvalue of Δ + iΩ")

    rows = model.measurement_rows()
    info = gram - rows.conj().T @ rows
    info_min = float(np.linalg.eigvalsh(0.5 * (info + info.conj().T)).min())
    severity = Severity.WARNING if model.coarse_grained else Severity.ERROR
    add(
        "information_constraint",
        info_min >= PSD_FLOOR,
        info_min,
        "min eigenvalue of (Δ + iΩ) − (A + iB)ᴴ(A + iB)",
        severity=severity,
    )
    if model.coarse_grained and info_min < PSD_FLOOR:
        logger.warning(
            "coarse-grained model %r fails the channel-count information check (%.3e); "
            "the diffusion check is binding",
            model.name, info_min,
        )

    diffusion = diffusion_matrix(model, check=False)
    diff_min = float(np.linalg.eigvalsh(diffusion).min())
    add("diffusion_psd", diff_min >= PSD_FLOOR, diff_min, "min eigenvalue of D")

    return ValidationReport(model_name=model.name, checks=checks)


class Interaction(str, Enum):
    BEAM_SPLITTER = "beam_splitter"
    TWO_MODE_SQUEEZING = "two_mode_squeezing"


class Detection(str, Enum):
    HOMODYNE = "homodyne"
    HETERODYNE = "heterodyne"


def decaying_cavity(
    gamma: float = 1.0,
    eta: float = 1.0,
    interaction: Interaction = Interaction.BEAM_SPLITTER,
    detection: Detection = Detection.HOMODYNE,
    phi: float = 0.0,
) -> LinearModel:
    """Single cavity mode leaking into a monitored output field.

    The beam-splitter coupling damps the mode through ``√Γ a`` and the detector
    sees ``√(ηΓ) a``. The two-mode-squeezing coupling replaces ``a`` by ``a†`` in
    both places. Heterodyne detection splits the output into two homodyne arms
    of half the efficiency at quadrature phases 0 and π/2.
    """
    interaction = Interaction(interaction)
    detection = Detection(detection)
    rate = np.sqrt(gamma)
    creation = interaction is Interaction.TWO_MODE_SQUEEZING

    def channel(weight: complex) -> np.ndarray:
        return ladder_row(1, 0, 0.0, weight) if creation else ladder_row(1, 0, weight, 0.0)

    if detection is Detection.HOMODYNE:
        measurements = [channel(np.sqrt(eta * gamma))]
        labels = ("c",)
    else:
        arm = np.sqrt(eta * gamma / 2.0)
        quarter = 1j if creation else -1j
        measurements = [channel(arm), channel(quarter * arm)]
        labels = ("c", "s")

    model = LinearModel.from_channels(
        n_modes=1,
        jumps=[channel(rate)],
        measurements=measurements,
        channel_labels=labels,
        name=f"cavity-{interaction.value}-{detection.value}",
    )
    return rotate_measurement(model, phi)
