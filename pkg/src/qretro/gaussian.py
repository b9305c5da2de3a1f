"""Gaussian-operator calculus on covariance matrices normalized so the vacuum is I.

A Gaussian operator is written ``exp(−r̂ᵀΓr̂)`` up to displacement and scale.
With ``V = Sᵀ(T⊕T)S`` its symplectic diagonalization, ``Γ = S⁻¹(K⊕K)S⁻ᵀ``
where ``K_k = artanh(1/τ_k)``, i.e. the mode with symplectic eigenvalue τ has
``n̄ + 1 = (τ + 1)/2 = (1 − e^{−2K})⁻¹``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

import numpy as np
from scipy.linalg import block_diag, eigh, schur, sqrtm

from qretro.errors import (
    CutoffTooSmall,
    NonPositiveDeterminant,
    NotPositiveDefinite,
    PureDirection,
    SingularSum,
)
from qretro.model import symplectic_form

logger = logging.getLogger(__name__)

PURE_TOL = 1e-9
PURE_CAP = 23.0
TAIL_MASS = 1e-8
TAIL_FRACTION = 4
HEISENBERG_FLOOR = -1e-10


class GaussianMoments(Protocol):
    means: np.ndarray
    cov: np.ndarray


def purity(cov: np.ndarray) -> float:
    det = float(np.linalg.det(np.asarray(cov, dtype=float)))
    if not det > 0.0:
        raise NonPositiveDeterminant(f"det V = {det:.6g}")
    return 1.0 / math.sqrt(det)


def heisenberg_check(cov: np.ndarray, sigma: Optional[np.ndarray] = None) -> tuple[bool, float]:
    """Whether V + iσ is positive semidefinite, with its smallest eigenvalue."""
    cov = np.asarray(cov, dtype=float)
    sigma = symplectic_form(cov.shape[0] // 2) if sigma is None else np.asarray(sigma, dtype=float)
    min_eig = float(np.linalg.eigvalsh(cov + 1j * sigma).min())
    return min_eig >= HEISENBERG_FLOOR, min_eig


def is_symplectic(s: np.ndarray, sigma: Optional[np.ndarray] = None, tol: float = 1e-10) -> bool:
    sigma = symplectic_form(s.shape[0] // 2) if sigma is None else sigma
    scale = 1.0 + float(np.abs(s).max()) ** 2
    return bool(np.abs(s.T @ sigma @ s - sigma).max() <= tol * scale)


@dataclass(frozen=True, eq=False)
class WilliamsonDecomposition:
    s: np.ndarray
    tau: np.ndarray
    residual: float

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(np.concatenate([self.tau, self.tau]))

    def reconstruct(self) -> np.ndarray:
        return self.s.T @ self.diagonal @ self.s


def _change_basis(n_modes: int) -> np.ndarray:
    # (x1, p1, x2, p2, …) -> (x1, x2, …, p1, p2, …)
    m = np.zeros((2 * n_modes, 2 * n_modes))
    for i in range(n_modes):
        m[2 * i, i] = 1.0
        m[2 * i + 1, i + n_modes] = 1.0
    return m


def williamson(cov: np.ndarray, tol: float = 1e-10) -> WilliamsonDecomposition:
    """Symplectic diagonalization ``V = Sᵀ(T⊕T)S`` with τ sorted descending.

    Uses the real Schur form of ``V^{-1/2} σ V^{-1/2}``, whose 2×2 blocks carry
    the inverse symplectic eigenvalues.
    """
    cov = np.asarray(cov, dtype=float)
    dim = cov.shape[0]
    if cov.ndim != 2 or cov.shape != (dim, dim) or dim % 2:
        raise ValueError(f"covariance must be square with even size, got {cov.shape}")
    if np.abs(cov - cov.T).max() > tol * (1.0 + np.abs(cov).max()):
        raise NotPositiveDefinite("covariance is not symmetric")
    if np.linalg.eigvalsh(cov).min() <= 0.0:
        raise NotPositiveDefinite("covariance is not positive definite")

    n = dim // 2
    omega = symplectic_form(n)
    rotmat = _change_basis(n)
    root_inv = sqrtm(np.linalg.inv(cov)).real
    s1, k = schur(root_inv @ omega @ root_inv, output="real")

    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    p = block_diag(*[np.eye(2) if s1[2 * i, 2 * i + 1] > 0 else swap for i in range(n)])
    s1t = p @ s1 @ p
    dd = rotmat.T @ s1t @ rotmat
    tau = np.array([1.0 / dd[i, i + n] for i in range(n)])
    columns = k @ p @ rotmat
    s = np.linalg.inv(root_inv @ columns @ np.diag(np.sqrt(np.concatenate([tau, tau]))))

    order = np.argsort(-tau, kind="stable")
    tau = tau[order]
    s = s[np.concatenate([order, order + n])]
    decomposition = WilliamsonDecomposition(s=s, tau=tau, residual=0.0)
    residual = float(np.abs(decomposition.reconstruct() - cov).max())
    return WilliamsonDecomposition(s=s, tau=tau, residual=residual)


def gamma_exponent(cov: np.ndarray, allow_pure: bool = False) -> np.ndarray:
    """Exponent matrix Γ of the Gaussian operator with covariance ``cov``.

    A pure direction (τ = 1) makes Γ unbounded; with ``allow_pure`` it is
    capped at K = 23, i.e. a thermal factor e^{−46}.
    """
    decomposition = williamson(cov)
    pure = decomposition.tau <= 1.0 + PURE_TOL
    if pure.any() and not allow_pure:
        raise PureDirection(f"symplectic eigenvalues {decomposition.tau[pure]} sit at the pure boundary")
    k = np.where(pure, PURE_CAP, np.arctanh(1.0 / np.where(pure, 2.0, decomposition.tau)))
    s_inv = np.linalg.inv(decomposition.s)
    gamma = s_inv @ np.diag(np.concatenate([k, k])) @ s_inv.T
    return 0.5 * (gamma + gamma.T)


def effect_trace(cov: np.ndarray) -> float:
    """Trace of the bare operator ``exp(−r̂ᵀΓr̂)`` built from ``cov``."""
    tau = williamson(cov).tau
    if np.any(tau <= 1.0 + PURE_TOL):
        raise PureDirection("the bare operator of a pure direction has no finite trace")
    return float(np.prod(np.sqrt(tau ** 2 - 1.0) / 2.0))


def povm_normalization(n_modes: int) -> float:
    """Measure factor (2π)^M under which displaced normalized effects resolve the identity."""
    return (2.0 * math.pi) ** n_modes


def _finite_indices(effect) -> list[int]:
    divergent = getattr(effect, "divergent", None)
    if divergent is None:
        return [j for j in range(len(effect.means)) if np.isfinite(effect.cov[j, j])]
    return [j for j, flag in enumerate(divergent) if not flag]


def outcome_density(effect, state: GaussianMoments) -> float:
    """Tr{Eρ} for a Gaussian effect and a Gaussian state."""
    total = np.asarray(effect.cov, dtype=float) + np.asarray(state.cov, dtype=float)
    if not np.all(np.isfinite(total)):
        raise SingularSum("effect has divergent quadratures; use outcome_distribution")
    eigenvalues = np.linalg.eigvalsh(0.5 * (total + total.T))
    if eigenvalues.min() <= 0.0:
        raise SingularSum(f"V_E + V_ρ has eigenvalue {eigenvalues.min():.3e}")
    delta = np.asarray(effect.means, dtype=float) - np.asarray(state.means, dtype=float)
    exponent = float(delta @ np.linalg.solve(total, delta))
    n_modes = len(delta) // 2
    scale = getattr(effect, "trace", 1.0)
    return scale * 2.0 ** n_modes * math.exp(-exponent) / math.sqrt(float(np.prod(eigenvalues)))


def outcome_distribution(effect, state: GaussianMoments) -> float:
    """Probability density of the retrodicted means over the retrodictable coordinates.

    Divergent quadratures of the effect carry no information and are
    integrated out.
    """
    keep = _finite_indices(effect)
    if not keep:
        return 1.0
    idx = np.ix_(keep, keep)
    total = np.asarray(effect.cov, dtype=float)[idx] + np.asarray(state.cov, dtype=float)[idx]
    eigenvalues = np.linalg.eigvalsh(0.5 * (total + total.T))
    if eigenvalues.min() <= 0.0:
        raise SingularSum(f"V_E + V_ρ has eigenvalue {eigenvalues.min():.3e}")
    delta = np.asarray(effect.means, dtype=float)[keep] - np.asarray(state.means, dtype=float)[keep]
    exponent = float(delta @ np.linalg.solve(total, delta))
    return math.exp(-exponent) / (math.pi ** (len(keep) / 2.0) * math.sqrt(float(np.prod(eigenvalues))))


def marginal(moments: GaussianMoments, direction: Sequence[float]) -> tuple[float, float]:
    """Mean and true variance of the quadrature ``uᵀr``."""
    u = np.asarray(direction, dtype=float)
    if not math.isclose(float(np.linalg.norm(u)), 1.0, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError(f"direction must be a unit vector, |u| = {np.linalg.norm(u)}")
    return float(u @ moments.means), float(u @ (0.5 * np.asarray(moments.cov)) @ u)


class FockOracle:
    """Single-mode operators in a Fock basis truncated at ``cutoff`` levels.

    Quadratic forms are built from exact normal-ordered expressions so that
    only the operator exponentials feel the truncation.
    """

    def __init__(self, cutoff: int = 40):
        if cutoff < 20:
            raise ValueError(f"cutoff must be at least 20, got {cutoff}")
        self.cutoff = cutoff
        self.a = np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), k=1).astype(complex)
        self.adag = self.a.conj().T
        self.n = np.diag(np.arange(cutoff, dtype=float)).astype(complex)
        self.x = (self.a + self.adag) / math.sqrt(2.0)
        self.p = -1j * (self.a - self.adag) / math.sqrt(2.0)
        eye = np.eye(cutoff)
        a2 = self.a @ self.a
        adag2 = self.adag @ self.adag
        self._xx = (a2 + adag2 + 2.0 * self.n + eye) / 2.0
        self._pp = -(a2 + adag2 - 2.0 * self.n - eye) / 2.0
        self._xp_px = -1j * (a2 - adag2)

    def quadratic_form(self, gamma: np.ndarray) -> np.ndarray:
        """The Hermitian operator r̂ᵀΓr̂."""
        return gamma[0, 0] * self._xx + gamma[1, 1] * self._pp + 0.5 * (gamma[0, 1] + gamma[1, 0]) * self._xp_px

    def displacement(self, shift: Sequence[float]) -> np.ndarray:
        """D with D† r̂ D = r̂ + shift."""
        generator = shift[0] * self.p - shift[1] * self.x
        w, u = eigh(generator)
        return (u * np.exp(-1j * w)) @ u.conj().T

    def gaussian_operator(self, cov: np.ndarray, means: Sequence[float]) -> np.ndarray:
        """Bare displaced operator D exp(−r̂ᵀΓr̂) D†."""
        w, u = eigh(self.quadratic_form(gamma_exponent(cov, allow_pure=True)))
        bare = (u * np.exp(-w)) @ u.conj().T
        d = self.displacement(means)
        return d @ bare @ d.conj().T

    def _check_tail(self, operator: np.ndarray, label: str) -> None:
        populations = np.real(np.diag(operator)) / np.real(np.trace(operator))
        window = max(2, self.cutoff // TAIL_FRACTION)
        tail = float(populations[-window:].sum())
        if tail > TAIL_MASS:
            raise CutoffTooSmall(f"{label} leaves {tail:.2e} of its weight in the top {window} Fock levels")

    def density_matrix(self, state: GaussianMoments) -> np.ndarray:
        operator = self.gaussian_operator(state.cov, state.means)
        self._check_tail(operator, "state")
        return operator / np.trace(operator)

    def effect_operator(self, effect) -> np.ndarray:
        if not _finite_indices(effect):
            return getattr(effect, "trace", 1.0) * np.eye(self.cutoff, dtype=complex)
        operator = self.gaussian_operator(effect.cov, effect.means)
        self._check_tail(operator, "effect")
        return getattr(effect, "trace", 1.0) * operator / np.trace(operator)

    def bare_trace(self, cov: np.ndarray) -> float:
        """Numerical trace of exp(−r̂ᵀΓr̂); calibrates ``effect_trace``."""
        w, _ = eigh(self.quadratic_form(gamma_exponent(cov, allow_pure=True)))
        return float(np.exp(-w).sum())

    def commutator_defect(self) -> float:
        block = self.cutoff - 1
        commutator = self.x @ self.p - self.p @ self.x
        return float(np.abs(commutator[:block, :block] - 1j * np.eye(block)).max())


def fock_oracle_trace(effect, state: GaussianMoments, cutoff: int = 40) -> float:
    """Brute-force Tr{Eρ} in a truncated Fock space (single mode only)."""
    if len(state.means) != 2:
        raise ValueError("the Fock oracle handles a single mode")
    oracle = FockOracle(cutoff)
    value = np.trace(oracle.effect_operator(effect) @ oracle.density_matrix(state))
    return float(np.real(value))
