"""Deterministic covariance dynamics of states (forward) and effects (backward).

Both directions share one Riccati form in the direction of propagation::

    dV/ds = N V + V Nᵀ + D − 2 V AᵀA V

with ``N = Q + 2σBᵀA`` for states (``s = t``) and ``N = −Q − 2σBᵀA`` for
effects (``s = t₁ − t``). The conditional drift is ``M = N − 2 V AᵀA``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov

from qretro.errors import DivergenceDetected, NoSteadyState, UnstableUnconditional
from qretro.model import LinearModel, diffusion_matrix, drift_matrix

logger = logging.getLogger(__name__)

DIVERGENCE_BOUND = 1e12
FREEZE_BOUND = 1e9
RESIDUAL_TOL = 1e-10


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"

    @classmethod
    def parse(cls, value) -> "Direction":
        if isinstance(value, cls):
            return value
        aliases = {"fwd": cls.FORWARD, "bwd": cls.BACKWARD}
        key = str(value).lower()
        return aliases.get(key) or cls(key)

    @property
    def sign(self) -> float:
        return 1.0 if self is Direction.FORWARD else -1.0


def _sym(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def measurement_gain(model: LinearModel) -> np.ndarray:
    """AᵀA, the rate at which the record shrinks the covariance."""
    return model.a_meas.T @ model.a_meas


def linear_drift(model: LinearModel, direction: Direction) -> np.ndarray:
    """N: the V-independent part of the conditional drift."""
    direction = Direction.parse(direction)
    cross = 2.0 * model.sigma @ model.b_meas.T @ model.a_meas
    return direction.sign * (drift_matrix(model) + cross)


def conditional_drift_forward(model: LinearModel, v: np.ndarray) -> np.ndarray:
    """M_ρ = Q + 2σBᵀA − 2 V AᵀA."""
    return linear_drift(model, Direction.FORWARD) - 2.0 * v @ measurement_gain(model)


def conditional_drift_backward(model: LinearModel, v: np.ndarray) -> np.ndarray:
    """M_E = −Q − 2σBᵀA − 2 V AᵀA."""
    return linear_drift(model, Direction.BACKWARD) - 2.0 * v @ measurement_gain(model)


def conditional_drift(model: LinearModel, v: np.ndarray, direction: Direction) -> np.ndarray:
    if Direction.parse(direction) is Direction.FORWARD:
        return conditional_drift_forward(model, v)
    return conditional_drift_backward(model, v)


def mean_gain(model: LinearModel, v: np.ndarray, direction: Direction) -> np.ndarray:
    """Coefficient of dY in the mean update: V Aᵀ − σBᵀ forward, V Aᵀ + σBᵀ backward."""
    direction = Direction.parse(direction)
    return v @ model.a_meas.T - direction.sign * model.sigma @ model.b_meas.T


def _rhs(n_lin: np.ndarray, diffusion: np.ndarray, gain: np.ndarray, v: np.ndarray) -> np.ndarray:
    return n_lin @ v + v @ n_lin.T + diffusion - 2.0 * v @ gain @ v


def riccati_rhs(model: LinearModel, v: np.ndarray, direction: Direction) -> np.ndarray:
    """Rate of V in the direction of propagation (−dV/dt for effects)."""
    return _rhs(linear_drift(model, direction), diffusion_matrix(model), measurement_gain(model), v)


def default_dt(model: LinearModel) -> float:
    rates = np.linalg.eigvals(drift_matrix(model)).real
    slowest = rates.min(initial=0.0)
    if slowest >= 0.0:
        logger.info("drift has no decaying eigenvalue; falling back to dt = 1e-3")
        return 1e-3
    return 1e-3 / abs(slowest)


@dataclass(frozen=True, eq=False)
class CovarianceTrajectory:
    times: np.ndarray
    covs: np.ndarray
    direction: Direction
    residual: float

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final(self) -> np.ndarray:
        return self.covs[-1]


@dataclass(frozen=True, eq=False)
class CovarianceSolution:
    """Asymptotic covariance with its conditional drift and stability data.

    Quadratures listed in ``divergent`` have no finite asymptotic variance;
    their diagonal entries are ``inf`` and their rows of ``m`` are ``nan``.
    Everything else refers to the remaining block.
    """

    v: np.ndarray
    m: np.ndarray
    eigen_real_parts: np.ndarray
    direction: Direction
    converged: bool
    residual: float
    divergent: tuple[int, ...] = ()

    @property
    def finite(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.v.shape[0]) if j not in self.divergent)

    @property
    def stable(self) -> bool:
        parts = self.eigen_real_parts[np.isfinite(self.eigen_real_parts)]
        return bool(np.all(parts < 0.0))


class CovariancePropagator:
    """Exact Riccati step over a fixed ``dt``.

    The flow is linear-fractional: with ``Φ = expm(dt·[[N, D], [2AᵀA, −Nᵀ]])``
    one step maps ``V`` to ``(Φ₁₁V + Φ₁₂)(Φ₂₁V + Φ₂₂)⁻¹``. This stays well
    conditioned from very large initial covariances, which explicit schemes do
    not. Flows for sub-blocks (after quadratures are frozen) are cached.
    """

    def __init__(self, model: LinearModel, direction: Direction, dt: float):
        self.direction = Direction.parse(direction)
        self.dt = float(dt)
        self._n_lin = linear_drift(model, self.direction)
        self._diffusion = diffusion_matrix(model)
        self._gain = measurement_gain(model)
        self._flows: dict[tuple[int, ...], tuple[np.ndarray, ...]] = {}

    def _flow(self, keep: tuple[int, ...]) -> tuple[np.ndarray, ...]:
        if keep not in self._flows:
            idx = np.ix_(keep, keep)
            n_lin = self._n_lin[idx]
            size = len(keep)
            hamiltonian = np.block([
                [n_lin, self._diffusion[idx]],
                [2.0 * self._gain[idx], -n_lin.T],
            ])
            phi = expm(self.dt * hamiltonian)
            self._flows[keep] = (
                phi[:size, :size], phi[:size, size:], phi[size:, :size], phi[size:, size:]
            )
        return self._flows[keep]

    def step(self, v: np.ndarray, keep: Optional[Sequence[int]] = None) -> np.ndarray:
        keep = tuple(range(v.shape[0])) if keep is None else tuple(keep)
        out = np.array(v, dtype=float, copy=True)
        if not keep:
            return out
        p11, p12, p21, p22 = self._flow(keep)
        idx = np.ix_(keep, keep)
        block = v[idx]
        numerator = p11 @ block + p12
        denominator = p21 @ block + p22
        out[idx] = _sym(np.linalg.solve(denominator.T, numerator.T).T)
        return out


def _rk4_step(n_lin, diffusion, gain, v, dt):
    k1 = _rhs(n_lin, diffusion, gain, v)
    k2 = _rhs(n_lin, diffusion, gain, v + 0.5 * dt * k1)
    k3 = _rhs(n_lin, diffusion, gain, v + 0.5 * dt * k2)
    k4 = _rhs(n_lin, diffusion, gain, v + dt * k3)
    return _sym(v + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def integrate_covariance(
    model: LinearModel,
    v0: np.ndarray,
    duration: float,
    dt: Optional[float] = None,
    direction: Direction = Direction.FORWARD,
    method: str = "rk4",
    divergence_bound: float = DIVERGENCE_BOUND,
    t_start: float = 0.0,
) -> CovarianceTrajectory:
    """Integrate the covariance ODE over ``duration`` in the given direction.

    Backward trajectories start at ``t_start`` (the final time of the record)
    and their ``times`` decrease.
    """
    direction = Direction.parse(direction)
    dt = default_dt(model) if dt is None else float(dt)
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if method not in ("rk4", "exact"):
        raise ValueError(f"unknown integration method {method!r}")

    n_steps = int(round(duration / dt))
    n_lin = linear_drift(model, direction)
    diffusion = diffusion_matrix(model)
    gain = measurement_gain(model)
    propagator = CovariancePropagator(model, direction, dt) if method == "exact" else None

    covs = np.empty((n_steps + 1, model.dim, model.dim))
    covs[0] = _sym(np.asarray(v0, dtype=float))
    times = t_start + direction.sign * dt * np.arange(n_steps + 1)

    for k in range(n_steps):
        if propagator is None:
            covs[k + 1] = _rk4_step(n_lin, diffusion, gain, covs[k], dt)
        else:
            covs[k + 1] = propagator.step(covs[k])
        blown = np.abs(covs[k + 1]) > divergence_bound
        if not np.all(np.isfinite(covs[k + 1])) or blown.any():
            rows = sorted({int(j) for j in np.argwhere(blown | ~np.isfinite(covs[k + 1]))[:, 0]})
            partial = CovarianceTrajectory(
                times=times[: k + 1], covs=covs[: k + 1], direction=direction,
                residual=float(np.linalg.norm(_rhs(n_lin, diffusion, gain, covs[k]))),
            )
            raise DivergenceDetected(rows, float(times[k + 1]), partial)

    residual = float(np.linalg.norm(_rhs(n_lin, diffusion, gain, covs[-1])))
    logger.debug("integrated %d %s covariance steps, final residual %.3e", n_steps, direction.value, residual)
    return CovarianceTrajectory(times=times, covs=covs, direction=direction, residual=residual)


def _hurwitz(matrix: np.ndarray) -> bool:
    return matrix.size == 0 or bool(np.all(np.linalg.eigvals(matrix).real < 0.0))


def _relax(n_lin, diffusion, gain, v, tol, freeze_bound, max_steps):
    """RK4 relaxation until the residual is below ``tol`` or some variance blows past the bound.

    Returns the relaxed block and the local indices that crossed the bound.
    """
    step = 0
    dt = None
    while step < max_steps:
        if step % 50 == 0:
            rhs = _rhs(n_lin, diffusion, gain, v)
            scale = 1.0 + np.linalg.norm(v)
            drift = n_lin - 2.0 * v @ gain
            if np.linalg.norm(rhs) <= tol * scale and _hurwitz(drift):
                return v, []
            radius = float(np.abs(np.linalg.eigvals(drift)).max(initial=0.0))
            growth = np.linalg.norm(rhs) / scale
            dt = min(0.2 / radius if radius > 0 else np.inf, 0.1 / growth if growth > 0 else np.inf)
            if not np.isfinite(dt):
                return v, []
        v = _rk4_step(n_lin, diffusion, gain, v, dt)
        step += 1
        over = [j for j in range(v.shape[0]) if v[j, j] > freeze_bound or not np.isfinite(v[j, j])]
        if over:
            return v, over
    raise NoSteadyState(f"covariance did not settle within {max_steps} relaxation steps")


def _newton(n_lin, diffusion, gain, v, tol, max_iter=50):
    """Kleinman–Newton refinement of the algebraic Riccati equation.

    Each step solves the Lyapunov equation ``M X + X Mᵀ = −F(V)`` with the
    current conditional drift ``M``. Returns None when it fails to reach ``tol``.
    """
    best = np.inf
    for iteration in range(max_iter):
        rhs = _rhs(n_lin, diffusion, gain, v)
        res = float(np.linalg.norm(rhs))
        scale = 1.0 + float(np.linalg.norm(v))
        logger.debug("newton iteration %d residual %.3e", iteration, res)
        if res <= 1e-15 * scale or (res <= tol * scale and res >= 0.5 * best):
            return v
        best = min(best, res)
        drift = n_lin - 2.0 * v @ gain
        try:
            v = _sym(v + solve_continuous_lyapunov(drift, -rhs))
        except (np.linalg.LinAlgError, ValueError):
            return None
        if not np.all(np.isfinite(v)):
            return None
    res = float(np.linalg.norm(_rhs(n_lin, diffusion, gain, v)))
    return v if res <= tol * (1.0 + np.linalg.norm(v)) else None


def steady_state(
    model: LinearModel,
    direction: Direction = Direction.FORWARD,
    v0: Optional[np.ndarray] = None,
    allow_divergence: bool = False,
    freeze_bound: float = FREEZE_BOUND,
    tol: float = RESIDUAL_TOL,
    max_steps: int = 200_000,
) -> CovarianceSolution:
    """Asymptotic covariance by RK4 relaxation followed by Newton polishing.

    Quadratures whose variance runs past ``freeze_bound`` during relaxation are
    dropped from the problem and reported as divergent. Without
    ``allow_divergence`` that outcome raises NoSteadyState carrying the
    solution on the remaining block.
    """
    direction = Direction.parse(direction)
    n_full = linear_drift(model, direction)
    d_full = diffusion_matrix(model)
    g_full = measurement_gain(model)
    dim = model.dim

    v = np.eye(dim) if v0 is None else _sym(np.asarray(v0, dtype=float))
    keep = list(range(dim))
    divergent: list[int] = []
    relax_tol = 1e-3
    refined = None

    while keep:
        idx = np.ix_(keep, keep)
        n_lin, diffusion, gain = n_full[idx], d_full[idx], g_full[idx]
        block, over = _relax(n_lin, diffusion, gain, v[idx], relax_tol, freeze_bound, max_steps)
        v[idx] = block
        if over:
            frozen = [keep[j] for j in over]
            logger.info("%s variance diverges in quadratures %s", direction.value, frozen)
            divergent.extend(frozen)
            keep = [j for j in keep if j not in frozen]
            continue
        refined = _newton(n_lin, diffusion, gain, block, tol)
        if refined is not None and _hurwitz(n_lin - 2.0 * refined @ gain):
            break
        relax_tol *= 1e-3
        if relax_tol < 1e-14:
            raise NoSteadyState("Newton refinement of the Riccati equation did not converge")

    v_out = np.zeros((dim, dim))
    m_out = np.full((dim, dim), np.nan)
    eig_out = np.full(dim, np.nan)
    residual = 0.0
    if keep:
        idx = np.ix_(keep, keep)
        n_lin, diffusion, gain = n_full[idx], d_full[idx], g_full[idx]
        drift = n_lin - 2.0 * refined @ gain
        v_out[idx] = refined
        m_out[idx] = drift
        eig_out[: len(keep)] = np.sort(np.linalg.eigvals(drift).real)
        residual = float(np.linalg.norm(_rhs(n_lin, diffusion, gain, refined)))
    for j in divergent:
        v_out[j, j] = np.inf

    converged = bool(keep) and residual <= tol * (1.0 + np.linalg.norm(v_out[np.ix_(keep, keep)]))
    solution = CovarianceSolution(
        v=v_out, m=m_out, eigen_real_parts=eig_out, direction=direction,
        converged=converged, residual=residual, divergent=tuple(sorted(divergent)),
    )
    logger.info(
        "%s steady state of %r: residual %.2e, divergent %s",
        direction.value, model.name, residual, list(solution.divergent),
    )
    if divergent and not allow_divergence:
        raise NoSteadyState(
            f"{direction.value} covariance diverges in quadratures {sorted(divergent)}",
            divergent=sorted(divergent),
            solution=solution,
        )
    if not converged and not divergent:
        raise NoSteadyState(f"{direction.value} Riccati equation did not converge (residual {residual:.3e})")
    return solution


def lyapunov_unconditional(model: LinearModel) -> np.ndarray:
    """Covariance of the unmonitored steady state: Q V + V Qᵀ + 2σΔσᵀ = 0."""
    q = drift_matrix(model)
    rates = np.linalg.eigvals(q).real
    if np.any(rates >= 0.0):
        raise UnstableUnconditional(f"drift eigenvalue real parts {np.sort(rates)} are not all negative")
    diffusion = 2.0 * model.sigma @ model.delta @ model.sigma.T
    return _sym(solve_continuous_lyapunov(q, -diffusion))
