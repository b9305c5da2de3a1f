"""Measurement records, conditional means and the mode functions that summarise them.

Means are advanced with an exponential step: over one interval the
homogeneous part is integrated exactly with ``P = expm(dt·M)``. The record
increment and the coefficients are taken at one endpoint of the interval, the
lower one for the filter (Itô) and the upper one for the retrodictor (backward
Itô); either sweep can be run with the other endpoint to measure the
discretization gap. Covariances use the exact Riccati flow of
``CovariancePropagator``. With these conventions a steady-state filter output
equals the record contracted against its mode function to rounding.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from qretro.errors import GridMismatch, NonPositiveDeterminant, NotConverged, NotPositiveDefinite, StepTooLarge
from qretro.gaussian import heisenberg_check
from qretro.model import LinearModel, drift_matrix
from qretro.riccati import (
    FREEZE_BOUND,
    CovariancePropagator,
    CovarianceSolution,
    Direction,
    linear_drift,
    measurement_gain,
)

logger = logging.getLogger(__name__)

DEFAULT_V_LARGE = 1e6
STEP_LIMIT = 0.1
GRID_TOL = 1e-9
SYMMETRY_TOL = 1e-9
DET_FLOOR = 1.0 - 1e-9


class Endpoint(str, Enum):
    """Which end of each step supplies the coefficients and receives the increment."""

    LOWER = "lower"
    UPPER = "upper"


def _frozen(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


def _apply(matrix: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """``vectors @ matrix.T`` as a fixed sequence of elementwise operations.

    The result for one row never depends on how many rows are stacked, so a
    trajectory computed inside a batch matches the same trajectory computed alone.
    """
    if matrix.shape[1] == 0:
        return np.zeros((vectors.shape[0], matrix.shape[0]))
    out = vectors[:, 0:1] * matrix[:, 0]
    for j in range(1, matrix.shape[1]):
        out = out + vectors[:, j:j + 1] * matrix[:, j]
    return out


def trajectory_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for trajectory ``index`` of the ensemble rooted at ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def worker_count() -> int:
    configured = os.environ.get("QRETRO_THREADS")
    if configured:
        return max(1, int(configured))
    return min(8, os.cpu_count() or 1)


@dataclass(frozen=True, eq=False)
class MeasurementRecord:
    """Increments ``dY`` on a uniform grid; row ``k`` covers ``[t_k, t_k + dt)``."""

    dt: float
    increments: np.ndarray
    seed: Optional[int] = None
    t_start: float = 0.0

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"record dt must be positive, got {self.dt}")
        increments = np.array(self.increments, dtype=float, copy=True)
        if increments.ndim == 1:
            increments = increments[:, None]
        if increments.ndim != 2:
            raise ValueError(f"increments must be (n_steps, n_channels), got shape {increments.shape}")
        if not np.all(np.isfinite(increments)):
            raise ValueError("record contains non-finite increments")
        increments.setflags(write=False)
        object.__setattr__(self, "increments", increments)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    @property
    def n_channels(self) -> int:
        return self.increments.shape[1]

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration

    @property
    def times(self) -> np.ndarray:
        """Grid points t₀ … t₁, one more than there are increments."""
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    def coarsen(self, factor: int) -> "MeasurementRecord":
        """Sum ``factor`` consecutive increments; the same Wiener path on a coarser grid."""
        if factor < 1 or self.n_steps % factor:
            raise GridMismatch(f"cannot coarsen {self.n_steps} steps by a factor of {factor}")
        summed = self.increments.reshape(self.n_steps // factor, factor, self.n_channels).sum(axis=1)
        return MeasurementRecord(dt=self.dt * factor, increments=summed, seed=self.seed, t_start=self.t_start)


def check_physical(cov: np.ndarray) -> None:
    """Raise unless ``cov`` is a symmetric covariance with V + iσ ⪰ 0 and det V ≥ 1.

    Quadratures with an infinite variance are skipped; the remaining block
    then only has to be positive definite.
    """
    keep = np.flatnonzero(np.isfinite(np.diag(cov)))
    block = cov[np.ix_(keep, keep)]
    if not np.all(np.isfinite(block)):
        raise NotPositiveDefinite("covariance has non-finite off-diagonal entries")
    scale = max(1.0, float(np.abs(block).max(initial=0.0)))
    asymmetry = float(np.abs(block - block.T).max(initial=0.0))
    if asymmetry > SYMMETRY_TOL * scale:
        raise NotPositiveDefinite(f"covariance is not symmetric (max |V − Vᵀ| = {asymmetry:.3e})")
    if keep.size < cov.shape[0]:
        if keep.size and np.linalg.eigvalsh(block).min() <= 0.0:
            raise NotPositiveDefinite("finite block of the covariance is not positive definite")
        return
    physical, min_eig = heisenberg_check(block)
    if not physical:
        raise NotPositiveDefinite(f"V + iσ has eigenvalue {min_eig:.3e} < 0: the uncertainty relation is violated")
    det = float(np.linalg.det(block))
    if det < DET_FLOOR:
        raise NonPositiveDeterminant(f"det V = {det:.6g} is below 1")


@dataclass(frozen=True, eq=False)
class GaussianState:
    means: np.ndarray
    cov: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "means", _frozen(self.means))
        object.__setattr__(self, "cov", _frozen(self.cov))
        if self.means.ndim != 1 or len(self.means) % 2:
            raise ValueError(f"means must be a vector of even length, got shape {self.means.shape}")
        if self.cov.shape != (len(self.means), len(self.means)):
            raise ValueError(f"covariance {self.cov.shape} does not match {len(self.means)} means")
        check_physical(self.cov)

    @classmethod
    def vacuum(cls, n_modes: int, time: float = 0.0) -> "GaussianState":
        return cls(np.zeros(2 * n_modes), np.eye(2 * n_modes), time)

    @classmethod
    def coherent(cls, means: Sequence[float], time: float = 0.0) -> "GaussianState":
        means = np.asarray(means, dtype=float)
        return cls(means, np.eye(len(means)), time)


@dataclass(frozen=True, eq=False)
class GaussianEffect:
    """Retrodictive moments of an effect at ``time``.

    ``divergent`` flags quadratures on which the effect is flat (infinite
    variance, undefined mean). ``trace`` is Tr{E}; 1 unless set otherwise.
    """

    means: np.ndarray
    cov: np.ndarray
    time: float = 0.0
    divergent: tuple[bool, ...] = ()
    trace: float = 1.0

    def __post_init__(self):
        cov = np.array(self.cov, dtype=float, copy=True)
        flags = tuple(bool(f) for f in self.divergent) or tuple(
            bool(not np.isfinite(cov[j, j]) or cov[j, j] > FREEZE_BOUND) for j in range(cov.shape[0])
        )
        if len(flags) != cov.shape[0]:
            raise ValueError(f"{len(flags)} divergence flags for {cov.shape[0]} quadratures")
        means = np.array(self.means, dtype=float, copy=True)
        for j, flag in enumerate(flags):
            if flag:
                means[j] = np.nan
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "cov", _frozen(cov))
        object.__setattr__(self, "divergent", flags)

    @classmethod
    def identity(cls, n_modes: int, time: float = 0.0, v_large: float = DEFAULT_V_LARGE) -> "GaussianEffect":
        """Broad isotropic stand-in for the identity effect at the end of a record."""
        dim = 2 * n_modes
        return cls(np.zeros(dim), v_large * np.eye(dim), time, divergent=(False,) * dim)

    @property
    def finite(self) -> tuple[int, ...]:
        return tuple(j for j, flag in enumerate(self.divergent) if not flag)


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    """Filtered moments at every grid point, in increasing time."""

    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    divergent: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, k: int) -> GaussianState:
        return GaussianState(self.means[k], self.covs[k], float(self.times[k]))

    @property
    def final(self) -> GaussianState:
        return self[-1]


@dataclass(frozen=True, eq=False)
class EffectTrajectory:
    """Retrodicted moments at every grid point, in increasing time; index 0 is t₀."""

    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    divergent: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, k: int) -> GaussianEffect:
        return GaussianEffect(
            self.means[k], self.covs[k], float(self.times[k]), divergent=tuple(self.divergent[k])
        )

    @property
    def initial(self) -> GaussianEffect:
        return self[0]


@dataclass(frozen=True, eq=False)
class ModeFunctionSet:
    """Kernels ``f(τ)`` of shape ``(len(lags), 2M, N_c)`` on a uniform lag grid."""

    lags: np.ndarray
    kernel: np.ndarray
    direction: Direction
    quadrature_labels: tuple[str, ...] = ()
    channel_labels: tuple[str, ...] = ()

    @property
    def dt(self) -> float:
        return float(self.lags[1] - self.lags[0]) if len(self.lags) > 1 else 0.0

    def columns(self) -> list[str]:
        return [f"f_{q}{c}" for q in self.quadrature_labels for c in self.channel_labels]

    def flat(self) -> np.ndarray:
        return self.kernel.reshape(len(self.lags), -1)


@dataclass(frozen=True)
class _MeanStep:
    keep: np.ndarray
    propagator: np.ndarray
    gain: np.ndarray
    offset: np.ndarray


@dataclass
class _CoefficientPath:
    """Covariances in propagation order with the mean step built from each one."""

    covs: np.ndarray
    divergent: np.ndarray
    steps: list = field(default_factory=list)


def _mean_step(model: LinearModel, v: np.ndarray, flags: np.ndarray, direction: Direction, dt: float) -> _MeanStep:
    keep = np.flatnonzero(~flags)
    idx = np.ix_(keep, keep)
    v_keep = v[idx]
    drift = linear_drift(model, direction)[idx] - 2.0 * v_keep @ measurement_gain(model)[idx]
    gain = v_keep @ model.a_meas[:, keep].T - direction.sign * (model.sigma @ model.b_meas.T)[keep]
    offset = direction.sign * (model.sigma @ model.h_linear)[keep] * dt
    return _MeanStep(keep=keep, propagator=expm(dt * drift), gain=gain, offset=offset)


def _coefficient_path(
    model: LinearModel, v_start: np.ndarray, dt: float, n_steps: int, direction: Direction,
    freeze_bound: float = FREEZE_BOUND,
) -> _CoefficientPath:
    dim = model.dim
    propagator = CovariancePropagator(model, direction, dt)
    covs = np.empty((n_steps + 1, dim, dim))
    flags = np.zeros((n_steps + 1, dim), dtype=bool)

    v = np.array(v_start, dtype=float, copy=True)
    current = np.array([not np.isfinite(v[j, j]) or v[j, j] > freeze_bound for j in range(dim)])
    for j in np.flatnonzero(current):
        v[j, :] = 0.0
        v[:, j] = 0.0
        v[j, j] = np.inf
    covs[0], flags[0] = v, current

    for k in range(n_steps):
        keep = np.flatnonzero(~current)
        v = propagator.step(v, keep)
        over = [j for j in keep if not np.isfinite(v[j, j]) or v[j, j] > freeze_bound]
        if over:
            logger.info("%s variance of quadratures %s passed %.0e; frozen", direction.value, over, freeze_bound)
            current = current.copy()
            for j in over:
                current[j] = True
                v[j, :] = 0.0
                v[:, j] = 0.0
                v[j, j] = np.inf
        covs[k + 1], flags[k + 1] = v, current

    path = _CoefficientPath(covs=covs, divergent=flags)
    cache: dict = {}
    for k in range(n_steps + 1):
        key = (covs[k].tobytes(), flags[k].tobytes())
        if key not in cache:
            cache[key] = _mean_step(model, covs[k], flags[k], direction, dt)
        path.steps.append(cache[key])
    return path


def _advance(step: _MeanStep, means: np.ndarray, increments: np.ndarray, inject_first: bool = True) -> np.ndarray:
    """One exponential step of a batch of means; frozen quadratures become nan.

    ``inject_first`` adds the increment at the point the sweep leaves and then
    propagates; otherwise it propagates and adds the increment on arrival.
    """
    out = np.full_like(means, np.nan)
    if step.keep.size:
        if inject_first:
            kept = means[:, step.keep] + _apply(step.gain, increments) + step.offset
            out[:, step.keep] = _apply(step.propagator, kept)
        else:
            kick = _apply(step.gain, increments) + step.offset
            out[:, step.keep] = _apply(step.propagator, means[:, step.keep]) + kick
    return out


def _sweep_step(path: "_CoefficientPath", i: int, natural: bool) -> tuple[_MeanStep, bool]:
    """Coefficients and injection order for propagation step ``i``.

    The natural endpoint of a sweep is the grid point it leaves; the other
    endpoint is the one it arrives at.
    """
    if natural:
        return path.steps[i], True
    return path.steps[i + 1], False


def check_step(model: LinearModel, v: np.ndarray, dt: float) -> None:
    """Reject ``dt`` when it is not small against the fastest forward rate."""
    flags = ~np.isfinite(np.diag(v))
    keep = np.flatnonzero(~flags)
    idx = np.ix_(keep, keep)
    drift = linear_drift(model, Direction.FORWARD)[idx] - 2.0 * v[idx] @ measurement_gain(model)[idx]
    rate = max(
        float(np.abs(np.linalg.eigvals(drift)).max(initial=0.0)),
        float(np.abs(np.linalg.eigvals(drift_matrix(model))).max(initial=0.0)),
    )
    if dt * rate > STEP_LIMIT:
        raise StepTooLarge(f"dt = {dt:g} against a fastest rate of {rate:.4g} (dt·rate must stay below {STEP_LIMIT})")


@dataclass(frozen=True, eq=False)
class RecordEnsemble:
    """Independent records of one model, generated from one root seed.

    ``truth_means`` holds full conditional-mean paths only when requested;
    ``final_means`` is always there. Covariances are shared by all members.
    """

    dt: float
    increments: np.ndarray
    final_means: np.ndarray
    covs: np.ndarray
    divergent: np.ndarray
    seed: int
    truth_means: Optional[np.ndarray] = None
    t_start: float = 0.0

    def __len__(self) -> int:
        return self.increments.shape[0]

    def record(self, index: int) -> MeasurementRecord:
        return MeasurementRecord(dt=self.dt, increments=self.increments[index], seed=self.seed, t_start=self.t_start)

    def truth(self, index: int) -> StateTrajectory:
        if self.truth_means is None:
            raise ValueError("ensemble was generated without keeping the mean paths")
        n_steps = self.increments.shape[1]
        return StateTrajectory(
            times=self.t_start + self.dt * np.arange(n_steps + 1),
            means=self.truth_means[index], covs=self.covs, divergent=self.divergent,
        )


def _simulate_batch(model, path, initial_means, dt, n_steps, seed, indices, keep_paths):
    batch = len(indices)
    noise = np.empty((batch, n_steps, model.n_channels))
    for row, index in enumerate(indices):
        noise[row] = trajectory_stream(seed, index).standard_normal((n_steps, model.n_channels))
    noise *= np.sqrt(dt)

    two_a_dt = 2.0 * model.a_meas * dt
    means = np.tile(np.asarray(initial_means, dtype=float), (batch, 1))
    increments = np.empty_like(noise)
    paths = np.empty((batch, n_steps + 1, model.dim)) if keep_paths else None
    if keep_paths:
        paths[:, 0] = means
    for k in range(n_steps):
        # signal from the lower endpoint; the filter rebuilds the same numbers from dY
        increments[:, k] = _apply(two_a_dt, np.nan_to_num(means)) + noise[:, k]
        means = _advance(path.steps[k], means, increments[:, k])
        if keep_paths:
            paths[:, k + 1] = means
    return increments, means, paths


def simulate_ensemble(
    model: LinearModel,
    initial_state: GaussianState,
    dt: float,
    duration: float,
    seed: int,
    n_records: int,
    keep_paths: bool = False,
    batch_size: int = 1000,
) -> RecordEnsemble:
    """Generate ``n_records`` records together with their true conditional states.

    Record ``i`` draws its noise from ``trajectory_stream(seed, i)``, so any
    member can be regenerated alone and the batching does not matter.
    """
    if n_records < 1:
        raise ValueError(f"n_records must be positive, got {n_records}")
    check_step(model, np.asarray(initial_state.cov, dtype=float), dt)
    n_steps = int(round(duration / dt))
    path = _coefficient_path(model, initial_state.cov, dt, n_steps, Direction.FORWARD)

    batches = [list(range(lo, min(lo + batch_size, n_records))) for lo in range(0, n_records, batch_size)]
    logger.info(
        "simulating %d records of %d steps (dt=%g, seed=%d) in %d batches",
        n_records, n_steps, dt, seed, len(batches),
    )
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(
            lambda idx: _simulate_batch(model, path, initial_state.means, dt, n_steps, seed, idx, keep_paths),
            batches,
        ))

    increments = np.concatenate([r[0] for r in results])
    final_means = np.concatenate([r[1] for r in results])
    truth_means = np.concatenate([r[2] for r in results]) if keep_paths else None
    return RecordEnsemble(
        dt=dt, increments=increments, final_means=final_means, covs=path.covs,
        divergent=path.divergent, seed=seed, truth_means=truth_means, t_start=initial_state.time,
    )


def simulate_record(
    model: LinearModel,
    initial_state: GaussianState,
    dt: float,
    duration: float,
    seed: int,
    index: int = 0,
) -> tuple[MeasurementRecord, StateTrajectory]:
    """One record with its true conditional state; the stream of ensemble member ``index``."""
    check_step(model, np.asarray(initial_state.cov, dtype=float), dt)
    n_steps = int(round(duration / dt))
    path = _coefficient_path(model, initial_state.cov, dt, n_steps, Direction.FORWARD)
    increments, _, paths = _simulate_batch(model, path, initial_state.means, dt, n_steps, seed, [index], True)
    record = MeasurementRecord(dt=dt, increments=increments[0], seed=seed, t_start=initial_state.time)
    truth = StateTrajectory(times=record.times, means=paths[0], covs=path.covs, divergent=path.divergent)
    return record, truth


def filter_forward(
    model: LinearModel,
    initial_state: GaussianState,
    record: MeasurementRecord,
    dt: Optional[float] = None,
    endpoint: Endpoint = Endpoint.LOWER,
) -> StateTrajectory:
    """Conditional state given the record up to each grid time.

    ``endpoint`` is the end of each step at which coefficients are taken;
    ``lower`` is the Itô filter that ``simulate_record`` runs.
    """
    natural = Endpoint(endpoint) is Endpoint.LOWER
    _check_grid(model, record, dt)
    path = _coefficient_path(model, initial_state.cov, record.dt, record.n_steps, Direction.FORWARD)
    means = np.empty((record.n_steps + 1, model.dim))
    current = np.asarray(initial_state.means, dtype=float)[None, :]
    means[0] = current[0]
    for k in range(record.n_steps):
        step, inject_first = _sweep_step(path, k, natural)
        current = _advance(step, current, record.increments[k][None, :], inject_first)
        means[k + 1] = current[0]
    return StateTrajectory(times=record.times, means=means, covs=path.covs, divergent=path.divergent)


def _check_grid(model: LinearModel, record: MeasurementRecord, dt: Optional[float]) -> None:
    if record.n_channels != model.n_channels:
        raise GridMismatch(f"record has {record.n_channels} channels, model {model.n_channels}")
    if dt is not None and not np.isclose(dt, record.dt, rtol=GRID_TOL, atol=0.0):
        raise GridMismatch(f"record dt {record.dt:g} differs from the integration dt {dt:g}")


def _final_effect(model: LinearModel, final_effect: Optional[GaussianEffect], t_end: float, v_large: float):
    if final_effect is None:
        return GaussianEffect.identity(model.n_modes, t_end, v_large)
    return final_effect


def _effect_start(effect: GaussianEffect) -> tuple[np.ndarray, np.ndarray]:
    cov = np.array(effect.cov, dtype=float, copy=True)
    for j, flag in enumerate(effect.divergent):
        if flag:
            cov[j, j] = np.inf
    return cov, np.nan_to_num(np.asarray(effect.means, dtype=float), nan=0.0)


def _retrodict_batch(
    path: _CoefficientPath, increments: np.ndarray, final_means: np.ndarray, keep_paths: bool, natural: bool = True,
):
    """Backward sweep for a batch; ``increments`` is ``(batch, n_steps, N_c)``."""
    batch, n_steps, _ = increments.shape
    means = np.tile(final_means, (batch, 1))
    paths = np.empty((batch, n_steps + 1, final_means.shape[0])) if keep_paths else None
    if keep_paths:
        paths[:, n_steps] = means
    for i in range(n_steps):
        k = n_steps - 1 - i
        # propagation index i is the upper endpoint t_{k+1}
        step, inject_first = _sweep_step(path, i, natural)
        means = _advance(step, means, increments[:, k], inject_first)
        if keep_paths:
            paths[:, k] = means
    return means, paths


def _effect_trajectory(times: np.ndarray, path: _CoefficientPath, means: np.ndarray) -> EffectTrajectory:
    divergent = path.divergent[::-1].copy()
    means = means.copy()
    means[divergent] = np.nan
    return EffectTrajectory(times=times, means=means, covs=path.covs[::-1].copy(), divergent=divergent)


def retrodict_backward(
    model: LinearModel,
    final_effect: Optional[GaussianEffect],
    record: MeasurementRecord,
    v_large: float = DEFAULT_V_LARGE,
    endpoint: Endpoint = Endpoint.UPPER,
) -> EffectTrajectory:
    """Retrodictive effect given the record from each grid time to its end.

    Without ``final_effect`` the identity is stood in for by an isotropic
    Gaussian of variance ``v_large``. ``upper`` is the backward-Itô sweep.
    """
    natural = Endpoint(endpoint) is Endpoint.UPPER
    _check_grid(model, record, None)
    effect = _final_effect(model, final_effect, record.t_end, v_large)
    v_end, r_end = _effect_start(effect)
    path = _coefficient_path(model, v_end, record.dt, record.n_steps, Direction.BACKWARD)
    _, paths = _retrodict_batch(path, record.increments[None, :, :], r_end, keep_paths=True, natural=natural)
    return _effect_trajectory(record.times, path, paths[0])


@dataclass(frozen=True, eq=False)
class EffectEnsemble:
    """Effects at t₀ for many records sharing one grid and one final effect.

    ``mean_paths`` holds every member's full backward sweep only when requested.
    """

    means: np.ndarray
    cov: np.ndarray
    divergent: tuple[bool, ...]
    time: float
    dt: float = 0.0
    mean_paths: Optional[np.ndarray] = None
    path: Optional[_CoefficientPath] = None

    def __len__(self) -> int:
        return self.means.shape[0]

    def effect(self, index: int) -> GaussianEffect:
        return GaussianEffect(self.means[index], self.cov, self.time, divergent=self.divergent)

    def trajectory(self, index: int) -> EffectTrajectory:
        if self.mean_paths is None:
            raise ValueError("ensemble was retrodicted without keeping the mean paths")
        n_steps = self.mean_paths.shape[1] - 1
        times = self.time + self.dt * np.arange(n_steps + 1)
        return _effect_trajectory(times, self.path, self.mean_paths[index])


def retrodict_ensemble(
    model: LinearModel,
    increments: np.ndarray,
    dt: float,
    final_effect: Optional[GaussianEffect] = None,
    v_large: float = DEFAULT_V_LARGE,
    t_start: float = 0.0,
    batch_size: int = 1000,
    keep_paths: bool = False,
) -> EffectEnsemble:
    """Retrodict every record in ``increments`` (``(n_records, n_steps, N_c)``) back to t₀."""
    increments = np.asarray(increments, dtype=float)
    n_records, n_steps, n_channels = increments.shape
    if n_channels != model.n_channels:
        raise GridMismatch(f"records have {n_channels} channels, model {model.n_channels}")
    effect = _final_effect(model, final_effect, t_start + n_steps * dt, v_large)
    v_end, r_end = _effect_start(effect)
    path = _coefficient_path(model, v_end, dt, n_steps, Direction.BACKWARD)

    chunks = [increments[lo:lo + batch_size] for lo in range(0, n_records, batch_size)]
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(lambda chunk: _retrodict_batch(path, chunk, r_end, keep_paths), chunks))
    means = np.concatenate([r[0] for r in results])
    mean_paths = np.concatenate([r[1] for r in results]) if keep_paths else None
    flags = path.divergent[-1]
    means[:, flags] = np.nan
    return EffectEnsemble(
        means=means, cov=path.covs[-1], divergent=tuple(bool(f) for f in flags), time=t_start,
        dt=dt, mean_paths=mean_paths, path=path if keep_paths else None,
    )


def ensemble_second_moment(ensemble: RecordEnsemble) -> np.ndarray:
    """``E[V_c + 2(r − r̄)(r − r̄)ᵀ]`` at the final time; the unconditional covariance."""
    centred = ensemble.final_means - ensemble.final_means.mean(axis=0)
    spread = centred.T @ centred / len(ensemble)
    return ensemble.covs[-1] + 2.0 * spread


def kernel_lags(dt: float, n_steps: int) -> np.ndarray:
    return dt * np.arange(n_steps + 1)


def mode_functions(
    model: LinearModel,
    steady: CovarianceSolution,
    lags: Sequence[float],
) -> ModeFunctionSet:
    """Temporal mode functions ``f(τ) = expm(τ·M) g`` of the steady-state filter or retrodictor.

    Rows of divergent quadratures are ``nan``.
    """
    if not steady.converged:
        raise NotConverged(f"{steady.direction.value} steady state did not converge (residual {steady.residual:.3e})")
    direction = steady.direction
    lags = np.asarray(lags, dtype=float)
    if np.any(lags < 0.0):
        raise ValueError("mode-function lags must be non-negative")
    keep = list(steady.finite)
    idx = np.ix_(keep, keep)
    drift = steady.m[idx]
    gain = steady.v[idx] @ model.a_meas[:, keep].T - direction.sign * (model.sigma @ model.b_meas.T)[keep]

    kernel = np.full((len(lags), model.dim, model.n_channels), np.nan)
    for i, lag in enumerate(lags):
        kernel[i, keep] = expm(lag * drift) @ gain
    return ModeFunctionSet(
        lags=lags, kernel=kernel, direction=direction,
        quadrature_labels=model.quadrature_labels, channel_labels=model.channel_labels,
    )


def apply_kernel(record: MeasurementRecord, modes: ModeFunctionSet) -> np.ndarray:
    """Contract a record against a mode-function set.

    Forward kernels weigh increment ``k`` by ``f((n − k)dt)`` and backward
    kernels by ``f((k + 1)dt)``, the lags at which the steady filter and
    retrodictor inject it.
    """
    n = record.n_steps
    if len(modes.lags) < n + 1:
        raise GridMismatch(f"kernel has {len(modes.lags)} lags; the record needs {n + 1}")
    if n and not np.isclose(modes.dt, record.dt, rtol=GRID_TOL, atol=0.0):
        raise GridMismatch(f"kernel spacing {modes.dt:g} differs from record dt {record.dt:g}")
    if modes.kernel.shape[2] != record.n_channels:
        raise GridMismatch(f"kernel has {modes.kernel.shape[2]} channels, record {record.n_channels}")
    if Direction.parse(modes.direction) is Direction.FORWARD:
        weights = modes.kernel[n:0:-1]
    else:
        weights = modes.kernel[1:n + 1]
    return np.einsum("kqc,kc->q", weights, record.increments)
