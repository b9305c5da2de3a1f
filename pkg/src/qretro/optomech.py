"""Coarse-grained optomechanics: sideband rates, scheme models, closed forms and sweeps.

One mechanical mode in the frame rotating at its effective frequency, with
the cavity adiabatically eliminated. The drive detuning sets the Stokes and
anti-Stokes rates Γ±; the local oscillator picks which sideband (or the
carrier) is homodyned.
"""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from qretro.errors import NoSteadyState, UnstableDrive
from qretro.model import LinearModel, ladder_row, rotate_measurement
from qretro.models.optomech_params import OptomechParams, Scheme
from qretro.riccati import CovarianceSolution, Direction, steady_state
from qretro.trajectory import ModeFunctionSet, worker_count

logger = logging.getLogger(__name__)

REGIME_RATIO = 20.0
WEAK_COUPLING = 0.1

AXES = ("eta", "cq", "delta_c", "delta_c_over_omega_m", "omega_m_over_kappa")


class Cooperativities(NamedTuple):
    c_cl: float
    c_minus: float
    c_plus: float
    cq: float
    cq_minus: float
    cq_plus: float


class DriveStability(NamedTuple):
    stable: bool
    margin: float


def sideband_rates(params: OptomechParams) -> tuple[float, float]:
    """(Γ₋, Γ₊) with Γ± = g²κ / ((κ/2)² + (−Δ_c ± Ω_m)²)."""
    half = (params.kappa / 2.0) ** 2
    scale = params.g ** 2 * params.kappa
    gamma_minus = scale / (half + (-params.delta_c - params.omega_m) ** 2)
    gamma_plus = scale / (half + (-params.delta_c + params.omega_m) ** 2)
    return gamma_minus, gamma_plus


def resonant_rate(params: OptomechParams) -> float:
    """Γ for a drive on cavity resonance."""
    return params.g ** 2 * params.kappa / ((params.kappa / 2.0) ** 2 + params.omega_m ** 2)


def enhancement_factors(params: OptomechParams) -> tuple[float, float]:
    """(f₋, f₊) such that Γ± = Γ·f±."""
    ratio = (params.omega_m / params.kappa) ** 2
    f_minus = (1.0 + 4.0 * ratio) / (1.0 + 4.0 * ((-params.delta_c - params.omega_m) / params.kappa) ** 2)
    f_plus = (1.0 + 4.0 * ratio) / (1.0 + 4.0 * ((-params.delta_c + params.omega_m) / params.kappa) ** 2)
    return f_minus, f_plus


def effective_frequency(params: OptomechParams) -> float:
    """Ω_eff = Ω_m − √2 g²(β₊ + β₋), the optical-spring-shifted mechanical frequency."""
    half = (params.kappa / 2.0) ** 2
    shifts = [params.delta_c + params.omega_m, params.delta_c - params.omega_m]
    beta = sum(s / (half + s ** 2) for s in shifts)
    return params.omega_m - math.sqrt(2.0) * params.g ** 2 * beta


def bare_cooperativity(params: OptomechParams) -> float:
    """C = C_cl κ² / (κ² + 4Ω_m²), the cooperativity of a resonant drive."""
    c_cl = 4.0 * params.g ** 2 / (params.kappa * params.gamma)
    return c_cl * params.kappa ** 2 / (params.kappa ** 2 + 4.0 * params.omega_m ** 2)


def cooperativities(params: OptomechParams) -> Cooperativities:
    gamma_minus, gamma_plus = sideband_rates(params)
    thermal = params.nbar + 1.0
    c_minus = gamma_minus / params.gamma
    c_plus = gamma_plus / params.gamma
    return Cooperativities(
        c_cl=4.0 * params.g ** 2 / (params.kappa * params.gamma),
        c_minus=c_minus,
        c_plus=c_plus,
        cq=bare_cooperativity(params) / thermal,
        cq_minus=c_minus / thermal,
        cq_plus=c_plus / thermal,
    )


def drive_stability(params: OptomechParams) -> DriveStability:
    """Stable iff Γ₊ < Γ₋ + γ; the margin is Γ₋ + γ − Γ₊."""
    gamma_minus, gamma_plus = sideband_rates(params)
    margin = gamma_minus + params.gamma - gamma_plus
    return DriveStability(stable=margin > 0.0, margin=margin)


def regime_warnings(params: OptomechParams) -> list[str]:
    """Rotating-wave and weak-coupling conditions that ``params`` violates."""
    warnings = []
    spring = params.g ** 2 / params.kappa
    if spring > 0.0 and params.omega_m / spring < REGIME_RATIO:
        warnings.append(f"Ω_m/(g²/κ) = {params.omega_m / spring:.3g} < {REGIME_RATIO:g}: rotating-wave terms not negligible")
    if params.nbar > 0.0:
        heating = params.nbar * params.gamma
        if params.omega_m / heating < REGIME_RATIO:
            warnings.append(f"Ω_m/(n̄γ) = {params.omega_m / heating:.3g} < {REGIME_RATIO:g}: thermal rate too fast")
        if params.mechanical_quality / params.nbar < REGIME_RATIO:
            warnings.append(f"Q/n̄ = {params.mechanical_quality / params.nbar:.3g} < {REGIME_RATIO:g}")
    if params.g / params.kappa > WEAK_COUPLING:
        warnings.append(f"g/κ = {params.g / params.kappa:.3g} > {WEAK_COUPLING:g}: outside the weak-coupling limit")
    return warnings


def lo_detuning(params: OptomechParams, scheme: Scheme) -> float:
    """Δ_lo selected by the scheme: 0 on the carrier, ∓Ω_eff on the red/blue sideband."""
    scheme = Scheme(scheme)
    if scheme.sideband == "carrier":
        return 0.0
    omega_eff = effective_frequency(params)
    return -omega_eff if scheme.sideband == "red" else omega_eff


def build_scenario(params: OptomechParams, scheme: Scheme) -> LinearModel:
    """Coarse-grained single-mode model of the drive/detection ``scheme``.

    Jumps are √(γ(n̄+1))a, √(γn̄)a†, √Γ₋a and √Γ₊a†. The carrier channels
    measure x and p at rate ηΓ. A sideband LO gives one DC channel on the
    operator it makes resonant and two channels of weight √(ηΓ/2) from the
    cosine and sine components at twice the mechanical frequency.
    """
    scheme = Scheme(scheme)
    if scheme.detuned and params.delta_c == 0.0:
        raise ValueError(f"scheme {scheme.value} needs a non-zero delta_c")
    stability = drive_stability(params)
    if not stability.stable:
        raise UnstableDrive(
            f"Γ₊ ≥ Γ₋ + γ (margin {stability.margin:.3e}); the mechanics is parametrically unstable"
        )
    for message in regime_warnings(params):
        logger.warning("%s", message)

    gamma_minus, gamma_plus = sideband_rates(params)
    lower = ladder_row(1, 0, 1.0, 0.0)
    raise_ = ladder_row(1, 0, 0.0, 1.0)
    jumps = [
        math.sqrt(params.gamma * (params.nbar + 1.0)) * lower,
        math.sqrt(params.gamma * params.nbar) * raise_,
        math.sqrt(gamma_minus) * lower,
        math.sqrt(gamma_plus) * raise_,
    ]

    eta = params.eta
    if scheme.sideband == "carrier":
        weight = math.sqrt(eta * gamma_minus)
        measurements = [weight * np.array([1.0, 0.0]), weight * np.array([0.0, 1.0])]
        labels = ("c", "s")
    elif scheme.sideband == "red":
        half = math.sqrt(eta * gamma_minus / 2.0)
        measurements = [math.sqrt(eta * gamma_plus) * raise_, half * lower, -1j * half * lower]
        labels = ("dc", "c2", "s2")
    else:
        half = math.sqrt(eta * gamma_plus / 2.0)
        measurements = [math.sqrt(eta * gamma_minus) * lower, half * raise_, 1j * half * raise_]
        labels = ("dc", "c2", "s2")

    model = LinearModel.from_channels(
        n_modes=1,
        jumps=jumps,
        measurements=measurements,
        channel_labels=labels,
        coarse_grained=scheme.sideband != "carrier",
        name=f"optomech-{scheme.value}",
    )
    if params.phi_lo:
        model = rotate_measurement(model, params.phi_lo)
    logger.info(
        "built %s: Γ₋=%.4g Γ₊=%.4g Δ_lo=%.4g", model.name, gamma_minus, gamma_plus, lo_detuning(params, scheme)
    )
    return model


@dataclass(frozen=True)
class ClosedFormVariances:
    """Printed steady-state variances; ``None`` where no expression exists."""

    v_xx: float
    v_pp: Optional[float] = None
    v_xx_approx: Optional[float] = None
    v_pp_approx: Optional[float] = None


def _resonant(eta, c, nbar, cq, forward):
    root = math.sqrt(1.0 + 8.0 * eta * c * (2.0 * c + 2.0 * nbar + 1.0))
    v = (root - 1.0) / (4.0 * eta * c) if forward else (root + 1.0) / (4.0 * eta * c)
    approx = math.sqrt((cq + 1.0) / (eta * cq)) if cq > 0 else None
    return ClosedFormVariances(v_xx=v, v_pp=v, v_xx_approx=approx, v_pp_approx=approx)


def _red_lo(eta, c, nbar, cq, forward):
    root_x = math.sqrt(1.0 + 4.0 * eta * c * ((3.0 - 2.0 * eta) * c + 3.0 * nbar + 2.0))
    root_p = math.sqrt(1.0 + 4.0 * eta * c * (c + nbar))
    big_x = math.sqrt(((3.0 - 2.0 * eta) * cq + 3.0) / (eta * cq)) if cq > 0 else math.nan
    big_p = math.sqrt((cq + 1.0) / (eta * cq)) if cq > 0 else math.nan
    if forward:
        return ClosedFormVariances(
            v_xx=(root_x - 1.0) / (3.0 * eta * c) - 1.0 / 3.0,
            v_pp=(root_p - 1.0) / (eta * c) + 1.0,
            v_xx_approx=2.0 / 3.0 * big_x - 1.0 / 3.0,
            v_pp_approx=2.0 * big_p + 1.0,
        )
    return ClosedFormVariances(
        v_xx=(root_x + 1.0) / (3.0 * eta * c) + 1.0 / 3.0,
        v_pp=(root_p + 1.0) / (eta * c) - 1.0,
        v_xx_approx=2.0 / 3.0 * big_x + 1.0 / 3.0,
        v_pp_approx=2.0 * big_p - 1.0,
    )


def _blue_lo(eta, c, nbar, cq, forward):
    root_x = math.sqrt(1.0 + 4.0 * eta * c * ((3.0 - 2.0 * eta) * c + 3.0 * nbar + 1.0))
    root_p = math.sqrt(1.0 + 4.0 * eta * c * (c + nbar + 1.0))
    big_x = math.sqrt(((3.0 - 2.0 * eta) * cq + 3.0) / (eta * cq)) if cq > 0 else math.nan
    big_p = math.sqrt((cq + 1.0) / (eta * cq)) if cq > 0 else math.nan
    if forward:
        return ClosedFormVariances(
            v_xx=(root_x - 1.0) / (3.0 * eta * c) + 1.0 / 3.0,
            v_pp=(root_p - 1.0) / (eta * c) - 1.0,
            v_xx_approx=big_x / 3.0 + 1.0 / 6.0,
            v_pp_approx=big_p - 0.5,
        )
    return ClosedFormVariances(
        v_xx=(root_x + 1.0) / (3.0 * eta * c) - 1.0 / 3.0,
        v_pp=(root_p + 1.0) / (eta * c) + 1.0,
        v_xx_approx=2.0 / 3.0 * big_x - 1.0 / 3.0,
        v_pp_approx=2.0 * big_p + 1.0,
    )


def _detuned_forward(eta, c_minus, c_plus, nbar):
    r = (
        (c_minus - c_plus + 1.0) ** 2
        + 4.0 * eta * (3.0 - 2.0 * eta) * c_minus * c_plus
        + 8.0 * eta * c_plus * (nbar + 1.0)
        + 4.0 * nbar * eta * c_minus
    )
    numerator = -1.0 - (1.0 - eta) * c_minus + (1.0 - 2.0 * eta) * c_plus + math.sqrt(r)
    return ClosedFormVariances(v_xx=numerator / (eta * (c_minus + 2.0 * c_plus)))


def _detuned_backward(eta, c_minus, c_plus, nbar):
    s = (
        (c_minus - c_plus + 1.0) ** 2
        + 4.0 * eta * (3.0 - 2.0 * eta) * c_minus * c_plus
        + 4.0 * eta * c_plus * (nbar + 1.0)
        + 8.0 * nbar * eta * c_minus
    )
    numerator = 1.0 - (1.0 - eta) * c_plus + (1.0 - 2.0 * eta) * c_minus + math.sqrt(s)
    return ClosedFormVariances(v_xx=numerator / (eta * (2.0 * c_minus + c_plus)))


def closed_form_variances(
    params: OptomechParams, scheme: Scheme, direction: Direction
) -> Optional[ClosedFormVariances]:
    """Printed steady-state variances of ``scheme`` in ``direction``.

    The detuned drive has expressions only for preparation on the red
    sideband and retrodiction on the blue one; other combinations, and
    ``ηC = 0``, return None.
    """
    scheme = Scheme(scheme)
    forward = Direction.parse(direction) is Direction.FORWARD
    eta, nbar = params.eta, params.nbar
    if scheme.detuned:
        coop = cooperativities(params)
        if eta == 0.0 or coop.c_minus + coop.c_plus == 0.0:
            return None
        if scheme is Scheme.DETUNED_RED and forward:
            return _detuned_forward(eta, coop.c_minus, coop.c_plus, nbar)
        if scheme is Scheme.DETUNED_BLUE and not forward:
            return _detuned_backward(eta, coop.c_minus, coop.c_plus, nbar)
        return None

    c = bare_cooperativity(params)
    if eta * c == 0.0:
        return None
    cq = c / (nbar + 1.0)
    if scheme is Scheme.RESONANT_RESONANT:
        return _resonant(eta, c, nbar, cq, forward)
    if scheme is Scheme.RESONANT_RED:
        return _red_lo(eta, c, nbar, cq, forward)
    return _blue_lo(eta, c, nbar, cq, forward)


def resonant_eigenvalue(params: OptomechParams) -> float:
    """λ = −(γ/2)√(1 + 8ηC(2C + 2n̄ + 1)), shared by the resonant filter and retrodictor."""
    c = bare_cooperativity(params)
    return -0.5 * params.gamma * math.sqrt(1.0 + 8.0 * params.eta * c * (2.0 * c + 2.0 * params.nbar + 1.0))


def resonant_gap(params: OptomechParams) -> float:
    """V_E − V_ρ = 1/(2ηC) for resonant drive and detection."""
    return 1.0 / (2.0 * params.eta * bare_cooperativity(params))


def sub_shot_noise_efficiency(params: OptomechParams, scheme: Scheme, direction: Direction) -> Optional[float]:
    """Efficiency above which the squeezed variance ``V_xx`` drops below 1.

    Defined for preparation on the red LO, retrodiction on the blue LO and
    retrodiction with a detuned drive; None otherwise.
    """
    scheme = Scheme(scheme)
    forward = Direction.parse(direction) is Direction.FORWARD
    c = bare_cooperativity(params)
    if scheme is Scheme.RESONANT_RED and forward:
        return (c + params.nbar) / (2.0 * c)
    if scheme is Scheme.RESONANT_BLUE and not forward:
        return (c + params.nbar + 1.0) / (2.0 * c)
    if scheme is Scheme.DETUNED_BLUE and not forward:
        return 0.5 * (1.0 + 1.0 / cooperativities(params).cq_minus)
    return None


def min_sideband_resolution(cq: float) -> float:
    """Ω_m/κ above which a drive at Δ_c = −Ω_m lifts C_q⁻ = C_q(1 + 4(Ω_m/κ)²) past 1."""
    if cq <= 0.0:
        raise ValueError(f"quantum cooperativity must be positive, got {cq}")
    if cq >= 1.0:
        return 0.0
    return math.sqrt((1.0 - cq) / (4.0 * cq))


def resonant_mode_function(
    params: OptomechParams, direction: Direction, times: Sequence[float]
) -> ModeFunctionSet:
    """Closed-form kernels of the resonant scheme: √(ηΓ)·V·e^{λt} on f_xc and f_ps."""
    direction = Direction.parse(direction)
    closed = closed_form_variances(params, Scheme.RESONANT_RESONANT, direction)
    if closed is None:
        raise ValueError("resonant mode functions need η > 0 and C > 0")
    times = np.asarray(times, dtype=float)
    amplitude = math.sqrt(params.eta * resonant_rate(params)) * closed.v_xx
    envelope = amplitude * np.exp(resonant_eigenvalue(params) * times)
    kernel = np.zeros((len(times), 2, 2))
    kernel[:, 0, 0] = envelope
    kernel[:, 1, 1] = envelope
    return ModeFunctionSet(
        lags=times, kernel=kernel, direction=direction,
        quadrature_labels=("x", "p"), channel_labels=("c", "s"),
    )


def parse_axis(text: str) -> tuple[str, np.ndarray]:
    """``NAME=start:stop:num[:log]`` or ``NAME=v1,v2,…`` into a name and its values."""
    name, sep, values = text.partition("=")
    name = name.strip()
    if not sep or name not in AXES:
        raise ValueError(f"axis must look like NAME=VALUES with NAME in {AXES}, got {text!r}")
    values = values.strip()
    if ":" in values:
        parts = values.split(":")
        if len(parts) not in (3, 4) or (len(parts) == 4 and parts[3] != "log"):
            raise ValueError(f"range values must be start:stop:num[:log], got {values!r}")
        start, stop, num = float(parts[0]), float(parts[1]), int(parts[2])
        if len(parts) == 4:
            if start <= 0.0 or stop <= 0.0:
                raise ValueError(f"log axis {name} needs positive bounds")
            return name, np.geomspace(start, stop, num)
        return name, np.linspace(start, stop, num)
    return name, np.array([float(v) for v in values.split(",") if v.strip()])


def point_params(template: OptomechParams, point: dict[str, float]) -> OptomechParams:
    """Apply one sweep point to ``template``.

    Changing κ keeps the template's bare cooperativity; a ``cq`` value sets
    C = C_q(n̄ + 1). In both cases g is recomputed.
    """
    updates: dict[str, float] = {}
    if "eta" in point:
        updates["eta"] = point["eta"]
    omega_m = template.omega_m
    kappa = template.kappa
    if "omega_m_over_kappa" in point:
        kappa = omega_m / point["omega_m_over_kappa"]
    if "delta_c" in point:
        updates["delta_c"] = point["delta_c"]
    if "delta_c_over_omega_m" in point:
        updates["delta_c"] = point["delta_c_over_omega_m"] * omega_m
    if "cq" in point or kappa != template.kappa:
        c = point["cq"] * (template.nbar + 1.0) if "cq" in point else bare_cooperativity(template)
        updates["kappa"] = kappa
        updates["g"] = math.sqrt(c * template.gamma * ((kappa / 2.0) ** 2 + omega_m ** 2) / kappa)
    return template.model_copy(update=updates)


def _purity(solution: CovarianceSolution) -> float:
    if solution.divergent:
        return 0.0
    return float(1.0 / math.sqrt(np.linalg.det(solution.v)))


def _numeric(model: LinearModel, direction: Direction) -> Optional[CovarianceSolution]:
    try:
        return steady_state(model, direction, allow_divergence=True)
    except NoSteadyState as e:
        logger.warning("no %s steady state for %s: %s", direction.value, model.name, e)
        return None


def evaluate_point(template: OptomechParams, scheme: Scheme, point: dict[str, float]) -> dict:
    """One sweep row: numeric and printed variances in both directions."""
    params = point_params(template, point)
    coop = cooperativities(params)
    row: dict = dict(point)
    row.update(c_q=coop.cq, c_q_minus=coop.cq_minus, stable=drive_stability(params).stable)
    try:
        model = build_scenario(params, scheme)
    except (UnstableDrive, ValueError) as e:
        logger.info("skipping point %s: %s", point, e)
        model = None

    for direction, tag in ((Direction.FORWARD, "rho"), (Direction.BACKWARD, "E")):
        solution = _numeric(model, direction) if model is not None else None
        closed = closed_form_variances(params, scheme, direction)
        row[f"v_xx_{tag}"] = float(solution.v[0, 0]) if solution is not None else math.nan
        row[f"v_pp_{tag}"] = float(solution.v[1, 1]) if solution is not None else math.nan
        row[f"purity_{tag}"] = _purity(solution) if solution is not None else math.nan
        row[f"closed_xx_{tag}"] = closed.v_xx if closed is not None else math.nan
        row[f"closed_pp_{tag}"] = closed.v_pp if closed is not None and closed.v_pp is not None else math.nan
        row[f"converged_{tag}"] = bool(solution is not None and solution.converged)
    return row


def sweep(
    template: OptomechParams,
    scheme: Scheme,
    axes: Optional[Iterable[tuple[str, Sequence[float]]]] = None,
) -> list[dict]:
    """Evaluate ``scheme`` on the Cartesian product of ``axes``; rows follow the product order.

    With no axes the template itself is the single row.
    """
    axes = [(name, np.asarray(values, dtype=float)) for name, values in (axes or [])]
    for name, _ in axes:
        if name not in AXES:
            raise ValueError(f"unknown sweep axis {name!r}; expected one of {AXES}")
    names = [name for name, _ in axes]
    points = [dict(zip(names, map(float, combo))) for combo in itertools.product(*(v for _, v in axes))]
    logger.info("sweeping %s over %d points (%s)", Scheme(scheme).value, len(points), ", ".join(names) or "no axes")
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(lambda point: evaluate_point(template, scheme, point), points))
