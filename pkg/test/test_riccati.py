import numpy as np
import pytest

from qretro.errors import DivergenceDetected, NoSteadyState, UnstableUnconditional
from qretro.model import Interaction, decaying_cavity
from qretro.riccati import (
    CovariancePropagator,
    Direction,
    conditional_drift,
    conditional_drift_backward,
    conditional_drift_forward,
    default_dt,
    integrate_covariance,
    lyapunov_unconditional,
    mean_gain,
    riccati_rhs,
    steady_state,
)


@pytest.mark.parametrize("eta", [0.3, 0.8, 1.0])
def test_cavity_forward_steady_state_is_vacuum(eta):
    solution = steady_state(decaying_cavity(1.0, eta), Direction.FORWARD)
    assert solution.converged
    assert solution.stable
    assert np.allclose(solution.v, np.eye(2), atol=1e-9)


@pytest.mark.parametrize("eta", [0.5, 0.9])
def test_cavity_backward_steady_state(eta):
    solution = steady_state(decaying_cavity(1.0, eta), "bwd", allow_divergence=True)
    assert solution.direction is Direction.BACKWARD
    assert solution.divergent == (1,)
    assert solution.v[0, 0] == pytest.approx((1.0 - eta) / eta, rel=1e-9)
    assert np.isinf(solution.v[1, 1])
    assert np.isnan(solution.m[1]).all()


def test_divergence_raises_without_permission():
    with pytest.raises(NoSteadyState) as excinfo:
        steady_state(decaying_cavity(1.0, 0.5), Direction.BACKWARD)
    assert excinfo.value.divergent == (1,)
    assert excinfo.value.solution.v[0, 0] == pytest.approx(1.0)


def test_two_mode_squeezing_forward_matches_beam_splitter_backward():
    rng = np.random.default_rng(3)
    bs = decaying_cavity(1.0, 0.7, Interaction.BEAM_SPLITTER)
    tms = decaying_cavity(1.0, 0.7, Interaction.TWO_MODE_SQUEEZING)
    root = rng.normal(size=(2, 2))
    v = root @ root.T + 0.1 * np.eye(2)
    assert np.allclose(riccati_rhs(tms, v, Direction.FORWARD), riccati_rhs(bs, v, Direction.BACKWARD), atol=1e-12)
    assert np.allclose(
        conditional_drift(tms, v, Direction.FORWARD), conditional_drift(bs, v, Direction.BACKWARD), atol=1e-12
    )
    assert np.allclose(mean_gain(tms, v, Direction.FORWARD), mean_gain(bs, v, Direction.BACKWARD), atol=1e-12)


def test_propagator_keeps_steady_state_fixed():
    model = decaying_cavity(1.0, 0.6)
    solution = steady_state(model, Direction.FORWARD)
    stepped = CovariancePropagator(model, Direction.FORWARD, 0.05).step(solution.v)
    assert np.allclose(stepped, solution.v, atol=1e-12)


def test_propagator_step_only_touches_kept_block():
    model = decaying_cavity(1.0, 0.6)
    v = np.diag([3.0, 7.0])
    stepped = CovariancePropagator(model, Direction.FORWARD, 0.05).step(v, keep=[0])
    assert stepped[1, 1] == 7.0
    assert stepped[0, 0] < 3.0


@pytest.mark.parametrize("method", ["rk4", "exact"])
def test_integration_relaxes_to_steady_state(method):
    model = decaying_cavity(1.0, 0.8)
    trajectory = integrate_covariance(model, 4.0 * np.eye(2), duration=30.0, dt=0.01, method=method)
    assert len(trajectory) == 3001
    assert np.allclose(trajectory.final, np.eye(2), atol=1e-8)


def test_backward_integration_reports_divergence():
    model = decaying_cavity(1.0, 0.5)
    with pytest.raises(DivergenceDetected) as excinfo:
        integrate_covariance(model, np.eye(2), duration=40.0, dt=0.01, direction=Direction.BACKWARD)
    assert excinfo.value.indices == (1,)
    assert excinfo.value.trajectory.times[-1] < 0.0


def test_unconditional_covariance_of_damped_cavity_is_vacuum():
    assert np.allclose(lyapunov_unconditional(decaying_cavity(1.0, 0.5)), np.eye(2))


def test_undamped_mode_has_no_unconditional_state():
    with pytest.raises(UnstableUnconditional):
        lyapunov_unconditional(decaying_cavity(0.0, 1.0))


def test_default_dt_scales_with_slowest_rate():
    assert default_dt(decaying_cavity(1.0, 1.0)) == pytest.approx(2e-3)
    assert default_dt(decaying_cavity(0.0, 1.0)) == pytest.approx(1e-3)


def test_forward_and_backward_drifts_share_the_measurement_term():
    model = decaying_cavity(1.5, 0.6)
    v = np.array([[0.8, 0.1], [0.1, 1.3]])
    forward = conditional_drift_forward(model, v)
    backward = conditional_drift_backward(model, v)
    assert np.allclose(forward + backward, -4.0 * v @ model.a_meas.T @ model.a_meas)
    assert np.array_equal(conditional_drift(model, v, Direction.BACKWARD), backward)
