import math

import numpy as np
import pytest

from qretro.errors import CutoffTooSmall, NonPositiveDeterminant, NotPositiveDefinite, PureDirection, SingularSum
from qretro.gaussian import (
    FockOracle,
    effect_trace,
    fock_oracle_trace,
    gamma_exponent,
    heisenberg_check,
    is_symplectic,
    marginal,
    outcome_density,
    outcome_distribution,
    povm_normalization,
    purity,
    williamson,
)
from qretro.trajectory import GaussianEffect, GaussianState


def squeezed_thermal(tau: float, squeeze: float, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return tau * rot @ np.diag([math.exp(2.0 * squeeze), math.exp(-2.0 * squeeze)]) @ rot.T


def test_purity_of_vacuum_and_thermal_states():
    assert purity(np.eye(2)) == pytest.approx(1.0)
    assert purity(3.0 * np.eye(2)) == pytest.approx(1.0 / 3.0)
    with pytest.raises(NonPositiveDeterminant):
        purity(np.diag([1.0, -1.0]))


def test_heisenberg_check():
    ok, min_eig = heisenberg_check(np.eye(2))
    assert ok and min_eig == pytest.approx(0.0, abs=1e-12)
    ok, min_eig = heisenberg_check(0.5 * np.eye(2))
    assert not ok and min_eig == pytest.approx(-0.5)


def test_williamson_single_mode():
    cov = squeezed_thermal(1.7, 0.4, 0.3)
    decomposition = williamson(cov)
    assert decomposition.tau == pytest.approx([1.7])
    assert is_symplectic(decomposition.s)
    assert decomposition.residual < 1e-10


def test_williamson_two_modes_sorted_descending():
    cov = np.zeros((4, 4))
    cov[np.ix_([0, 2], [0, 2])] = squeezed_thermal(1.2, 0.2, 0.0)
    cov[np.ix_([1, 3], [1, 3])] = squeezed_thermal(2.5, 0.1, 1.0)
    decomposition = williamson(cov)
    assert decomposition.tau == pytest.approx([2.5, 1.2])
    assert np.allclose(decomposition.reconstruct(), cov, atol=1e-10)


def test_williamson_rejects_indefinite_matrix():
    with pytest.raises(NotPositiveDefinite):
        williamson(np.diag([1.0, -2.0]))
    with pytest.raises(ValueError):
        williamson(np.eye(3))


def test_gamma_exponent_and_trace():
    # thermal τ: K = arctanh(1/τ) on both quadratures
    gamma = gamma_exponent(3.0 * np.eye(2))
    assert np.allclose(gamma, math.atanh(1.0 / 3.0) * np.eye(2))
    assert effect_trace(3.0 * np.eye(2)) == pytest.approx(math.sqrt(2.0))
    with pytest.raises(PureDirection):
        gamma_exponent(np.eye(2))
    with pytest.raises(PureDirection):
        effect_trace(np.eye(2))


def test_vacuum_effect_on_vacuum_state():
    state = GaussianState.vacuum(1)
    effect = GaussianEffect(np.zeros(2), np.eye(2))
    assert outcome_density(effect, state) == pytest.approx(1.0)


def test_outcome_density_falls_off_with_distance():
    state = GaussianState.coherent([0.0, 0.0])
    near = outcome_density(GaussianEffect([0.5, 0.0], np.eye(2)), state)
    far = outcome_density(GaussianEffect([2.0, 0.0], np.eye(2)), state)
    assert far < near < 1.0
    assert near == pytest.approx(math.exp(-0.125))


def test_outcome_density_rejects_divergent_effect():
    effect = GaussianEffect([0.0, 0.0], np.diag([0.5, np.inf]))
    with pytest.raises(SingularSum):
        outcome_density(effect, GaussianState.vacuum(1))


def test_outcome_distribution_integrates_out_divergent_quadrature():
    effect = GaussianEffect([1.0, 0.0], np.diag([0.5, np.inf]))
    assert effect.divergent == (False, True)
    density = outcome_distribution(effect, GaussianState.vacuum(1))
    assert density == pytest.approx(math.exp(-1.0 / 1.5) / math.sqrt(math.pi * 1.5))


def test_marginal():
    mean, variance = marginal(GaussianState.coherent([2.0, 0.0]), [1.0, 0.0])
    assert mean == 2.0
    assert variance == pytest.approx(0.5)
    with pytest.raises(ValueError):
        marginal(GaussianState.vacuum(1), [1.0, 1.0])


def test_fock_oracle_basics():
    oracle = FockOracle(40)
    assert oracle.commutator_defect() < 1e-12
    assert oracle.bare_trace(3.0 * np.eye(2)) == pytest.approx(effect_trace(3.0 * np.eye(2)), rel=1e-8)
    with pytest.raises(ValueError):
        FockOracle(10)


def test_fock_oracle_agrees_with_closed_form():
    state = GaussianState([0.4, -0.3], squeezed_thermal(1.3, 0.3, 0.7))
    effect = GaussianEffect([-0.2, 0.5], squeezed_thermal(1.6, 0.2, 2.1))
    assert fock_oracle_trace(effect, state) == pytest.approx(outcome_density(effect, state), rel=1e-6)


def test_fock_oracle_pure_state_uses_capped_exponent():
    state = GaussianState.vacuum(1)
    effect = GaussianEffect([0.3, 0.1], 1.5 * np.eye(2))
    assert fock_oracle_trace(effect, state) == pytest.approx(outcome_density(effect, state), rel=1e-6)


def test_fock_oracle_detects_truncation():
    with pytest.raises(CutoffTooSmall):
        fock_oracle_trace(GaussianEffect([0.0, 0.0], 1.5 * np.eye(2)), GaussianState.coherent([8.0, 0.0]))


def test_fock_tail_check_covers_a_window_of_levels():
    # populations 0.58^n: the top two of 40 levels hold ~1e-9, the top ten ~1e-7
    state = GaussianState([0.0, 0.0], 3.76 * np.eye(2))
    effect = GaussianEffect([0.0, 0.0], 1.5 * np.eye(2))
    with pytest.raises(CutoffTooSmall, match="top 10 Fock levels"):
        fock_oracle_trace(effect, state, cutoff=40)
    assert fock_oracle_trace(effect, state, cutoff=80) == pytest.approx(outcome_density(effect, state), rel=1e-6)


def test_displaced_effects_resolve_the_identity():
    state = GaussianState([0.3, -0.2], squeezed_thermal(1.2, 0.2, 0.4))
    step = 0.1
    grid = np.arange(-8.0, 8.0 + step / 2, step)
    total = sum(
        outcome_density(GaussianEffect([x, p], np.eye(2)), state)
        for x in grid for p in grid
    )
    assert total * step**2 / povm_normalization(1) == pytest.approx(1.0, rel=1e-6)
