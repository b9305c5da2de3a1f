import math

import numpy as np
import pytest

from qretro.errors import UnstableDrive
from qretro.models.optomech_params import OptomechParams, Scheme
from qretro.models.scenario_file import ScenarioFile
from qretro.optomech import (
    bare_cooperativity,
    build_scenario,
    closed_form_variances,
    cooperativities,
    drive_stability,
    effective_frequency,
    lo_detuning,
    min_sideband_resolution,
    parse_axis,
    point_params,
    regime_warnings,
    resonant_eigenvalue,
    resonant_gap,
    resonant_mode_function,
    resonant_rate,
    sideband_rates,
    sub_shot_noise_efficiency,
    sweep,
)
from qretro.riccati import Direction, steady_state
from qretro.trajectory import kernel_lags, mode_functions


def params_for(c, nbar=0.0, eta=1.0, **kwargs):
    kwargs.setdefault("gamma", 1e-4)
    return OptomechParams.for_cooperativity(c, nbar=nbar, eta=eta, **kwargs)


def test_for_cooperativity_hits_target():
    params = params_for(3.5, kappa=4.0)
    assert bare_cooperativity(params) == pytest.approx(3.5)
    assert resonant_rate(params) == pytest.approx(3.5 * params.gamma)


def test_resonant_drive_has_equal_sidebands():
    params = params_for(2.0)
    gamma_minus, gamma_plus = sideband_rates(params)
    assert gamma_minus == pytest.approx(gamma_plus)
    assert gamma_minus == pytest.approx(resonant_rate(params))
    assert effective_frequency(params) == pytest.approx(params.omega_m)


def test_red_detuned_drive_favours_cooling():
    params = params_for(1.0, nbar=1.0, kappa=0.25, delta_c=-1.0, gamma=1e-6)
    coop = cooperativities(params)
    assert coop.c_minus > coop.c_plus
    assert coop.cq == pytest.approx(0.5)
    assert coop.cq_minus == pytest.approx(coop.c_minus / 2.0)
    assert drive_stability(params).stable


def test_blue_detuned_drive_is_rejected():
    params = params_for(10.0, kappa=1.0, delta_c=1.0)
    assert not drive_stability(params).stable
    with pytest.raises(UnstableDrive):
        build_scenario(params, Scheme.DETUNED_BLUE)


def test_detuned_scheme_needs_detuning():
    with pytest.raises(ValueError):
        build_scenario(params_for(1.0), Scheme.DETUNED_RED)


def test_regime_warnings():
    assert regime_warnings(params_for(1.0)) == []
    strong = OptomechParams(omega_m=1.0, kappa=1.0, g=0.5, gamma=1e-3)
    assert any("weak-coupling" in message for message in regime_warnings(strong))


@pytest.mark.parametrize("scheme, channels", [
    (Scheme.RESONANT_RESONANT, ("c", "s")),
    (Scheme.RESONANT_RED, ("dc", "c2", "s2")),
    (Scheme.RESONANT_BLUE, ("dc", "c2", "s2")),
])
def test_scheme_channels(scheme, channels):
    model = build_scenario(params_for(1.0, eta=0.5), scheme)
    assert model.channel_labels == channels
    assert model.coarse_grained == (scheme is not Scheme.RESONANT_RESONANT)
    assert len(model.lambda_) == 4


def test_resonant_closed_form_at_unit_cooperativity():
    params = params_for(1.0)
    forward = closed_form_variances(params, Scheme.RESONANT_RESONANT, Direction.FORWARD)
    backward = closed_form_variances(params, Scheme.RESONANT_RESONANT, Direction.BACKWARD)
    assert forward.v_xx == pytest.approx(1.0)
    assert backward.v_xx == pytest.approx(1.5)
    assert backward.v_xx - forward.v_xx == pytest.approx(resonant_gap(params))


@pytest.mark.parametrize("scheme", [Scheme.RESONANT_RESONANT, Scheme.RESONANT_RED, Scheme.RESONANT_BLUE])
@pytest.mark.parametrize("direction", list(Direction))
def test_numeric_steady_state_matches_closed_form(scheme, direction):
    params = params_for(10.0, nbar=2.0, eta=0.7)
    solution = steady_state(build_scenario(params, scheme), direction)
    closed = closed_form_variances(params, scheme, direction)
    assert solution.v[0, 0] == pytest.approx(closed.v_xx, rel=1e-8)
    assert solution.v[1, 1] == pytest.approx(closed.v_pp, rel=1e-8)


def test_resonant_eigenvalue_matches_numeric_drift():
    params = params_for(10.0, nbar=2.0, eta=0.7)
    solution = steady_state(build_scenario(params, Scheme.RESONANT_RESONANT), Direction.FORWARD)
    assert solution.eigen_real_parts == pytest.approx([resonant_eigenvalue(params)] * 2, rel=1e-8)


def test_closed_forms_missing_where_not_printed():
    params = params_for(1.0, nbar=1.0, kappa=0.25, delta_c=-1.0, gamma=1e-6)
    assert closed_form_variances(params, Scheme.DETUNED_RED, Direction.BACKWARD) is None
    assert closed_form_variances(params, Scheme.DETUNED_BLUE, Direction.FORWARD) is None
    assert closed_form_variances(params, Scheme.DETUNED_RED, Direction.FORWARD) is not None
    assert closed_form_variances(params_for(0.0), Scheme.RESONANT_RESONANT, Direction.FORWARD) is None


@pytest.mark.parametrize("scheme, direction", [
    (Scheme.RESONANT_RED, Direction.FORWARD),
    (Scheme.RESONANT_BLUE, Direction.BACKWARD),
])
def test_sub_shot_noise_threshold(scheme, direction):
    template = params_for(10.0, nbar=2.0)
    threshold = sub_shot_noise_efficiency(template, scheme, direction)
    assert 0.0 < threshold < 1.0
    at_threshold = template.model_copy(update={"eta": threshold})
    assert closed_form_variances(at_threshold, scheme, direction).v_xx == pytest.approx(1.0, rel=1e-12)
    assert sub_shot_noise_efficiency(template, Scheme.RESONANT_RESONANT, direction) is None


def test_min_sideband_resolution():
    assert min_sideband_resolution(0.5) == pytest.approx(0.5)
    assert min_sideband_resolution(2.0) == 0.0
    with pytest.raises(ValueError):
        min_sideband_resolution(0.0)


def test_resonant_mode_function_matches_numeric_kernel():
    params = params_for(2.0, nbar=1.0, eta=0.8, gamma=0.05)
    model = build_scenario(params, Scheme.RESONANT_RESONANT)
    lags = kernel_lags(0.5, 40)
    numeric = mode_functions(model, steady_state(model, Direction.FORWARD), lags)
    closed = resonant_mode_function(params, Direction.FORWARD, lags)
    assert np.allclose(numeric.kernel, closed.kernel, rtol=1e-7, atol=1e-12)


def test_parse_axis():
    name, values = parse_axis("eta=0.1:1:10")
    assert name == "eta" and len(values) == 10 and values[-1] == pytest.approx(1.0)
    name, values = parse_axis("cq=0.01:100:5:log")
    assert values == pytest.approx([0.01, 0.1, 1.0, 10.0, 100.0])
    assert parse_axis("delta_c=-1,-0.5")[1].tolist() == [-1.0, -0.5]
    for bad in ("kappa=1:2:3", "eta", "eta=1:2", "cq=0:1:3:log"):
        with pytest.raises(ValueError):
            parse_axis(bad)


def test_point_params_keeps_cooperativity_semantics():
    template = params_for(4.0, nbar=1.0)
    assert bare_cooperativity(point_params(template, {"cq": 3.0})) == pytest.approx(6.0)
    moved = point_params(template, {"omega_m_over_kappa": 2.0})
    assert moved.kappa == pytest.approx(0.5)
    assert bare_cooperativity(moved) == pytest.approx(4.0)
    assert point_params(template, {"delta_c_over_omega_m": -1.0}).delta_c == -1.0


def test_sweep_without_axes_is_one_row():
    rows = sweep(params_for(1.0), Scheme.RESONANT_RESONANT)
    assert len(rows) == 1
    assert rows[0]["v_xx_rho"] == pytest.approx(1.0, rel=1e-8)
    assert rows[0]["closed_xx_E"] == pytest.approx(1.5)


def test_sweep_follows_product_order():
    rows = sweep(params_for(1.0), Scheme.RESONANT_RESONANT, [("eta", [0.5, 1.0]), ("cq", [1.0, 2.0, 4.0])])
    assert [(row["eta"], row["cq"]) for row in rows] == [
        (0.5, 1.0), (0.5, 2.0), (0.5, 4.0), (1.0, 1.0), (1.0, 2.0), (1.0, 4.0),
    ]
    for row in rows:
        assert row["v_xx_rho"] == pytest.approx(row["closed_xx_rho"], rel=1e-8)
        assert row["c_q"] == pytest.approx(row["cq"])


def test_sweep_marks_unstable_points():
    template = params_for(10.0, kappa=1.0, delta_c=-1.0)
    rows = sweep(template, Scheme.DETUNED_RED, [("delta_c", [-1.0, 1.0])])
    assert rows[0]["stable"] and not rows[1]["stable"]
    assert math.isnan(rows[1]["v_xx_rho"])


def test_scenario_file_checks_detuning():
    example = ScenarioFile.model_json_schema()["example"]
    scenario = ScenarioFile.model_validate(example)
    assert scenario.params().delta_c == -1.0
    with pytest.raises(ValueError):
        ScenarioFile.model_validate(example | {"delta_c": 0.0})
    with pytest.raises(ValueError):
        ScenarioFile.model_validate(example | {"scheme": "resonant_red"})


@pytest.mark.parametrize("scheme,sign", [
    (Scheme.RESONANT_RESONANT, 0.0),
    (Scheme.RESONANT_RED, -1.0),
    (Scheme.RESONANT_BLUE, 1.0),
    (Scheme.DETUNED_RED, -1.0),
])
def test_local_oscillator_sits_on_the_chosen_sideband(scheme, sign):
    params = params_for(1.0, kappa=0.25, delta_c=-1.0 if scheme.detuned else 0.0, gamma=1e-6)
    assert lo_detuning(params, scheme) == pytest.approx(sign * effective_frequency(params))
