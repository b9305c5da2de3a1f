import math

import numpy as np
import pytest

from qretro.errors import NonPositiveDiffusion
from qretro.model import (
    Detection,
    Interaction,
    LinearModel,
    decaying_cavity,
    decompose_lambda,
    diffusion_matrix,
    drift_matrix,
    ladder_row,
    rotate_measurement,
    symplectic_form,
    validate_model,
)
from qretro.models.model_file import ModelFile
from qretro.models.optomech_params import OptomechParams, Scheme
from qretro.optomech import build_scenario


def test_symplectic_form_layout():
    sigma = symplectic_form(2)
    assert np.array_equal(sigma[:2, 2:], np.eye(2))
    assert np.array_equal(sigma[2:, :2], -np.eye(2))
    assert np.array_equal(sigma @ sigma, -np.eye(4))


def test_ladder_row_for_annihilation():
    row = ladder_row(1, 0, 1.0, 0.0)
    assert np.allclose(row, [1.0 / math.sqrt(2.0), 1j / math.sqrt(2.0)])


@pytest.mark.parametrize("interaction", list(Interaction))
@pytest.mark.parametrize("detection", list(Detection))
def test_decaying_cavity_passes_validation(interaction, detection):
    model = decaying_cavity(1.0, 0.8, interaction, detection)
    report = validate_model(model)
    assert report.passed, report.failures()
    assert model.n_channels == (1 if detection is Detection.HOMODYNE else 2)


def test_damped_cavity_drift_and_diffusion():
    model = decaying_cavity(2.0, 0.5)
    assert np.allclose(drift_matrix(model), -np.eye(2))
    # D = 2σ(Δ − BᵀB)σᵀ is PSD for any η ≤ 1
    assert np.linalg.eigvalsh(diffusion_matrix(model)).min() >= -1e-12


def test_overcounted_measurement_fails_validation():
    jump = ladder_row(1, 0, 1.0, 0.0)
    model = LinearModel.from_channels(1, jumps=[jump], measurements=[math.sqrt(2.0) * jump], name="overcounted")
    report = validate_model(model)
    failed = {check.name for check in report.failures()}
    assert not report.passed
    assert {"information_constraint", "diffusion_psd"} <= failed
    with pytest.raises(NonPositiveDiffusion):
        diffusion_matrix(model)


def test_coarse_grained_sideband_model_only_warns():
    params = OptomechParams.for_cooperativity(1.0, eta=1.0, gamma=1e-4)
    model = build_scenario(params, Scheme.RESONANT_RED)
    report = validate_model(model)
    assert model.coarse_grained
    assert report.passed
    info = next(c for c in report.checks if c.name == "information_constraint")
    assert info.severity.value == "warning"


def test_rotate_measurement_moves_homodyne_to_p():
    model = decaying_cavity(1.0, 1.0)
    rotated = rotate_measurement(model, math.pi / 2.0)
    weight = 1.0 / math.sqrt(2.0)
    assert np.allclose(rotated.a_meas, [[0.0, weight]])
    assert np.allclose(rotated.b_meas, [[-weight, 0.0]])
    assert rotate_measurement(model, 0.0) is model


def test_model_file_round_trip():
    model = decaying_cavity(1.0, 0.8, detection=Detection.HETERODYNE)
    restored = ModelFile.model_validate_json(
        ModelFile.from_linear_model(model).model_dump_json(by_alias=True)
    ).to_linear_model()
    assert np.allclose(restored.lambda_, model.lambda_)
    assert np.allclose(restored.a_meas, model.a_meas)
    assert np.allclose(restored.b_meas, model.b_meas)
    assert restored.channel_labels == ("c", "s")


def test_model_file_rejects_unknown_keys():
    document = ModelFile.model_json_schema()["example"] | {"kappa": 1.0}
    with pytest.raises(ValueError):
        ModelFile.model_validate(document)


def test_decompose_lambda_of_annihilation_jump():
    gamma = 2.0
    delta, omega = decompose_lambda(np.atleast_2d(math.sqrt(gamma) * ladder_row(1, 0, 1.0, 0.0)))
    assert np.allclose(delta, gamma / 2.0 * np.eye(2))
    assert np.allclose(omega, gamma / 2.0 * symplectic_form(1))


def test_delta_plus_i_omega_is_hermitian_psd_and_mixing_invariant():
    rng = np.random.default_rng(21)
    lambda_ = rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))
    delta, omega = decompose_lambda(lambda_)
    combined = delta + 1j * omega
    assert np.allclose(combined, combined.conj().T, atol=1e-12)
    assert np.linalg.eigvalsh(combined).min() >= -1e-10
    unitary, _ = np.linalg.qr(rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))
    mixed_delta, mixed_omega = decompose_lambda(unitary @ lambda_)
    assert np.allclose(mixed_delta, delta, atol=1e-12)
    assert np.allclose(mixed_omega, omega, atol=1e-12)
