import dataclasses

import pytest

from qretro import optomech, verify


@pytest.mark.parametrize("name", [
    "cavity_forward",
    "cavity_backward",
    "tms_swap",
    "optomech_resonant",
    "sidebands",
    "detuned",
    "fock_oracle",
])
def test_deterministic_checks_pass(name):
    result = verify.run_check(name, quick=True)
    assert result.passed, result.detail
    assert result.seconds >= 0.0


@pytest.mark.slow
@pytest.mark.parametrize("name", [
    "retrodiction_statistics",
    "ensemble_consistency",
    "discretization_order",
])
def test_monte_carlo_checks_pass(name):
    result = verify.run_check(name, quick=True)
    assert result.passed, result.detail


def test_perturbed_closed_form_is_caught(monkeypatch):
    original = optomech.closed_form_variances

    def perturbed(params, scheme, direction):
        closed = original(params, scheme, direction)
        if closed is None:
            return None
        return dataclasses.replace(closed, v_xx=closed.v_xx * (1.0 + 1e-3))

    monkeypatch.setattr(optomech, "closed_form_variances", perturbed)
    result = verify.run_check("optomech_resonant", quick=True)
    assert not result.passed
    assert result.magnitude == pytest.approx(1e-3, rel=1e-2)


def test_crashing_check_is_reported_as_failure(monkeypatch):
    def explode(quick):
        raise RuntimeError("boom")

    monkeypatch.setitem(verify.CHECKS, "cavity_forward", explode)
    result = verify.run_check("cavity_forward")
    assert not result.passed
    assert result.magnitude is None
    assert "RuntimeError: boom" in result.detail


def test_report_counts_failures(monkeypatch):
    monkeypatch.setitem(verify.CHECKS, "tms_swap", lambda quick: (False, 1.0, "forced"))
    report = verify.run_checks(quick=True, names=["cavity_forward", "tms_swap"])
    assert not report.passed
    assert report.n_failed == 1
    assert report.to_minimal_dict() == {"passed": False, "n_failed": 1}


def test_unknown_check_name():
    with pytest.raises(ValueError):
        verify.run_checks(names=["nope"])
