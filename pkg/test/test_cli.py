import json
from pathlib import Path

import pytest

from qretro import csvio
from qretro.main import build_parser, main, resolve_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_config_values_are_overridden_by_flags():
    args = build_parser().parse_args(["simulate", "--config", str(CONFIGS / "run_cavity.json"), "--seed", "11"])
    config = resolve_config(args)
    assert config.seed == 11
    assert config.dt == 0.01
    assert Path(config.model) == CONFIGS / "cavity_bs.json"


def test_steady_forward(tmp_path):
    out = tmp_path / "steady.json"
    assert main(["steady", "--config", str(CONFIGS / "cavity_bs.json"), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["direction"] == "forward"
    assert report["divergent"] == []
    assert report["v"][0][0] == pytest.approx(1.0)
    assert report["purity"] == pytest.approx(1.0)


def test_steady_backward_reports_divergence(capsys):
    code = main(["steady", "--config", str(CONFIGS / "cavity_bs.json"), "--direction", "bwd", "--stdout"])
    assert code == 2
    captured = capsys.readouterr()
    report = json.loads(captured.out)
    assert report["divergent"] == ["p"]
    assert report["v"][0][0] == pytest.approx(0.25)
    assert report["v"][1][1] is None
    assert "divergent" in captured.err


def test_steady_of_optomech_scenario(capsys):
    assert main(["steady", "--config", str(CONFIGS / "optomech_resonant_resonant.json"), "--stdout"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["model_name"] == "optomech-resonant_resonant"
    assert report["converged"]


def test_malformed_json_names_the_position(tmp_path, capsys):
    broken = tmp_path / "broken.json"
    broken.write_text('{"n_modes": 1,\n  "H": [[0, 0]\n')
    assert main(["steady", "--config", str(broken)]) == 1
    assert "line" in capsys.readouterr().err


def test_simulate_then_filter_reproduces_truth(tmp_path):
    common = ["--config", str(CONFIGS / "cavity_bs.json"), "--dt", "0.01", "--seed", "5"]
    assert main(["simulate", *common, "--duration", "2", "--out", str(tmp_path / "sim")]) == 0
    record = tmp_path / "sim" / "record.csv"
    assert main(["filter", *common, "--record", str(record), "--out", str(tmp_path / "filt")]) == 0
    truth = (tmp_path / "sim" / "truth.csv").read_bytes()
    assert (tmp_path / "filt" / "filtered.csv").read_bytes() == truth


def test_simulate_is_deterministic(tmp_path):
    for name in ("a", "b"):
        main(["simulate", "--config", str(CONFIGS / "cavity_bs.json"), "--dt", "0.02", "--duration", "1",
              "--seed", "3", "--out", str(tmp_path / name)])
    assert (tmp_path / "a" / "record.csv").read_bytes() == (tmp_path / "b" / "record.csv").read_bytes()


def test_zero_duration_writes_header_only(tmp_path):
    assert main(["simulate", "--config", str(CONFIGS / "cavity_bs.json"), "--dt", "0.01",
                 "--duration", "0", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "record.csv").read_text() == "t,dY_1\n"


def test_simulate_ensemble_writes_indexed_files(tmp_path):
    assert main(["simulate", "--config", str(CONFIGS / "cavity_bs.json"), "--dt", "0.02", "--duration", "1",
                 "--ensemble", "3", "--out", str(tmp_path)]) == 0
    for index in range(3):
        assert (tmp_path / f"record_{index}.csv").exists()
        assert (tmp_path / f"truth_{index}.csv").exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["n_records"] == 3


def test_retrodict_single_record(tmp_path):
    common = ["--config", str(CONFIGS / "cavity_bs.json"), "--dt", "0.01"]
    main(["simulate", *common, "--duration", "1", "--out", str(tmp_path)])
    assert main(["retrodict", *common, "--record", str(tmp_path / "record.csv"), "--out", str(tmp_path)]) == 0
    times, means, covs = csvio.read_trajectory(tmp_path / "retrodicted.csv")
    assert len(times) == 101
    assert covs[-1, 0, 0] == pytest.approx(1e6)


def test_retrodict_ensemble_summary(tmp_path):
    assert main(["retrodict", "--config", str(CONFIGS / "cavity_bs.json"), "--dt", "0.02", "--duration", "2",
                 "--ensemble", "20", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["n_records"] == 20
    assert set(summary["mean"]) <= {"x", "p"}
    assert len(csvio.read_table(tmp_path / "retrodicted_means.csv")) == 20
    assert sorted(p.name for p in tmp_path.glob("retrodicted_*.csv"))[:2] == ["retrodicted_00.csv", "retrodicted_01.csv"]
    assert not (tmp_path / "retrodicted_20.csv").exists()
    times, means, covs = csvio.read_trajectory(tmp_path / "retrodicted_19.csv")
    assert len(times) == 101
    assert covs[-1, 0, 0] == pytest.approx(1e6)


def test_filter_ensemble_matches_simulated_truths(tmp_path):
    common = ["--config", str(CONFIGS / "cavity_bs.json"), "--dt", "0.02", "--duration", "1", "--seed", "4",
              "--ensemble", "12"]
    assert main(["simulate", *common, "--out", str(tmp_path / "sim")]) == 0
    assert main(["filter", *common, "--out", str(tmp_path / "filt")]) == 0
    for index in ("00", "07", "11"):
        truth = (tmp_path / "sim" / f"truth_{index}.csv").read_bytes()
        assert (tmp_path / "filt" / f"filtered_{index}.csv").read_bytes() == truth
        record = (tmp_path / "sim" / f"record_{index}.csv").read_bytes()
        assert (tmp_path / "filt" / f"record_{index}.csv").read_bytes() == record
    summary = json.loads((tmp_path / "filt" / "summary.json").read_text())
    assert summary["n_records"] == 12


def test_ensemble_cannot_go_to_stdout(capsys):
    code = main(["filter", "--config", str(CONFIGS / "cavity_bs.json"), "--dt", "0.02", "--duration", "1",
                 "--ensemble", "2", "--stdout"])
    assert code == 1
    assert "stdout" in capsys.readouterr().err


def test_unphysical_initial_covariance_is_an_input_error(tmp_path, capsys):
    run = tmp_path / "run.json"
    run.write_text(json.dumps({"model": str(CONFIGS / "cavity_bs.json"), "initial_cov": [[0.1, 0.0], [0.0, 0.1]]}))
    code = main(["simulate", "--config", str(run), "--dt", "0.01", "--duration", "0.5", "--out", str(tmp_path)])
    assert code == 1
    assert "uncertainty" in capsys.readouterr().err
    assert not (tmp_path / "record.csv").exists()


def test_retrodict_without_record_fails(capsys):
    assert main(["retrodict", "--config", str(CONFIGS / "cavity_bs.json")]) == 1
    assert "--record" in capsys.readouterr().err


def test_step_too_large_is_an_input_error(tmp_path, capsys):
    assert main(["simulate", "--config", str(CONFIGS / "cavity_bs.json"), "--dt", "1", "--out", str(tmp_path)]) == 1
    assert "dt" in capsys.readouterr().err


def test_sweep_to_stdout(capsys):
    code = main(["sweep", "--config", str(CONFIGS / "optomech_resonant_resonant.json"),
                 "--axis", "eta=0.5,1.0", "--stdout"])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("eta,c_q,c_q_minus,stable,v_xx_rho")
    assert len(lines) == 3


def test_sweep_needs_a_scenario(capsys):
    assert main(["sweep", "--config", str(CONFIGS / "cavity_bs.json"), "--stdout"]) == 1
    assert "scenario" in capsys.readouterr().err


def test_modes_to_stdout(capsys):
    assert main(["modes", "--config", str(CONFIGS / "cavity_heterodyne.json"), "--points", "5", "--stdout"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "t,f_xc,f_xs,f_pc,f_ps"
    assert len(lines) == 6


def test_verify_subset(tmp_path):
    out = tmp_path / "verify.json"
    assert main(["verify", "--quick", "--check", "cavity_forward", "--check", "tms_swap", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["passed"] and report["quick"]
    assert [check["name"] for check in report["checks"]] == ["cavity_forward", "tms_swap"]


def test_verify_unknown_check(capsys):
    assert main(["verify", "--check", "nonexistent"]) == 1
    assert "unknown checks" in capsys.readouterr().err
