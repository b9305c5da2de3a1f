"""Command-line front end: ``qretro <command> [flags]``.

Flags override values from ``--config``, which override built-in defaults.
Data goes to ``--out`` (or stdout with ``--stdout``); diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from qretro import csvio
from qretro.errors import DivergenceDetected, NoSteadyState
from qretro.loaders import load_any, load_model_file, load_scenario
from qretro.model import LinearModel, validate_model
from qretro.models.model_file import ModelFile
from qretro.models.optomech_params import Scheme
from qretro.models.reports import SteadyStateReport
from qretro.models.run_config import DirectionName, RunConfig
from qretro.models.scenario_file import ScenarioFile
from qretro.optomech import build_scenario, parse_axis, sweep
from qretro.riccati import CovarianceSolution, Direction, default_dt, steady_state
from qretro.trajectory import (
    GaussianState,
    filter_forward,
    mode_functions,
    retrodict_backward,
    retrodict_ensemble,
    simulate_ensemble,
    simulate_record,
)
from qretro.verify import run_checks

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGENT = 2


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="model, scenario or run-config JSON file")
    common.add_argument("--dt", type=float, help="time step")
    common.add_argument("--duration", type=float, help="record length")
    common.add_argument("--seed", type=int, help="root seed of the per-trajectory streams")
    common.add_argument("--ensemble", type=int, help="number of records")
    common.add_argument("--v-large", dest="v_large", type=float, help="variance of the identity-effect stand-in")
    common.add_argument("--out", help="output file (steady, sweep, modes, verify) or directory")
    common.add_argument("--record", help="measurement-record CSV for filter/retrodict")
    common.add_argument("--direction", choices=[d.value for d in DirectionName], help="fwd or bwd")
    common.add_argument("--scheme", choices=[s.value for s in Scheme], help="override a scenario's scheme")
    common.add_argument("--stdout", action="store_true", help="write data to stdout")
    common.add_argument("--log-level", default="WARNING", help="logging level for stderr diagnostics")
    common.add_argument("-v", "--verbose", action="store_true", help="shortcut for --log-level INFO")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qretro",
        description="Filtering and retrodiction of continuously monitored linear quantum systems.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()

    commands.add_parser("steady", parents=[common], help="asymptotic covariance of states or effects")
    commands.add_parser("simulate", parents=[common], help="generate records and their true conditional states")
    commands.add_parser("filter", parents=[common], help="forward-filter a record")
    commands.add_parser("retrodict", parents=[common], help="retrodict effects from a record or an ensemble")

    sweep_parser = commands.add_parser("sweep", parents=[common], help="optomechanics parameter sweep")
    sweep_parser.add_argument(
        "--axis", action="append", default=[], metavar="NAME=VALUES",
        help="sweep axis; VALUES is start:stop:num[:log] or a comma list (repeatable)",
    )

    modes_parser = commands.add_parser("modes", parents=[common], help="steady-state mode functions")
    modes_parser.add_argument("--lag-max", dest="lag_max", type=float, help="largest lag (default 10 decay times)")
    modes_parser.add_argument("--points", type=int, default=201, help="number of lags")

    verify_parser = commands.add_parser("verify", parents=[common], help="run the acceptance suite")
    verify_parser.add_argument("--quick", action="store_true", help="reduced grids and ensembles")
    verify_parser.add_argument("--check", action="append", dest="checks", help="run only the named check")
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = "INFO" if args.verbose else str(args.log_level).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge ``--config`` with explicit flags; flags win."""
    config = RunConfig()
    if args.config:
        loaded = load_any(args.config)
        if isinstance(loaded, RunConfig):
            config = loaded
        elif isinstance(loaded, ScenarioFile):
            config = RunConfig(scenario=str(args.config))
        else:
            config = RunConfig(model=str(args.config))
    overrides = {
        key: value
        for key in ("dt", "duration", "seed", "ensemble", "v_large", "out", "record")
        if (value := getattr(args, key, None)) is not None
    }
    if args.direction:
        overrides["direction"] = args.direction
    return RunConfig.model_validate({**config.model_dump(), **overrides})


def load_system(config: RunConfig, scheme: Optional[str] = None) -> tuple[LinearModel, Optional[ScenarioFile]]:
    if config.scenario:
        scenario = load_scenario(config.scenario)
        if scheme:
            scenario = scenario.model_copy(update={"scheme": Scheme(scheme)})
        return build_scenario(scenario.params(), scenario.scheme), scenario
    if config.model:
        return load_model_file(config.model).to_linear_model(), None
    raise ValueError("no model given; pass --config with a model, scenario or run config")


def _checked_model(config: RunConfig, scheme: Optional[str] = None) -> tuple[LinearModel, Optional[ScenarioFile]]:
    model, scenario = load_system(config, scheme)
    report = validate_model(model)
    for failure in report.failures():
        log = logger.error if failure.severity.value == "error" else logger.warning
        log("%s failed: %s = %.3e", failure.name, failure.detail, failure.magnitude)
    if not report.passed:
        raise ValueError(f"model {model.name!r} fails {report.n_failed} structural checks")
    return model, scenario


def _direction(config: RunConfig) -> Direction:
    return Direction.parse(config.direction.value)


def _dt(config: RunConfig, model: LinearModel) -> float:
    return config.dt if config.dt is not None else default_dt(model)


def initial_state(config: RunConfig, model: LinearModel) -> GaussianState:
    """State at t₀: config values, else zero means and the forward steady covariance."""
    means = np.zeros(model.dim) if config.initial_means is None else np.asarray(config.initial_means, dtype=float)
    if config.initial_cov is not None:
        return GaussianState(means, np.asarray(config.initial_cov, dtype=float))
    solution = steady_state(model, Direction.FORWARD, allow_divergence=True)
    if solution.divergent:
        logger.warning("forward state diverges in %s; starting from the vacuum", list(solution.divergent))
        return GaussianState(means, np.eye(model.dim))
    return GaussianState(means, solution.v)


def _nullable(matrix: np.ndarray) -> list:
    return [[float(x) if math.isfinite(x) else None for x in row] for row in np.atleast_2d(matrix)]


def steady_report(model: LinearModel, solution: CovarianceSolution) -> SteadyStateReport:
    labels = model.quadrature_labels
    purity = None if solution.divergent else float(1.0 / math.sqrt(np.linalg.det(solution.v)))
    return SteadyStateReport(
        model_name=model.name,
        direction=solution.direction.value,
        converged=solution.converged,
        divergent=[labels[j] for j in solution.divergent],
        v=_nullable(solution.v),
        m=_nullable(solution.m),
        eigen_real_parts=_nullable(solution.eigen_real_parts)[0],
        purity=purity,
        residual=solution.residual,
    )


def _emit_text(args: argparse.Namespace, config: RunConfig, text: str) -> None:
    if args.stdout:
        sys.stdout.write(text)
    elif config.out:
        path = Path(config.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        logger.info("wrote %s", path)


def _out_dir(config: RunConfig) -> Path:
    path = Path(config.out or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_steady(args: argparse.Namespace, config: RunConfig) -> int:
    model, _ = _checked_model(config, args.scheme)
    solution = steady_state(model, _direction(config), allow_divergence=True)
    report = steady_report(model, solution)
    print(f"{report.direction} steady state of {report.model_name}", file=sys.stderr)
    for label, row in zip(model.quadrature_labels, solution.v):
        print(f"  V[{label}] = " + "  ".join(f"{x: .10g}" for x in row), file=sys.stderr)
    print(f"  eigenvalue real parts: {report.eigen_real_parts}", file=sys.stderr)
    print(f"  purity: {report.purity}  divergent: {report.divergent or 'none'}", file=sys.stderr)
    _emit_text(args, config, report.model_dump_json(indent=2) + "\n")
    return EXIT_DIVERGENT if solution.divergent else EXIT_OK


def _indexed(stem: str, index: int, n_records: int) -> str:
    """File name of ensemble member ``index``, zero-padded so names sort numerically."""
    return f"{stem}_{index:0{len(str(n_records - 1))}d}.csv"


def _write_summary(out: Path, summary: dict) -> None:
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")


def _final_summary(config: RunConfig, finals: np.ndarray) -> dict:
    return {
        "n_records": len(finals),
        "seed": config.seed,
        "final_mean": np.nanmean(finals, axis=0).tolist(),
        "final_variance": np.nanvar(finals, axis=0, ddof=1).tolist() if len(finals) > 1 else None,
    }


def cmd_simulate(args: argparse.Namespace, config: RunConfig) -> int:
    model, _ = _checked_model(config, args.scheme)
    state = initial_state(config, model)
    dt = _dt(config, model)
    labels = model.quadrature_labels
    if config.ensemble == 1:
        record, truth = simulate_record(model, state, dt, config.duration, config.seed)
        if args.stdout:
            csvio.write_record(sys.stdout, record)
            return EXIT_OK
        out = _out_dir(config)
        csvio.write_record(out / "record.csv", record)
        csvio.write_trajectory(out / "truth.csv", truth.times, truth.means, truth.covs, labels)
        return EXIT_OK

    ensemble = simulate_ensemble(model, state, dt, config.duration, config.seed, config.ensemble, keep_paths=True)
    out = _out_dir(config)
    n_records = len(ensemble)
    for index in range(n_records):
        truth = ensemble.truth(index)
        csvio.write_record(out / _indexed("record", index, n_records), ensemble.record(index))
        csvio.write_trajectory(out / _indexed("truth", index, n_records), truth.times, truth.means, truth.covs, labels)
    _write_summary(out, _final_summary(config, ensemble.final_means))
    return EXIT_OK


def _record(config: RunConfig):
    if not config.record:
        raise ValueError("this command needs --record")
    return csvio.read_record(config.record, dt=config.dt, seed=config.seed)


def cmd_filter(args: argparse.Namespace, config: RunConfig) -> int:
    model, _ = _checked_model(config, args.scheme)
    labels = model.quadrature_labels
    state = initial_state(config, model)
    if config.record or config.ensemble == 1:
        trajectory = filter_forward(model, state, _record(config))
        target = sys.stdout if args.stdout else _out_dir(config) / "filtered.csv"
        csvio.write_trajectory(target, trajectory.times, trajectory.means, trajectory.covs, labels)
        return EXIT_OK

    if args.stdout:
        raise ValueError("an ensemble is written to --out, not to stdout")
    ensemble = simulate_ensemble(model, state, _dt(config, model), config.duration, config.seed, config.ensemble)
    out = _out_dir(config)
    n_records = len(ensemble)
    finals = np.empty((n_records, model.dim))
    for index in range(n_records):
        record = ensemble.record(index)
        trajectory = filter_forward(model, state, record)
        finals[index] = trajectory.means[-1]
        csvio.write_record(out / _indexed("record", index, n_records), record)
        csvio.write_trajectory(
            out / _indexed("filtered", index, n_records), trajectory.times, trajectory.means, trajectory.covs, labels,
        )
    _write_summary(out, _final_summary(config, finals))
    return EXIT_OK


def cmd_retrodict(args: argparse.Namespace, config: RunConfig) -> int:
    model, _ = _checked_model(config, args.scheme)
    labels = model.quadrature_labels
    if config.record or config.ensemble == 1:
        record = _record(config)
        trajectory = retrodict_backward(model, None, record, v_large=config.v_large)
        target = sys.stdout if args.stdout else _out_dir(config) / "retrodicted.csv"
        csvio.write_trajectory(target, trajectory.times, trajectory.means, trajectory.covs, labels)
        return EXIT_OK

    state = initial_state(config, model)
    dt = _dt(config, model)
    if args.stdout:
        raise ValueError("an ensemble is written to --out, not to stdout")
    ensemble = simulate_ensemble(model, state, dt, config.duration, config.seed, config.ensemble)
    effects = retrodict_ensemble(
        model, ensemble.increments, dt, v_large=config.v_large, t_start=state.time, keep_paths=True,
    )
    out = _out_dir(config)
    n_records = len(effects)
    for index in range(n_records):
        trajectory = effects.trajectory(index)
        csvio.write_record(out / _indexed("record", index, n_records), ensemble.record(index))
        csvio.write_trajectory(
            out / _indexed("retrodicted", index, n_records), trajectory.times, trajectory.means, trajectory.covs, labels,
        )
    rows = [
        {"index": index, **{f"r_{q}": value for q, value in zip(labels, effects.means[index])}}
        for index in range(len(effects))
    ]
    csvio.write_table(out / "retrodicted_means.csv", rows)
    finite = list(np.flatnonzero(~np.asarray(effects.divergent)))
    summary = {
        "n_records": len(effects),
        "seed": config.seed,
        "divergent": [labels[j] for j, flag in enumerate(effects.divergent) if flag],
        "effect_cov": _nullable(effects.cov),
        "mean": {labels[j]: float(effects.means[:, j].mean()) for j in finite},
        "standard_error": {
            labels[j]: float(effects.means[:, j].std(ddof=1) / math.sqrt(len(effects))) for j in finite
        },
        "variance": {labels[j]: float(effects.means[:, j].var(ddof=1)) for j in finite},
        "predicted_variance": {
            labels[j]: float((effects.cov[j, j] + state.cov[j, j]) / 2.0) for j in finite
        },
    }
    _write_summary(out, summary)
    for q in summary["mean"]:
        print(
            f"{q}_E: mean {summary['mean'][q]:.6g} ± {summary['standard_error'][q]:.2g}, "
            f"variance {summary['variance'][q]:.6g} (predicted {summary['predicted_variance'][q]:.6g})",
            file=sys.stderr,
        )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, config: RunConfig) -> int:
    if not config.scenario:
        raise ValueError("sweep needs an optomechanics scenario")
    scenario = load_scenario(config.scenario)
    scheme = Scheme(args.scheme) if args.scheme else scenario.scheme
    axes = [parse_axis(text) for text in args.axis]
    rows = sweep(scenario.params(), scheme, axes)
    if args.stdout:
        csvio.write_table(sys.stdout, rows)
    else:
        csvio.write_table(config.out or "sweep.csv", rows)
    return EXIT_OK


def cmd_modes(args: argparse.Namespace, config: RunConfig) -> int:
    model, _ = _checked_model(config, args.scheme)
    solution = steady_state(model, _direction(config), allow_divergence=True)
    rates = np.abs(solution.eigen_real_parts[np.isfinite(solution.eigen_real_parts)])
    rates = rates[rates > 0.0]
    if args.lag_max is None and not len(rates):
        raise ValueError("no decaying mode to set the lag range; pass --lag-max")
    lag_max = args.lag_max if args.lag_max is not None else 10.0 / float(rates.min())
    if args.points < 2:
        raise ValueError("--points must be at least 2")
    modes = mode_functions(model, solution, np.linspace(0.0, lag_max, args.points))
    csvio.write_modes(sys.stdout if args.stdout else (config.out or "modes.csv"), modes)
    return EXIT_DIVERGENT if solution.divergent else EXIT_OK


def cmd_verify(args: argparse.Namespace, config: RunConfig) -> int:
    report = run_checks(quick=args.quick, names=args.checks)
    for check in report.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status} {check.name} ({check.seconds:.2f}s): {check.detail}", file=sys.stderr)
    _emit_text(args, config, report.model_dump_json(indent=2) + "\n")
    return EXIT_OK if report.passed else EXIT_ERROR


COMMANDS = {
    "steady": cmd_steady,
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "retrodict": cmd_retrodict,
    "sweep": cmd_sweep,
    "modes": cmd_modes,
    "verify": cmd_verify,
}


def main(argv: Optional[list[str]] = None) -> int:
    """Main entry point for the qretro CLI."""
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](args, config)
    except (NoSteadyState, DivergenceDetected) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_DIVERGENT
    except Exception as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
