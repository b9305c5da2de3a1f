"""CSV files for records, moment trajectories, mode functions and sweep tables.

Every file has a header row; floats are written with 17 significant digits so
reading a file back reproduces the numbers exactly.
"""
from __future__ import annotations

import contextlib
import csv
import logging
import math
from pathlib import Path
from typing import IO, Iterator, Optional, Sequence, Union

import numpy as np

from qretro.errors import GridMismatch
from qretro.trajectory import MeasurementRecord, ModeFunctionSet

logger = logging.getLogger(__name__)

Target = Union[str, Path, IO[str]]


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return "%.17g" % value


@contextlib.contextmanager
def _writer(target: Target) -> Iterator:
    if hasattr(target, "write"):
        yield csv.writer(target, lineterminator="\n")
        return
    path = Path(target)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        yield csv.writer(f, lineterminator="\n")
    logger.debug("wrote %s", path)


def _read_rows(path: Union[str, Path]) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path} is empty; expected a header row") from None
        rows = [[float(cell) for cell in row] for row in reader if row]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, data


def record_header(n_channels: int) -> list[str]:
    return ["t"] + [f"dY_{c + 1}" for c in range(n_channels)]


def write_record(target: Target, record: MeasurementRecord) -> None:
    """One row per increment: the start time of its interval, then ``dY`` per channel."""
    with _writer(target) as writer:
        writer.writerow(record_header(record.n_channels))
        for t, row in zip(record.times[:-1], record.increments):
            writer.writerow([format_value(t)] + [format_value(v) for v in row])


def read_record(path: Union[str, Path], dt: Optional[float] = None, seed: Optional[int] = None) -> MeasurementRecord:
    """Load a record; ``dt`` is inferred from the time column when it has two or more rows."""
    header, data = _read_rows(path)
    if not header or header[0] != "t" or any(not h.startswith("dY_") for h in header[1:]):
        raise ValueError(f"{path}: header must be t,dY_1,…; got {','.join(header)}")
    times = data[:, 0]
    if len(times) >= 2:
        steps = np.diff(times)
        # the first step is exact when the grid starts at zero
        inferred = float(times[1] - times[0])
        if not np.allclose(steps, inferred, rtol=1e-9, atol=1e-12):
            raise GridMismatch(f"{path}: time column is not uniformly spaced")
        if dt is not None and not math.isclose(dt, inferred, rel_tol=1e-9):
            raise GridMismatch(f"{path}: record dt {inferred:g} differs from requested dt {dt:g}")
        dt = inferred if dt is None else dt
    if dt is None:
        raise GridMismatch(f"{path}: cannot infer dt from fewer than two rows; pass --dt")
    t_start = float(times[0]) if len(times) else 0.0
    return MeasurementRecord(dt=dt, increments=data[:, 1:], seed=seed, t_start=t_start)


def trajectory_header(labels: Sequence[str]) -> list[str]:
    dim = len(labels)
    covariance = [f"V_{labels[i]}{labels[j]}" for i in range(dim) for j in range(i, dim)]
    return ["t"] + [f"r_{q}" for q in labels] + covariance


def write_trajectory(
    target: Target, times: np.ndarray, means: np.ndarray, covs: np.ndarray, labels: Sequence[str]
) -> None:
    """Means and the upper triangle of the covariance at every grid time."""
    dim = len(labels)
    upper = np.triu_indices(dim)
    with _writer(target) as writer:
        writer.writerow(trajectory_header(labels))
        for t, r, v in zip(times, means, covs):
            writer.writerow([format_value(t)] + [format_value(x) for x in r] + [format_value(x) for x in v[upper]])


def read_trajectory(path: Union[str, Path]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of ``write_trajectory``: (times, means, covs)."""
    header, data = _read_rows(path)
    dim = sum(1 for h in header if h.startswith("r_"))
    times = data[:, 0]
    means = data[:, 1:1 + dim]
    covs = np.zeros((len(times), dim, dim))
    upper = np.triu_indices(dim)
    covs[:, upper[0], upper[1]] = data[:, 1 + dim:]
    covs[:, upper[1], upper[0]] = data[:, 1 + dim:]
    return times, means, covs


def write_modes(target: Target, modes: ModeFunctionSet) -> None:
    with _writer(target) as writer:
        writer.writerow(["t"] + modes.columns())
        for lag, values in zip(modes.lags, modes.flat()):
            writer.writerow([format_value(lag)] + [format_value(v) for v in values])


def write_table(target: Target, rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> None:
    """Long-format table; columns default to the keys of the first row in order."""
    if columns is None:
        columns = list(rows[0]) if rows else []
    with _writer(target) as writer:
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(c, math.nan)) for c in columns])


def read_table(path: Union[str, Path]) -> list[dict]:
    header, data = _read_rows(path)
    return [dict(zip(header, map(float, row))) for row in data]
