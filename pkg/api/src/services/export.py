"""CSV time series and tables written by the command line"""

import csv
from pathlib import Path
from typing import Dict, Iterable, List, Optional, TextIO

import numpy as np
from loguru import logger

from ..core.config import settings
from ..structures.schemas import CodeSpec, SolveResult, SweepCell, SystemParams
from ..structures.trajectories import CostateTrajectory, FluidTrajectory
from .mdp_sim import PathSamples
from .pontryagin import p0_from_closed_form

SWEEP_COLUMNS = ["c1", "c2", "J_star", "gamma_star", "t_on", "t_off", "iterations", "converged", "error"]
PER_RUN_COLUMNS = ["run", "terminal_xd", "min_xd", "cost", "absorbed"]


def _fmt(digits: Optional[int] = None) -> str:
    return f"%.{digits or settings.csv_significant_digits}g"


def format_value(value, digits: Optional[int] = None) -> str:
    """Numbers to significant digits, booleans as true/false, None as empty"""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return _fmt(digits) % float(value)


def write_columns(out: TextIO, columns: Dict[str, np.ndarray]) -> None:
    """Write equal-length numeric columns with a header row"""
    data = np.column_stack([np.asarray(v, dtype=float) for v in columns.values()])
    np.savetxt(out, data, fmt=_fmt(), delimiter=",", header=",".join(columns), comments="")


def node_control(trajectory: FluidTrajectory) -> np.ndarray:
    """Control at each grid node: the value on the interval starting there, last one repeated"""
    return np.append(trajectory.control, trajectory.control[-1:])


def write_trajectory_csv(out: TextIO, trajectory: FluidTrajectory) -> None:
    columns = {"t": trajectory.grid}
    columns.update({f"x{k}": trajectory.states[:, k] for k in range(trajectory.states.shape[1])})
    columns["u"] = node_control(trajectory)
    write_columns(out, columns)


def write_costate_csv(out: TextIO, costate: CostateTrajectory) -> None:
    columns = {"t": costate.grid}
    columns.update({f"p{k}": costate.p[:, k] for k in range(costate.p.shape[1])})
    write_columns(out, columns)


def write_solution_series(
    directory: Path, result: SolveResult, params: SystemParams, code: CodeSpec
) -> List[Path]:
    """Plot-ready series of a solved instance: p0, u, x_d and the full state and costate"""
    directory.mkdir(parents=True, exist_ok=True)
    trajectory = result.trajectory
    costate = result.costate
    if costate is not None:
        p0_grid, p0 = costate.grid, costate.p0
    else:
        p0_grid = trajectory.grid
        p0 = p0_from_closed_form(params, code, result.gamma_star)(p0_grid)

    series = {
        "p0.csv": {"t": p0_grid, "p0": p0, "threshold": np.full(p0_grid.size, -params.c1)},
        "u.csv": {"t": trajectory.grid, "u": node_control(trajectory)},
        "xd.csv": {"t": trajectory.grid, "xd": trajectory.x_d},
    }
    written = []
    for name, columns in series.items():
        path = directory / name
        with path.open("w", newline="") as out:
            write_columns(out, columns)
        written.append(path)

    path = directory / "trajectory.csv"
    with path.open("w", newline="") as out:
        write_trajectory_csv(out, trajectory)
    written.append(path)
    if costate is not None:
        path = directory / "costate.csv"
        with path.open("w", newline="") as out:
            write_costate_csv(out, costate)
        written.append(path)

    logger.info(f"Wrote {len(written)} series to {directory}")
    return written


def write_sweep_csv(out: TextIO, cells: Iterable[SweepCell]) -> None:
    """One row per cell; failed cells keep their (c1, c2) and the error, leaving the results empty"""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for cell in cells:
        writer.writerow([format_value(getattr(cell, column)) for column in SWEEP_COLUMNS])


def write_per_run_csv(out: TextIO, samples: PathSamples) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(PER_RUN_COLUMNS)
    for run in range(samples.cost.size):
        writer.writerow(
            [
                str(run),
                format_value(samples.terminal_xd[run]),
                format_value(samples.min_xd[run]),
                format_value(samples.cost[run]),
                format_value(bool(samples.absorbed[run])),
            ]
        )
