"""Tests for CSV writers"""

import io

import numpy as np

from api.src.services.export import (
    format_value,
    write_per_run_csv,
    write_solution_series,
    write_sweep_csv,
    write_trajectory_csv,
)
from api.src.services.fluid import integrate
from api.src.services.mdp_sim import sample_paths
from api.src.services.optimizer import solve
from api.src.structures.schemas import SimConfig, SweepCell, ThresholdPolicy


def test_format_value():
    assert format_value(1.0 / 3.0) == "0.333333"
    assert format_value(1234567.0) == "1.23457e+06"
    assert format_value(None) == ""
    assert format_value(True) == "true"
    assert format_value(12) == "12"


def test_trajectory_csv_layout(mbr_code, reference):
    trajectory = integrate(reference(), mbr_code, ThresholdPolicy(t_on=0.0, t_off=1.22))
    out = io.StringIO()
    write_trajectory_csv(out, trajectory)
    lines = out.getvalue().splitlines()
    header = lines[0].split(",")
    assert header == ["t"] + [f"x{k}" for k in range(21)] + ["u"]
    assert len(lines) == trajectory.grid.size + 1
    first = [float(v) for v in lines[1].split(",")]
    assert first[0] == 0.0 and first[-2] == 39.0 and first[-1] == 1.0


def test_solution_series(tmp_path, mbr_code, reference):
    params = reference()
    result = solve(params, mbr_code)
    written = write_solution_series(tmp_path, result, params, mbr_code)
    names = {path.name for path in written}
    assert names == {"p0.csv", "u.csv", "xd.csv", "trajectory.csv", "costate.csv"}

    p0 = np.loadtxt(tmp_path / "p0.csv", delimiter=",", skiprows=1)
    assert (tmp_path / "p0.csv").read_text().splitlines()[0] == "t,p0,threshold"
    np.testing.assert_array_equal(p0[:, 2], -params.c1)
    u = np.loadtxt(tmp_path / "u.csv", delimiter=",", skiprows=1)
    assert set(np.unique(u[:, 1])) <= {0.0, 1.0}
    xd = np.loadtxt(tmp_path / "xd.csv", delimiter=",", skiprows=1)
    assert abs(xd[-1, 1] - 50.0) <= 0.05 + 1e-4


def test_sweep_csv_keeps_failed_cells():
    cells = [
        SweepCell(c1=1.0, c2=0.0, J_star=12.2, gamma_star=1.2766, t_on=0.0, t_off=1.22, iterations=7, converged=True),
        SweepCell(c1=10.0, c2=0.0, error="infeasible"),
    ]
    out = io.StringIO()
    write_sweep_csv(out, cells)
    lines = out.getvalue().splitlines()
    assert lines[0] == "c1,c2,J_star,gamma_star,t_on,t_off,iterations,converged,error"
    assert lines[1] == "1,0,12.2,1.2766,0,1.22,7,true,"
    assert lines[2] == "10,0,,,,,,false,infeasible"


def test_per_run_csv(mbr_code, reference):
    samples = sample_paths(reference(), mbr_code, ThresholdPolicy.null(), SimConfig(seed=1, runs=3))
    out = io.StringIO()
    write_per_run_csv(out, samples)
    lines = out.getvalue().splitlines()
    assert lines[0] == "run,terminal_xd,min_xd,cost,absorbed"
    assert [line.split(",")[0] for line in lines[1:]] == ["0", "1", "2"]
