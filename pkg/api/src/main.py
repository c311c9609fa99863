"""
Command line for the regeneration solver and simulator
"""

import sys
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional, Tuple

import click
from loguru import logger
from pydantic import BaseModel, ValidationError

from .core.config import settings
from .core.errors import GammaDiscoveryFailed, Infeasible, NoConvergence
from .services.export import (
    write_per_run_csv,
    write_solution_series,
    write_sweep_csv,
)
from .services.fluid import feasibility_check
from .services.mdp_sim import sample_paths, summarize
from .services.optimizer import RegenerationOptimizer, minimal_feasible, sweep
from .structures.scenario import BITS_PER_GIGABYTE, ScenarioConfig
from .structures.schemas import CodeSpec, SystemParams, ThresholdPolicy

EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NO_CONVERGENCE = 4


def setup_logger(level: Optional[str] = None):
    """Configure loguru logger with custom formatting"""
    config = {
        "handlers": [
            {
                # stdout carries the JSON and CSV results
                "sink": sys.stderr,
                "format": "<fg #2E8B57>{time:hh:mm:ss A}</fg #2E8B57> | "
                "{level: <8} | "
                "{message}",
                "colorize": True,
                "level": level or settings.log_level,
            },
        ],
    }
    logger.remove()
    logger.configure(**config)
    logger.level("ERROR", color="<red>")


def _fail(message: str, code: int):
    logger.error(message)
    click.get_current_context().exit(code)


def describe_validation_error(error: ValidationError) -> str:
    """One line per offending field, named by its dotted path"""
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{location}: {item['msg']}")
    return "Invalid configuration: " + "; ".join(lines)


@contextmanager
def exit_codes():
    """Map solver outcomes onto the documented exit codes"""
    try:
        yield
    except ValidationError as e:
        _fail(describe_validation_error(e), EXIT_CONFIG)
    except Infeasible as e:
        if e.report is not None:
            _emit(e.report)
        _fail(str(e), EXIT_INFEASIBLE)
    except NoConvergence as e:
        if e.result is not None:
            _emit(e.result)
        _fail(str(e), EXIT_NO_CONVERGENCE)
    except GammaDiscoveryFailed as e:
        _fail(str(e), EXIT_NO_CONVERGENCE)


def _emit(model: BaseModel, out: Optional[Path] = None, name: Optional[str] = None) -> None:
    text = model.model_dump_json(indent=2)
    click.echo(text)
    if out is not None and name is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n")


def load_scenario(path: Path) -> Tuple[ScenarioConfig, SystemParams, CodeSpec]:
    try:
        scenario = ScenarioConfig.model_validate_json(path.read_text())
    except OSError as e:
        _fail(f"Cannot read configuration {path}: {e}", EXIT_CONFIG)
    except ValidationError as e:
        _fail(describe_validation_error(e), EXIT_CONFIG)
    try:
        params, code = scenario.build()
    except ValueError as e:
        _fail(f"Invalid configuration: {e}", EXIT_CONFIG)
    logger.debug(
        f"Scenario: {code.variant.value}{code.triple}, beta={code.beta:.6g} GB, mu={params.mu}, "
        f"lambda={params.lam:.6g}, zeta={params.zeta}, T={params.T}, x_d0={params.x_d0:g}"
    )
    return scenario, params, code


def _float_list(ctx, param, value: Optional[str]) -> Optional[List[float]]:
    if value is None:
        return None
    try:
        values = [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}")
    if not values:
        raise click.BadParameter("expected at least one value")
    return values


config_option = click.option(
    "--config",
    "config_path",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="Scenario JSON file",
)
out_option = click.option(
    "--out",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Directory receiving copies of the results",
)


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log solver iterations")
@click.option("--progress/--no-progress", default=None, help="Show progress bars")
def cli(verbose: bool, progress: Optional[bool]):
    """Optimal time-constrained regeneration of coded storage"""
    setup_logger("DEBUG" if verbose else None)
    if progress is not None:
        settings.show_progress = progress


@cli.command()
@config_option
@out_option
def feasibility(config_path: Path, out: Optional[Path]):
    """Check whether full activation meets the path and terminal constraints"""
    scenario, params, code = load_scenario(config_path)
    with exit_codes():
        report = feasibility_check(params, code, step=scenario.step())
    _emit(report, out, "feasibility.json")


def _solve(scenario: ScenarioConfig, params: SystemParams, code: CodeSpec):
    optimizer = RegenerationOptimizer(
        params, code, epsilon=scenario.solver.epsilon, step=scenario.step()
    )
    return optimizer.solve()


@cli.command()
@config_option
@out_option
@click.option(
    "--emit-trajectories",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Directory for p0.csv, u.csv, xd.csv, trajectory.csv and costate.csv",
)
def solve(config_path: Path, out: Optional[Path], emit_trajectories: Optional[Path]):
    """Compute the optimal multiplier and threshold policy"""
    scenario, params, code = load_scenario(config_path)
    with exit_codes():
        result = _solve(scenario, params, code)
    _emit(result, out, "solve.json")
    if emit_trajectories is not None:
        write_solution_series(emit_trajectories, result, params, code)


@cli.command(name="sweep")
@config_option
@out_option
@click.option("--c1", "c1_values", required=True, callback=_float_list, help="Activation costs, e.g. 1,10,20")
@click.option("--c2", "c2_values", required=True, callback=_float_list, help="Transfer costs, e.g. 0,10,100")
@click.option(
    "--c2-unit",
    type=click.Choice(["gigabyte", "bit"]),
    default="gigabyte",
    show_default=True,
    help="Unit the --c2 values are priced per",
)
def sweep_command(
    config_path: Path,
    out: Optional[Path],
    c1_values: List[float],
    c2_values: List[float],
    c2_unit: str,
):
    """Solve every (c1, c2) cell and print the table as CSV"""
    scenario, params, code = load_scenario(config_path)
    if c2_unit == "bit":
        c2_values = [c2 * BITS_PER_GIGABYTE for c2 in c2_values]
    with exit_codes():
        cells = sweep(params, code, c1_values, c2_values, scenario.solver.epsilon, scenario.step())
    write_sweep_csv(sys.stdout, cells)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with (out / "sweep.csv").open("w", newline="") as f:
            write_sweep_csv(f, cells)
    failed = sum(cell.error is not None for cell in cells)
    if failed:
        logger.warning(f"{failed} of {len(cells)} cells failed")


def _parse_policy(value: Optional[str]) -> Optional[ThresholdPolicy]:
    if value is None:
        return None
    try:
        t_on, t_off = (float(v) for v in value.split(","))
    except ValueError:
        raise click.BadParameter(f"expected t_on,t_off, got {value!r}", param_hint="--policy")
    return ThresholdPolicy(t_on=t_on, t_off=t_off)


@cli.command()
@config_option
@out_option
@click.option("--policy", default=None, help="Threshold policy as t_on,t_off")
@click.option("--from-solve", is_flag=True, help="Simulate the optimal policy of the fluid problem")
@click.option("--runs", type=int, default=None, help="Number of sample paths")
@click.option("--seed", type=int, default=None, help="Root seed of the per-path streams")
@click.option(
    "--operational-failures/--no-operational-failures",
    default=None,
    help="Let operational repair servers fail at rate mu",
)
@click.option("--scale", type=int, default=None, help="Population scale factor")
@click.option(
    "--per-run-csv",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Write one row per sample path",
)
def simulate(
    config_path: Path,
    out: Optional[Path],
    policy: Optional[str],
    from_solve: bool,
    runs: Optional[int],
    seed: Optional[int],
    operational_failures: Optional[bool],
    scale: Optional[int],
    per_run_csv: Optional[Path],
):
    """Monte Carlo estimates under a threshold policy"""
    if (policy is None) == (not from_solve):
        raise click.UsageError("give exactly one of --policy or --from-solve")
    scenario, params, code = load_scenario(config_path)
    with exit_codes():
        config = scenario.sim_config(
            seed=seed,
            runs=runs,
            operational_failures=operational_failures,
            scale=scale,
            default_seed=settings.sim_seed,
            default_runs=settings.sim_runs,
        )
        threshold = _parse_policy(policy)
        if threshold is None:
            threshold = _solve(scenario, params, code).policy
        logger.info(f"Simulating policy ({threshold.t_on:.4f}, {threshold.t_off:.4f})")
        samples = sample_paths(params, code, threshold, config)
    stats = summarize(samples)
    _emit(stats, out, "simulate.json")
    if per_run_csv is not None:
        per_run_csv.parent.mkdir(parents=True, exist_ok=True)
        with per_run_csv.open("w", newline="") as f:
            write_per_run_csv(f, samples)


@cli.command()
@config_option
@out_option
@click.option("--target", type=click.Choice(["T", "lambda", "d"]), required=True)
@click.option("--lower", type=float, required=True, help="Smallest value searched")
@click.option("--upper", type=float, required=True, help="Largest value searched")
def dimension(config_path: Path, out: Optional[Path], target: str, lower: float, upper: float):
    """Smallest horizon, transfer rate or repair degree keeping the instance feasible"""
    if lower > upper:
        _fail(f"Search bounds inverted: lower={lower} > upper={upper}", EXIT_CONFIG)
    scenario, _, _ = load_scenario(config_path)
    with exit_codes():
        result = minimal_feasible(
            target, scenario.dimension_builder(target), lower, upper, integer=target == "d"
        )
    _emit(result, out, "dimension.json")


if __name__ == "__main__":
    cli()
