"""Optimal multiplier search and cost evaluation"""

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.integrate import trapezoid
from tqdm import tqdm

from ..core.config import settings
from ..core.errors import (
    GammaDiscoveryFailed,
    GridMismatch,
    Infeasible,
    NoConvergence,
    RegenerationError,
)
from ..structures.schemas import (
    CodeSpec,
    DimensionResult,
    FeasibilityReport,
    SolveResult,
    SweepCell,
    SystemParams,
    ThresholdPolicy,
)
from ..structures.trajectories import CostateTrajectory, FluidState, FluidTrajectory
from .coding import tightened
from .fluid import feasibility_check, integrate
from .pontryagin import (
    adjoint_backward,
    extract_policy,
    p0_from_closed_form,
    p0_from_costate,
)


def running_cost(
    trajectory: FluidTrajectory,
    policy: Optional[ThresholdPolicy],
    params: SystemParams,
    code: CodeSpec,
) -> float:
    """Activation plus transfer cost of a trajectory over [0, T]

    Args:
        trajectory: Integrated fluid trajectory
        policy: Threshold policy that produced it; when None the activation
            term is integrated from the per-interval control values
        params: System parameters
        code: Repairing code

    Returns:
        J in dollars
    """
    grid = trajectory.grid
    if (
        abs(grid[0]) > 1e-12 * params.T
        or abs(grid[-1] - params.T) > 1e-9 * params.T
        or trajectory.states.shape != (grid.size, code.d + 1)
        or trajectory.control.size != grid.size - 1
    ):
        raise GridMismatch(
            f"Trajectory on [{grid[0]}, {grid[-1]}] with states {trajectory.states.shape} "
            f"does not match horizon {params.T} and d={code.d}"
        )

    if policy is not None:
        on_time = min(policy.t_off, params.T) - min(policy.t_on, params.T)
    else:
        on_time = float(np.dot(trajectory.control, np.diff(grid)))
    activation = params.c1 * params.zeta * on_time

    weights = (code.d - np.arange(code.d + 1)).astype(float)
    transfer_rate = params.c2 * code.beta * params.lam * (trajectory.states @ weights)
    return activation + float(trapezoid(transfer_rate, grid))


def relaxed_cost(J: float, gamma: float, x_d_terminal: float, n_tight: float) -> float:
    """J_gamma = J + gamma (n - X_d(T))"""
    return J + gamma * (n_tight - x_d_terminal)


class GammaEvaluation(NamedTuple):
    gamma: float
    policy: ThresholdPolicy
    trajectory: FluidTrajectory
    x_d_terminal: float
    costate: Optional[CostateTrajectory]


class RegenerationOptimizer:
    """Bisection on the terminal multiplier gamma"""

    def __init__(
        self,
        params: SystemParams,
        code: CodeSpec,
        epsilon: Optional[float] = None,
        step: Optional[float] = None,
        x0: Optional[FluidState] = None,
        costate_method: Optional[str] = None,
    ):
        self.params = params
        self.code = code
        self.epsilon = settings.epsilon if epsilon is None else epsilon
        if self.epsilon <= 0:
            raise ValueError(f"Tolerance must be positive, got epsilon={self.epsilon}")
        self.step = settings.step_fraction * params.T if step is None else step
        self.x0 = x0
        self.costate_method = costate_method or settings.costate_method
        self.n_tight, self.d_tight = tightened(params, code)

    def evaluate(self, gamma: float) -> GammaEvaluation:
        """Costate backward, switching law, state forward"""
        if gamma < 0:
            raise ValueError(f"Multiplier must be nonnegative, got gamma={gamma}")
        if self.costate_method == "closed_form":
            costate = None
            p0 = p0_from_closed_form(self.params, self.code, gamma)
        else:
            costate = adjoint_backward(self.params, self.code, gamma, self.step)
            p0 = p0_from_costate(costate)
        policy = extract_policy(p0, self.params)
        trajectory = integrate(self.params, self.code, policy, x0=self.x0, step=self.step)
        return GammaEvaluation(gamma, policy, trajectory, trajectory.x_d_terminal, costate)

    def _result(
        self,
        evaluation: GammaEvaluation,
        iterations: int,
        bracket: Tuple[float, float],
        report: FeasibilityReport,
        converged: bool = True,
    ) -> SolveResult:
        cost = running_cost(evaluation.trajectory, evaluation.policy, self.params, self.code)
        path_ok = evaluation.trajectory.x_d_min >= self.d_tight
        if not path_ok:
            logger.warning(
                f"Path constraint violated: min X_d={evaluation.trajectory.x_d_min:.4f} < {self.d_tight:g}"
            )
        return SolveResult(
            gamma_star=evaluation.gamma,
            policy=evaluation.policy,
            cost=cost,
            relaxed_cost=relaxed_cost(cost, evaluation.gamma, evaluation.x_d_terminal, self.n_tight),
            x_d_terminal=evaluation.x_d_terminal,
            iterations=iterations,
            converged=converged,
            path_constraint_ok=path_ok,
            n_tight=self.n_tight,
            d_tight=self.d_tight,
            gamma_left=bracket[0],
            gamma_right=bracket[1],
            feasibility=report,
            trajectory=evaluation.trajectory,
            costate=evaluation.costate,
        )

    def solve(self) -> SolveResult:
        """Find gamma* with |X_d(T) - n| <= epsilon and the induced threshold policy"""
        report = feasibility_check(
            self.params, self.code, self.n_tight, self.d_tight, self.step, x0=self.x0
        )
        if not report.feasible:
            raise Infeasible(
                f"No admissible control: X_d(T) under full activation is {report.x_d_terminal:.4f} "
                f"(target {self.n_tight:g}), min X_d is {report.x_d_min:.4f} (floor {self.d_tight:g})",
                report,
            )

        target, eps = self.n_tight, self.epsilon
        idle = self.evaluate(0.0)
        if idle.x_d_terminal >= target - eps:
            logger.info(f"Null policy meets the target (X_d(T)={idle.x_d_terminal:.4f})")
            return self._result(idle, 0, (0.0, 0.0), report)

        gamma_right = 1.0
        for _ in range(settings.max_gamma_doublings):
            current = self.evaluate(gamma_right)
            logger.debug(f"gamma={gamma_right:.6g}: X_d(T)={current.x_d_terminal:.6f}")
            if current.x_d_terminal >= target:
                break
            gamma_right *= 2.0
        else:
            raise GammaDiscoveryFailed(
                f"X_d(T) stays below {target:g} up to gamma={gamma_right / 2.0:.6g}"
            )

        gamma_left = 0.0
        iterations = 0
        while abs(current.x_d_terminal - target) > eps:
            if iterations >= settings.max_bisection_iterations:
                partial = self._result(current, iterations, (gamma_left, gamma_right), report, False)
                raise NoConvergence(
                    f"Bisection stopped after {iterations} iterations with "
                    f"|X_d(T) - n| = {abs(current.x_d_terminal - target):.4g}",
                    partial,
                )
            iterations += 1
            gamma = 0.5 * (gamma_left + gamma_right)
            current = self.evaluate(gamma)
            logger.debug(
                f"iteration {iterations}: gamma={gamma:.6g}, X_d(T)={current.x_d_terminal:.6f}, "
                f"bracket=[{gamma_left:.6g}, {gamma_right:.6g}]"
            )
            if current.x_d_terminal > target:
                gamma_right = gamma
            else:
                gamma_left = gamma

        result = self._result(current, iterations, (gamma_left, gamma_right), report)
        logger.info(
            f"Converged in {iterations} iterations: gamma*={result.gamma_star:.6g}, "
            f"policy=({result.policy.t_on:.4f}, {result.policy.t_off:.4f}), J*={result.cost:.4f}"
        )
        return result


def evaluate_gamma(
    params: SystemParams, code: CodeSpec, gamma: float, step: Optional[float] = None
) -> Tuple[ThresholdPolicy, FluidTrajectory, float]:
    evaluation = RegenerationOptimizer(params, code, step=step).evaluate(gamma)
    return evaluation.policy, evaluation.trajectory, evaluation.x_d_terminal


def solve(
    params: SystemParams,
    code: CodeSpec,
    epsilon: Optional[float] = None,
    step: Optional[float] = None,
    x0: Optional[FluidState] = None,
) -> SolveResult:
    return RegenerationOptimizer(params, code, epsilon=epsilon, step=step, x0=x0).solve()


def _sweep_cell(
    params: SystemParams, code: CodeSpec, c1: float, c2: float, epsilon, step
) -> SweepCell:
    try:
        result = solve(params.with_changes(c1=c1, c2=c2), code, epsilon=epsilon, step=step)
    except NoConvergence as e:
        logger.error(f"Cell c1={c1:g}, c2={c2:g}: {e}")
        partial = e.result
        return SweepCell(
            c1=c1,
            c2=c2,
            J_star=partial.cost,
            gamma_star=partial.gamma_star,
            t_on=partial.policy.t_on,
            t_off=partial.policy.t_off,
            iterations=partial.iterations,
            converged=False,
            error=str(e),
        )
    except (RegenerationError, ValueError) as e:
        logger.error(f"Cell c1={c1:g}, c2={c2:g}: {e}")
        return SweepCell(c1=c1, c2=c2, error=str(e))

    logger.info(f"Cell c1={c1:g}, c2={c2:g}: J*={result.cost:.4f}, gamma*={result.gamma_star:.6g}")
    return SweepCell(
        c1=c1,
        c2=c2,
        J_star=result.cost,
        gamma_star=result.gamma_star,
        t_on=result.policy.t_on,
        t_off=result.policy.t_off,
        iterations=result.iterations,
        converged=result.converged,
    )


def sweep(
    params_base: SystemParams,
    code: CodeSpec,
    c1_list: Sequence[float],
    c2_list: Sequence[float],
    epsilon: Optional[float] = None,
    step: Optional[float] = None,
    workers: Optional[int] = None,
) -> List[SweepCell]:
    """Solve every (c1, c2) cell; failures are recorded per cell

    Returns:
        Cells in row-major order (c1 outer, c2 inner)
    """
    if not c1_list or not c2_list:
        raise ValueError("Sweep needs nonempty c1 and c2 lists")
    cells = [(float(c1), float(c2)) for c1 in c1_list for c2 in c2_list]
    workers = workers or settings.sweep_workers

    def run(cell: Tuple[float, float]) -> SweepCell:
        return _sweep_cell(params_base, code, cell[0], cell[1], epsilon, step)

    progress = dict(total=len(cells), desc="sweep", disable=not settings.show_progress)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(tqdm(pool.map(run, cells), **progress))
    return [run(cell) for cell in tqdm(cells, **progress)]


def minimal_feasible(
    target: str,
    build: Callable[[float], Tuple[SystemParams, CodeSpec]],
    lower: float,
    upper: float,
    integer: bool = False,
    rtol: float = 1e-3,
) -> DimensionResult:
    """Smallest value of a design parameter keeping the problem feasible

    Args:
        target: Name of the parameter, for reporting
        build: Maps a candidate value to (params, code)
        lower, upper: Search bounds
        integer: Scan integers upward instead of bisecting
        rtol: Relative bisection tolerance

    Returns:
        DimensionResult with the feasibility report at the minimal value
    """
    if lower > upper:
        raise ValueError(f"Search bounds inverted: lower={lower} > upper={upper}")
    evaluations = 0

    def check(value: float) -> Optional[FeasibilityReport]:
        nonlocal evaluations
        evaluations += 1
        try:
            params, code = build(value)
        except ValueError as e:
            logger.debug(f"{target}={value:g} is not a valid design: {e}")
            return None
        report = feasibility_check(params, code)
        return report if report.feasible else None

    def found(value: float, report: FeasibilityReport) -> DimensionResult:
        logger.info(f"Minimal feasible {target} = {value:.6g}")
        return DimensionResult(
            target=target,
            value=value,
            lower=lower,
            upper=upper,
            evaluations=evaluations,
            mu_bar=report.mu_bar,
            report=report,
        )

    if integer:
        for value in range(math.ceil(lower), math.floor(upper) + 1):
            report = check(float(value))
            if report is not None:
                return found(float(value), report)
        raise Infeasible(f"No feasible {target} in [{lower:g}, {upper:g}]")

    best = check(upper)
    if best is None:
        raise Infeasible(f"{target}={upper:g} (upper bound) is infeasible")
    report = check(lower)
    if report is not None:
        return found(lower, report)

    lo, hi = lower, upper
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        report = check(mid)
        if report is None:
            lo = mid
        else:
            hi, best = mid, report
    return found(hi, best)
