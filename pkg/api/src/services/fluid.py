"""Fluid (mean-field) dynamics of the regeneration process

The population of repair nodes is split into compartments 0..d by the number
of chunks already received. Under activation control u(t) the fluid limit is
the linear system

    dX/dt = A X + zeta u(t) e_0

with A lower bidiagonal: diagonal -mu_k, subdiagonal (d - k + 1) lambda.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, ClassVar, Dict, Optional, Protocol, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import optimize

from ..core.config import settings
from ..core.errors import (
    ControlOutOfRange,
    DimensionMismatch,
    NonFiniteState,
    StepTooLarge,
)
from ..structures.schemas import Binding, CodeSpec, FeasibilityReport, SystemParams
from ..structures.trajectories import FluidState, FluidTrajectory
from .coding import mu_rates, tightened


class Control(Protocol):
    """Activation control in [0, 1] with its discontinuities declared as switch epochs

    Controls with a true `piecewise_constant` class attribute are read once per
    segment between epochs; any other control is sampled at every RK4 stage.
    """

    switch_epochs: Sequence[float]

    def __call__(self, t: float) -> float: ...


@dataclass(frozen=True)
class ConstantControl:
    u: float
    switch_epochs: Tuple[float, ...] = ()
    piecewise_constant: ClassVar[bool] = True

    def __call__(self, t: float) -> float:
        return self.u


def _check_control(u: float) -> float:
    if not 0.0 <= u <= 1.0:
        raise ControlOutOfRange(f"Control must lie in [0, 1], got u={u}")
    return float(u)


def generator_matrix(params: SystemParams, code: CodeSpec) -> np.ndarray:
    """State matrix A of the fluid dynamics"""
    d = code.d
    A = np.diag(-mu_rates(params, code))
    k = np.arange(1, d + 1)
    A[k, k - 1] = (d - k + 1) * params.lam
    return A


def fluid_rhs(state: FluidState, u: float, params: SystemParams, code: CodeSpec) -> np.ndarray:
    """Time derivative of the compartment counts"""
    u = _check_control(u)
    if state.d != code.d:
        raise DimensionMismatch(f"State has {state.x.size} compartments, code needs {code.d + 1}")
    f = generator_matrix(params, code) @ state.x
    f[0] += params.zeta * u
    return f


def rk4_propagator(M: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """One classical RK4 step for y' = M y + c with c constant over the step

    Returns (P, Q) such that y_next = P y + Q c.
    """
    I = np.eye(M.shape[0])
    hM = h * M
    hM2 = hM @ hM
    hM3 = hM2 @ hM
    P = I + hM + hM2 / 2.0 + hM3 / 6.0 + hM3 @ hM / 24.0
    Q = h * (I + hM / 2.0 + hM2 / 6.0 + hM3 / 24.0)
    return P, Q


def segment_grid(horizon: float, epochs: Sequence[float], step: float) -> Tuple[np.ndarray, np.ndarray]:
    """Grid on [0, horizon] passing exactly through every epoch

    Returns the grid and, for each grid interval, the index of its segment.
    """
    breaks = sorted({0.0, float(horizon), *(float(e) for e in epochs if 0.0 < e < horizon)})
    points = [np.array([0.0])]
    owner = []
    for i, (a, b) in enumerate(zip(breaks[:-1], breaks[1:])):
        n_steps = max(1, math.ceil((b - a) / step - 1e-9))
        points.append(np.linspace(a, b, n_steps + 1)[1:])
        owner.extend([i] * n_steps)
    return np.concatenate(points), np.asarray(owner, dtype=int)


def _resolve_step(horizon: float, step: Optional[float]) -> float:
    if step is None:
        step = settings.step_fraction * horizon
    if step <= 0:
        raise ValueError(f"Integration step must be positive, got {step}")
    if step > horizon:
        raise StepTooLarge(f"Step {step} exceeds horizon {horizon}")
    return step


def integrate(
    params: SystemParams,
    code: CodeSpec,
    control: Control,
    x0: Optional[FluidState] = None,
    step: Optional[float] = None,
) -> FluidTrajectory:
    """Integrate the fluid dynamics on [0, T] with fixed-step RK4

    Args:
        params: System parameters; params.T is the horizon
        code: Repairing code (fixes the number of compartments)
        control: Activation control with declared switch epochs
        x0: Initial state (defaults to all mass in compartment d at params.x_d0)
        step: Maximum step (defaults to settings.step_fraction * T)

    Returns:
        FluidTrajectory whose grid contains every switch epoch
    """
    horizon = params.T
    step = _resolve_step(horizon, step)
    if x0 is None:
        x0 = FluidState.initial(code.d, params.x_d0)
    if x0.d != code.d:
        raise DimensionMismatch(f"Initial state has {x0.x.size} compartments, code needs {code.d + 1}")

    epochs = list(control.switch_epochs)
    if any(e < 0 or e > horizon for e in epochs) or epochs != sorted(epochs):
        raise ValueError(f"Switch epochs must be sorted within [0, {horizon}], got {epochs}")

    grid, owner = segment_grid(horizon, epochs, step)
    A = generator_matrix(params, code)
    states = np.empty((grid.size, code.d + 1))
    states[0] = x0.x
    controls = np.empty(grid.size - 1)

    piecewise = bool(getattr(control, "piecewise_constant", False))
    propagators: Dict[float, Tuple[np.ndarray, np.ndarray]] = {}
    x = x0.x.copy()
    segment = -1
    for i in range(grid.size - 1):
        t = grid[i]
        h = grid[i + 1] - t
        if not piecewise:
            x, controls[i] = _rk4_step(A, x, t, h, control, params.zeta)
            states[i + 1] = x
            continue
        if owner[i] != segment:
            segment = owner[i]
            seg_mask = owner == segment
            seg_start = grid[:-1][seg_mask][0]
            seg_end = grid[1:][seg_mask][-1]
            u = _check_control(control(0.5 * (seg_start + seg_end)))
        key = round(h, 15)
        if key not in propagators:
            propagators[key] = rk4_propagator(A, h)
        P, Q = propagators[key]
        x = P @ x + Q[:, 0] * (params.zeta * u)
        states[i + 1] = x
        controls[i] = u

    if not np.all(np.isfinite(states)):
        raise NonFiniteState(
            f"Fluid integration diverged (step={step:.3g}, mu={params.mu}, lambda={params.lam})"
        )
    most_negative = float(states.min())
    if most_negative < -settings.negative_clamp:
        logger.debug(f"Clamping fluid state, most negative value {most_negative:.3e}")
    np.maximum(states, 0.0, out=states)
    return FluidTrajectory(grid=grid, states=states, control=controls, unclamped_min=most_negative)


def _rk4_step(
    A: np.ndarray, x: np.ndarray, t: float, h: float, control: Control, zeta: float
) -> Tuple[np.ndarray, float]:
    """Classical RK4 step with the control read at each stage

    Interval ends are sampled one-sidedly so a discontinuity at an epoch
    belongs to the segment it opens. Returns the next state and the
    Simpson mean of the control over the step.
    """
    nudge = 1e-9 * h
    u0 = _check_control(control(t + nudge))
    um = _check_control(control(t + 0.5 * h))
    u1 = _check_control(control(t + h - nudge))
    e0 = np.zeros_like(x)
    e0[0] = zeta

    k1 = A @ x + u0 * e0
    k2 = A @ (x + 0.5 * h * k1) + um * e0
    k3 = A @ (x + 0.5 * h * k2) + um * e0
    k4 = A @ (x + h * k3) + u1 * e0
    return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), (u0 + 4.0 * um + u1) / 6.0


def uncontrolled_closed_form_impulse(
    t: float, params: SystemParams, code: CodeSpec, x_d0: Optional[float] = None
) -> float:
    """Impulse-input closed form e^{-mu t} (zeta (1 - e^{-lambda t})^d + X_d(0)), diagnostics only

    It matches an impulse rather than a step activation input, so it disagrees
    with the integrated dynamics under u = 1.
    """
    x_d0 = params.x_d0 if x_d0 is None else x_d0
    return math.exp(-params.mu * t) * (
        params.zeta * (1.0 - math.exp(-params.lam * t)) ** code.d + x_d0
    )


def _critical_mu(margin: Callable[[float], float]) -> float:
    """Largest mu keeping margin(mu) >= 0, for margin nonincreasing in mu"""
    if margin(0.0) < 0:
        return 0.0
    hi = 1.0
    for _ in range(settings.mu_bar_max_doublings):
        if margin(hi) < 0:
            break
        hi *= 2.0
    else:
        logger.warning(f"Constraint still met at mu={hi:.3g}; reporting an unbounded critical rate")
        return math.inf
    return optimize.bisect(margin, 0.0, hi, xtol=1e-12, rtol=settings.mu_bar_rtol)


def feasibility_check(
    params: SystemParams,
    code: CodeSpec,
    n_tight: Optional[float] = None,
    d_tight: Optional[float] = None,
    step: Optional[float] = None,
    x0: Optional[FluidState] = None,
) -> FeasibilityReport:
    """Check the terminal and path constraints under full activation u = 1

    Any admissible control keeps X_d below the u = 1 trajectory, so the
    problem is feasible iff that trajectory meets both constraints.
    """
    default_n, default_d = tightened(params, code)
    n_tight = default_n if n_tight is None else n_tight
    d_tight = default_d if d_tight is None else d_tight
    step = _resolve_step(params.T, step)
    full = ConstantControl(1.0)

    @lru_cache(maxsize=256)
    def full_activation(mu: float) -> Optional[FluidTrajectory]:
        # Keep h (mu + lambda d) inside the RK4 stability interval
        stable = min(step, 2.0 / (mu + params.lam * code.d))
        try:
            return integrate(params.with_changes(mu=mu), code, full, x0=x0, step=stable)
        except NonFiniteState:
            return None

    def terminal_margin(mu: float) -> float:
        traj = full_activation(mu)
        return -math.inf if traj is None else traj.x_d_terminal - n_tight

    def path_margin(mu: float) -> float:
        traj = full_activation(mu)
        return -math.inf if traj is None else traj.x_d_min - d_tight

    trajectory = full_activation(params.mu)
    if trajectory is None:
        raise NonFiniteState(f"Full-activation integration diverged (mu={params.mu}, lambda={params.lam})")
    x_d_terminal = trajectory.x_d_terminal
    x_d_min = trajectory.x_d_min
    terminal_ok = x_d_terminal >= n_tight
    path_ok = x_d_min >= d_tight
    if not terminal_ok:
        binding = Binding.TERMINAL
    elif not path_ok:
        binding = Binding.PATH
    else:
        binding = Binding.NONE

    mu_bar_terminal = _critical_mu(terminal_margin)
    mu_bar_path = _critical_mu(path_margin)

    x_d0 = params.x_d0 if x0 is None else x0.x_d
    closed_form = uncontrolled_closed_form_impulse(params.T, params, code, x_d0)
    closed_form_feasible = (
        params.zeta * (1.0 - math.exp(-params.lam * params.T)) ** code.d
        >= n_tight * math.exp(params.mu * params.T) - x_d0
    )

    report = FeasibilityReport(
        feasible=terminal_ok and path_ok,
        x_d_terminal=x_d_terminal,
        x_d_min=x_d_min,
        mu_bar=min(mu_bar_terminal, mu_bar_path),
        mu_bar_terminal=mu_bar_terminal,
        mu_bar_path=mu_bar_path,
        binding=binding,
        n_tight=n_tight,
        d_tight=d_tight,
        x_d_terminal_closed_form=closed_form,
        closed_form_feasible=closed_form_feasible,
    )
    logger.info(
        f"Feasibility: {'feasible' if report.feasible else 'infeasible'} "
        f"(X_d(T)={x_d_terminal:.4f} vs {n_tight:g}, min X_d={x_d_min:.4f} vs {d_tight:g}, "
        f"mu_bar={report.mu_bar:.4g})"
    )
    if closed_form_feasible != report.feasible:
        logger.warning(
            f"Impulse closed form says {'feasible' if closed_form_feasible else 'infeasible'} "
            f"(X_d(T)={closed_form:.4f}); integrated dynamics are authoritative"
        )
    return report
