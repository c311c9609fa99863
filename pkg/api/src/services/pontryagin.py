"""Costate dynamics and switching-law analysis for the relaxed problem

On feasible arcs the adjoint system is decoupled from the state:

    dp/dt = -A^T p - c2 beta lambda w,    w_k = d - k,
    p_k(T) = 0 (k < d),  p_d(T) = -gamma,

and the Hamiltonian is affine in u with coefficient zeta (c1 + p_0). The
optimal control switches on exactly where p_0 < -c1.
"""

import math
from typing import Callable, List, Optional, Tuple

import numpy as np
from loguru import logger
from scipy import integrate as quadrature
from scipy import optimize
from scipy.interpolate import CubicHermiteSpline

from ..core.config import settings
from ..core.errors import (
    ControlOutOfRange,
    DimensionMismatch,
    ExtremaOutOfOrder,
    IndexOutOfRange,
    MultipleIntervals,
    NonFiniteState,
    NotPureActivation,
)
from ..structures.schemas import (
    CodeSpec,
    ExtremaKind,
    ExtremaSet,
    PureActivationDiagnostics,
    SystemParams,
    ThresholdPolicy,
)
from ..structures.trajectories import CostateTrajectory, FluidState
from .fluid import generator_matrix, rk4_propagator

SwitchingFunction = Callable[[np.ndarray], np.ndarray]


def _transfer_weights(code: CodeSpec) -> np.ndarray:
    """w_k = d - k: helpers still to be contacted by a node holding k chunks"""
    return (code.d - np.arange(code.d + 1)).astype(float)


def adjoint_backward(
    params: SystemParams, code: CodeSpec, gamma: float, step: Optional[float] = None
) -> CostateTrajectory:
    """Integrate the adjoint system backward from T with fixed-step RK4

    Args:
        params: System parameters
        code: Repairing code
        gamma: Terminal multiplier, p_d(T) = -gamma
        step: Maximum step (defaults to settings.step_fraction * T)

    Returns:
        CostateTrajectory on an increasing grid over [0, T]
    """
    if gamma < 0:
        raise ValueError(f"Multiplier must be nonnegative, got gamma={gamma}")
    horizon = params.T
    if step is None:
        step = settings.step_fraction * horizon
    if step <= 0 or step > horizon:
        raise ValueError(f"Step must lie in (0, {horizon}], got {step}")

    # Reverse time s = T - t turns the terminal problem into dp/ds = A^T p + c
    M = generator_matrix(params, code).T
    forcing = params.c2 * code.beta * params.lam * _transfer_weights(code)
    n_steps = max(1, math.ceil(horizon / step - 1e-9))
    h = horizon / n_steps
    P, Q = rk4_propagator(M, h)
    drive = Q @ forcing

    p = np.empty((n_steps + 1, code.d + 1))
    p[0] = 0.0
    p[0, -1] = -gamma
    for i in range(n_steps):
        p[i + 1] = P @ p[i] + drive

    if not np.all(np.isfinite(p)):
        raise NonFiniteState(f"Adjoint integration diverged for gamma={gamma}")

    p = p[::-1].copy()
    grid = np.linspace(0.0, horizon, n_steps + 1)
    grid[-1] = horizon
    dp = -(p @ M.T + forcing)
    return CostateTrajectory(grid=grid, p=p, dp=dp, gamma=gamma)


def g_integral(k: int, tau: float, params: SystemParams, code: CodeSpec) -> float:
    """I_k(tau) = int_0^tau (e^{lambda v} - 1)^k e^{-(mu + lambda d) v} dv

    Evaluated by binomial expansion with exact (compensated) summation; falls
    back to adaptive quadrature when the alternating sum cancels too much.
    """
    d = code.d
    if not 0 <= k <= d - 1:
        raise IndexOutOfRange(f"Binomial index {k} outside [0, {d - 1}]")
    if tau <= 0:
        return 0.0
    mu, lam = params.mu, params.lam

    terms = []
    for j in range(k + 1):
        rate = mu + lam * (d - j)
        sign = -1.0 if (k - j) % 2 else 1.0
        terms.append(sign * math.comb(k, j) * -math.expm1(-rate * tau) / rate)
    value = math.fsum(terms)

    largest = max(abs(term) for term in terms)
    if value > 0 and largest <= value * 10.0 ** settings.cancellation_digits:
        return value

    logger.debug(f"I_{k}({tau:.4g}) loses too many digits in the binomial sum, using quadrature")
    tail = mu + lam * (d - k)

    def integrand(v: float) -> float:
        return (-math.expm1(-lam * v)) ** k * math.exp(-tail * v)

    value, _ = quadrature.quad(integrand, 0.0, tau, epsabs=0.0, epsrel=1e-13, limit=200)
    return value


def transfer_cost_costate(t: float, params: SystemParams, code: CodeSpec) -> float:
    """G(t) in collapsed form c2 beta d lambda (1 - e^{-(mu + lambda)(T - t)}) / (mu + lambda)"""
    tau = params.T - t
    rate = params.mu + params.lam
    return params.c2 * code.beta * code.d * params.lam * -math.expm1(-rate * tau) / rate


def activation_costate(t: float, params: SystemParams, code: CodeSpec, gamma: float) -> float:
    """F(t) = gamma (1 - e^{-lambda (T - t)})^d e^{-mu (T - t)}"""
    tau = params.T - t
    return gamma * (-math.expm1(-params.lam * tau)) ** code.d * math.exp(-params.mu * tau)


def p0_closed_form(t: float, params: SystemParams, code: CodeSpec, gamma: float) -> float:
    """p_0(t) = -F(t) + G(t) with G as the binomial sum of g_integral terms"""
    if not 0.0 <= t <= params.T:
        raise ValueError(f"Time {t} outside [0, {params.T}]")
    value = -activation_costate(t, params, code, gamma)
    if params.c2 > 0:
        tau = params.T - t
        d = code.d
        series = math.fsum(
            math.comb(d - 1, k) * g_integral(k, tau, params, code) for k in range(d)
        )
        value += params.c2 * code.beta * d * params.lam * series
    return value


def p0_derivative(t: np.ndarray, params: SystemParams, code: CodeSpec, gamma: float) -> np.ndarray:
    """Analytic time derivative of p_0"""
    tau = params.T - np.asarray(t, dtype=float)
    d, lam, mu = code.d, params.lam, params.mu
    q = -np.expm1(-lam * tau)
    dF_dtau = gamma * np.exp(-mu * tau) * q ** (d - 1) * (d * lam * np.exp(-lam * tau) - mu * q)
    return dF_dtau - params.c2 * code.beta * d * lam * np.exp(-(mu + lam) * tau)


def p0_from_costate(costate: CostateTrajectory) -> SwitchingFunction:
    """Cubic Hermite interpolant of the integrated p_0"""
    return CubicHermiteSpline(costate.grid, costate.p0, costate.dp0)


def p0_from_closed_form(params: SystemParams, code: CodeSpec, gamma: float) -> SwitchingFunction:
    def evaluate(t):
        return np.vectorize(lambda s: p0_closed_form(min(max(s, 0.0), params.T), params, code, gamma))(t)

    return evaluate


def _sign_runs(below: np.ndarray) -> List[Tuple[int, int]]:
    """Maximal runs (first, last) of True in a boolean array"""
    edges = np.diff(below.astype(np.int8))
    starts = list(np.flatnonzero(edges == 1) + 1)
    ends = list(np.flatnonzero(edges == -1))
    if below[0]:
        starts.insert(0, 0)
    if below[-1]:
        ends.append(below.size - 1)
    return list(zip(starts, ends))


def extract_policy(
    p0: SwitchingFunction, params: SystemParams, scan_points: Optional[int] = None
) -> ThresholdPolicy:
    """Threshold policy switching on where p_0(t) < -c1

    Args:
        p0: Vectorized switching function on [0, T]
        params: System parameters (c1 and T are used)
        scan_points: Bracketing scan resolution (defaults to settings.scan_points)

    Returns:
        ThresholdPolicy; the null policy when p_0 >= -c1 everywhere
    """
    horizon, c1 = params.T, params.c1
    n = scan_points or settings.scan_points
    scan = np.linspace(0.0, horizon, n + 1)
    below = np.asarray(p0(scan), dtype=float) + c1 < 0.0
    runs = _sign_runs(below)
    if not runs:
        return ThresholdPolicy.null()
    if len(runs) > 1:
        epochs = [(float(scan[i]), float(scan[j])) for i, j in runs]
        raise MultipleIntervals(f"Switching function crosses -c1 on {len(runs)} intervals: {epochs}")

    def gap(t: float) -> float:
        return float(p0(t)) + c1

    xtol = settings.root_tolerance_fraction * horizon
    first, last = runs[0]
    t_on = 0.0 if first == 0 else optimize.bisect(gap, scan[first - 1], scan[first], xtol=xtol)
    t_off = horizon if last == n else optimize.bisect(gap, scan[last], scan[last + 1], xtol=xtol)
    return ThresholdPolicy(t_on=t_on, t_off=max(t_on, t_off))


def classify_extrema(
    params: SystemParams, code: CodeSpec, gamma: float, scan_points: Optional[int] = None
) -> ExtremaSet:
    """Interior critical points of p_0 on (0, T)"""
    if gamma < 0:
        raise ValueError(f"Multiplier must be nonnegative, got gamma={gamma}")
    horizon = params.T
    n = scan_points or settings.scan_points
    scan = np.linspace(0.0, horizon, n + 1)[1:-1]
    slope = p0_derivative(scan, params, code, gamma)
    sign = np.sign(slope)

    def slope_at(t: float) -> float:
        return float(p0_derivative(t, params, code, gamma))

    xtol = settings.root_tolerance_fraction * horizon
    minima, maxima = [], []
    for i in np.flatnonzero(sign[:-1] * sign[1:] < 0):
        t_c = optimize.bisect(slope_at, scan[i], scan[i + 1], xtol=xtol)
        (minima if sign[i] < 0 else maxima).append(t_c)

    if len(minima) > 1 or len(maxima) > 1:
        logger.warning(f"p_0 has {len(minima)} minima and {len(maxima)} maxima on (0, T)")

    def value(t: float) -> float:
        return transfer_cost_costate(t, params, code) - activation_costate(t, params, code, gamma)

    t_m = minima[0] if minima else None
    t_M = maxima[-1] if maxima else None
    if t_m is None and t_M is None:
        return ExtremaSet(kind=ExtremaKind.EMPTY)
    if t_m is None:
        return ExtremaSet(kind=ExtremaKind.MAX_ONLY, t_M=t_M, M=value(t_M))
    if t_M is None:
        return ExtremaSet(kind=ExtremaKind.MIN_ONLY, t_m=t_m, m=value(t_m))
    if t_m >= t_M:
        raise ExtremaOutOfOrder(f"Maximum of p_0 at {t_M:.6g} precedes its minimum at {t_m:.6g}")
    return ExtremaSet(kind=ExtremaKind.MIN_MAX, t_m=t_m, m=value(t_m), t_M=t_M, M=value(t_M))


def pure_activation_solve(
    params: SystemParams, code: CodeSpec, gamma: float
) -> Tuple[ThresholdPolicy, PureActivationDiagnostics]:
    """Closed-form threshold policy when transfers are free (c2 = 0)

    Roots of (1 - z) = (c1/gamma)^{1/d} z^{-mu/(lambda d)}, z = e^{-lambda (T - t)},
    are located in y = log z so that vanishing z_on does not underflow.
    """
    if params.c2 != 0:
        raise NotPureActivation(f"Analytic solution needs c2 = 0, got c2={params.c2}")
    if gamma <= 0:
        raise ValueError(f"Multiplier must be positive, got gamma={gamma}")
    d, lam, mu, horizon, c1 = code.d, params.lam, params.mu, params.T, params.c1

    if mu > 0:
        z_star = mu / (lam * d + mu)
        t_min = horizon + math.log(z_star) / lam
        m_value = -gamma * (lam * d / (lam * d + mu)) ** d * z_star ** (mu / lam)
    else:
        t_min = None
        m_value = -gamma

    if c1 == 0:
        diagnostics = PureActivationDiagnostics(
            mu_crit=math.inf, case=1, t_min=t_min, m_value=m_value, z_on=0.0, z_off=1.0
        )
        return ThresholdPolicy(t_on=0.0, t_off=horizon), diagnostics

    q_horizon = -math.expm1(-lam * horizon)
    mu_crit = max(0.0, (d / horizon) * math.log((gamma / c1) ** (1.0 / d) * q_horizon))
    a = (c1 / gamma) ** (1.0 / d)
    p = mu / (lam * d)

    def excess(y: float) -> float:
        return -math.expm1(y) - a * math.exp(-p * y)

    y_on: Optional[float] = None
    y_off: Optional[float] = None
    if mu == 0:
        if a < 1:
            y_on, y_off = -math.inf, math.log1p(-a)
    else:
        y_c = min(0.0, math.log(a * p) / (p + 1.0))
        if excess(y_c) > 0:
            y_lo = math.log(a) / p - 1.0
            y_on = optimize.bisect(excess, y_lo, y_c, xtol=1e-13)
            y_off = optimize.bisect(excess, y_c, 0.0, xtol=1e-13)

    if mu <= mu_crit:
        case = 1
    elif m_value >= -c1:
        case = 2
    else:
        case = 3

    z_on = None if y_on is None else math.exp(y_on)
    z_off = None if y_off is None else math.exp(y_off)
    diagnostics = PureActivationDiagnostics(
        mu_crit=mu_crit, case=case, t_min=t_min, m_value=m_value, z_on=z_on, z_off=z_off
    )

    if case == 2 or y_off is None:
        return ThresholdPolicy.null(), diagnostics
    t_off = horizon + y_off / lam
    t_on = 0.0 if case == 1 else max(0.0, horizon + y_on / lam)
    if t_off <= t_on:
        return ThresholdPolicy.null(), diagnostics
    return ThresholdPolicy(t_on=t_on, t_off=t_off), diagnostics


def hamiltonian(
    state: FluidState | np.ndarray,
    u: float,
    costate: np.ndarray,
    params: SystemParams,
    code: CodeSpec,
) -> float:
    """Hamiltonian on feasible arcs (the augmentation term vanishes there)"""
    x = state.x if isinstance(state, FluidState) else np.asarray(state, dtype=float)
    p = np.asarray(costate, dtype=float)
    if x.shape != (code.d + 1,) or p.shape != (code.d + 1,):
        raise DimensionMismatch(
            f"State {x.shape} and costate {p.shape} must both have {code.d + 1} entries"
        )
    if not 0.0 <= u <= 1.0:
        raise ControlOutOfRange(f"Control must lie in [0, 1], got u={u}")
    running = params.c1 * params.zeta * u + params.c2 * code.beta * params.lam * float(
        _transfer_weights(code) @ x
    )
    drift = generator_matrix(params, code) @ x
    drift[0] += params.zeta * u
    return running + float(p @ drift)
