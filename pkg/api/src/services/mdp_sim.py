"""Exact stochastic simulation of the controlled regeneration Markov chain

Each sample path is generated by the direct (Gillespie) method: between two
control switch epochs the event rates are constant, the next event time is
exponential in the total rate and truncated at the next epoch, where rates
are re-read. Paths use independent Philox streams spawned from one seed, so
results do not depend on how runs are spread over worker threads.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger
from numba import njit
from tqdm import tqdm

from ..core.config import settings
from ..structures.schemas import (
    CodeSpec,
    Estimate,
    SimConfig,
    SimStats,
    SystemParams,
    ThresholdPolicy,
)
from .coding import tightened

CHUNK_SIZE = 256
Z_95 = 1.959963984540054


@njit(nogil=True)
def _gillespie(
    x,
    zeta,
    mu,
    lam,
    c1,
    c2beta,
    t_on,
    t_off,
    horizon,
    absorb_below,
    operational_failures,
    record_grid,
    recorded,
    rng,
):
    """Simulate one path in place on the integer state x

    Returns (end time, cost, min x_d, absorbed, activations, failures, acquisitions).
    """
    d = x.size - 1
    t = 0.0
    cost = 0.0
    min_xd = x[d]
    absorbed = False
    activations = 0
    failures = 0
    acquisitions = 0
    g = 0
    n_grid = record_grid.size
    last_failing = d if operational_failures else d - 1

    while True:
        if t < t_on:
            boundary, u = t_on, 0.0
        elif t < t_off:
            boundary, u = t_off, 1.0
        else:
            boundary, u = horizon, 0.0
        if boundary > horizon:
            boundary = horizon

        activation = zeta * u
        failing = 0
        for j in range(last_failing + 1):
            failing += x[j]
        failure = mu * failing
        acquisition = 0.0
        for j in range(d):
            acquisition += (d - j) * lam * x[j]
        total = activation + failure + acquisition

        t_next = np.inf
        if total > 0.0:
            t_next = t + rng.exponential(1.0 / total)

        if t_next >= boundary:
            while g < n_grid and record_grid[g] < boundary:
                for j in range(d + 1):
                    recorded[g, j] = x[j]
                g += 1
            t = boundary
            if boundary >= horizon:
                break
            continue

        while g < n_grid and record_grid[g] < t_next:
            for j in range(d + 1):
                recorded[g, j] = x[j]
            g += 1
        t = t_next

        r = rng.random() * total
        if r < activation:
            x[0] += 1
            cost += c1
            activations += 1
        elif r < activation + failure:
            r -= activation
            chosen = -1
            acc = 0.0
            for j in range(last_failing + 1):
                if x[j] > 0:
                    chosen = j
                acc += mu * x[j]
                if r < acc:
                    break
            x[chosen] -= 1
            failures += 1
        else:
            r -= activation + failure
            chosen = -1
            acc = 0.0
            for j in range(d):
                if x[j] > 0:
                    chosen = j
                acc += (d - j) * lam * x[j]
                if r < acc:
                    break
            x[chosen] -= 1
            x[chosen + 1] += 1
            cost += c2beta
            acquisitions += 1

        if x[d] < min_xd:
            min_xd = x[d]
        if x[d] < absorb_below:
            absorbed = True
            break

    while g < n_grid:
        for j in range(d + 1):
            recorded[g, j] = x[j]
        g += 1
    return t, cost, min_xd, absorbed, activations, failures, acquisitions


@dataclass(frozen=True)
class SamplePath:
    terminal: np.ndarray  # integer state at the end of the path
    cost: float
    min_xd: int
    absorbed: bool
    end_time: float
    activations: int
    failures: int
    acquisitions: int
    recorded: np.ndarray  # state on the record grid

    @property
    def terminal_xd(self) -> int:
        return int(self.terminal[-1])


def simulate_path(
    params: SystemParams,
    code: CodeSpec,
    policy: ThresholdPolicy,
    x0: np.ndarray,
    rng: np.random.Generator,
    operational_failures: bool = False,
    record_grid: Optional[np.ndarray] = None,
    absorb_below: Optional[int] = None,
) -> SamplePath:
    """Run one exact sample path of the regeneration chain on [0, T]

    Args:
        params: Rates and costs (zeta is the activation rate of this instance)
        code: Repairing code
        policy: Threshold activation policy
        x0: Integer initial state of length d+1
        rng: Random generator for this path
        operational_failures: Let nodes in compartment d fail at rate mu
        record_grid: Times at which to record the state
        absorb_below: Stop when x_d drops below this (defaults to k)

    Returns:
        SamplePath with terminal state, cost, event counts and recorded states
    """
    x = np.array(x0, dtype=np.int64)
    if x.shape != (code.d + 1,) or np.any(x < 0):
        raise ValueError(f"Initial state must be {code.d + 1} nonnegative integers, got {x0}")
    grid = np.zeros(0) if record_grid is None else np.asarray(record_grid, dtype=float)
    recorded = np.zeros((grid.size, code.d + 1))

    end, cost, min_xd, absorbed, n_act, n_fail, n_acq = _gillespie(
        x,
        float(params.zeta),
        float(params.mu),
        float(params.lam),
        float(params.c1),
        float(params.c2 * code.beta),
        float(policy.t_on),
        float(policy.t_off),
        float(params.T),
        int(code.k if absorb_below is None else absorb_below),
        bool(operational_failures),
        grid,
        recorded,
        rng,
    )
    return SamplePath(
        terminal=x,
        cost=float(cost),
        min_xd=int(min_xd),
        absorbed=bool(absorbed),
        end_time=float(end),
        activations=int(n_act),
        failures=int(n_fail),
        acquisitions=int(n_acq),
        recorded=recorded,
    )


@dataclass(frozen=True)
class PathSamples:
    """Per-run outcomes of a Monte Carlo batch, in run order"""

    terminal_xd: np.ndarray
    min_xd: np.ndarray
    cost: np.ndarray
    absorbed: np.ndarray
    events: np.ndarray  # (runs, 3): activations, failures, acquisitions
    record_grid: np.ndarray
    trajectory_sum: np.ndarray  # (grid, d+1) summed over runs
    n_target: float
    d_floor: float


def _default_grid(horizon: float) -> np.ndarray:
    return np.linspace(0.0, horizon, 51)


def sample_paths(
    params: SystemParams, code: CodeSpec, policy: ThresholdPolicy, config: SimConfig
) -> PathSamples:
    """Run config.runs independent paths on the instance scaled by config.scale"""
    scale = config.scale
    grid = np.asarray(config.record_grid, dtype=float) if config.record_grid else _default_grid(params.T)
    if np.any(grid < 0) or np.any(grid > params.T):
        raise ValueError(f"Record grid must lie within [0, {params.T}]")

    scaled = params.with_changes(zeta=params.zeta * scale, x_d0=params.x_d0 * scale)
    n_tight, d_tight = tightened(params, code)
    x0 = np.zeros(code.d + 1, dtype=np.int64)
    x0[code.d] = int(round(params.x_d0 * scale))
    absorb_below = code.k * scale

    children = np.random.SeedSequence(config.seed).spawn(config.runs)
    chunks = [range(i, min(i + CHUNK_SIZE, config.runs)) for i in range(0, config.runs, CHUNK_SIZE)]

    def run_chunk(indices: range) -> Tuple[List[SamplePath], np.ndarray]:
        paths = []
        trajectory_sum = np.zeros((grid.size, code.d + 1))
        for i in indices:
            rng = np.random.Generator(np.random.Philox(children[i]))
            path = simulate_path(
                scaled, code, policy, x0, rng, config.operational_failures, grid, absorb_below
            )
            trajectory_sum += path.recorded
            paths.append(path)
        return paths, trajectory_sum

    workers = max(1, settings.sim_workers)
    progress = dict(total=len(chunks), desc="monte carlo", disable=not settings.show_progress)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(tqdm(pool.map(run_chunk, chunks), **progress))
    else:
        results = [run_chunk(chunk) for chunk in tqdm(chunks, **progress)]

    paths = [path for chunk_paths, _ in results for path in chunk_paths]
    trajectory_sum = np.zeros((grid.size, code.d + 1))
    for _, partial in results:
        trajectory_sum += partial

    return PathSamples(
        terminal_xd=np.array([p.terminal_xd for p in paths], dtype=float),
        min_xd=np.array([p.min_xd for p in paths], dtype=float),
        cost=np.array([p.cost for p in paths]),
        absorbed=np.array([p.absorbed for p in paths]),
        events=np.array([[p.activations, p.failures, p.acquisitions] for p in paths], dtype=float),
        record_grid=grid,
        trajectory_sum=trajectory_sum,
        n_target=n_tight * scale,
        d_floor=d_tight * scale,
    )


def _mean_estimate(values: np.ndarray) -> Estimate:
    n = values.size
    mean = math.fsum(values) / n
    std_error = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Estimate(value=mean, std_error=std_error, half_width=Z_95 * std_error)


def _proportion_estimate(hits: np.ndarray) -> Estimate:
    n = hits.size
    p = float(np.count_nonzero(hits)) / n
    std_error = math.sqrt(p * (1.0 - p) / n)
    return Estimate(value=p, std_error=std_error, half_width=Z_95 * std_error)


def summarize(samples: PathSamples) -> SimStats:
    runs = samples.cost.size
    return SimStats(
        runs=runs,
        p_terminal_success=_proportion_estimate(samples.terminal_xd >= samples.n_target),
        p_path_violation=_proportion_estimate(samples.min_xd < samples.d_floor),
        mean_cost=_mean_estimate(samples.cost),
        mean_terminal_xd=_mean_estimate(samples.terminal_xd),
        absorbed_fraction=float(np.count_nonzero(samples.absorbed)) / runs,
        mean_activations=float(samples.events[:, 0].mean()),
        mean_failures=float(samples.events[:, 1].mean()),
        mean_acquisitions=float(samples.events[:, 2].mean()),
        record_grid=samples.record_grid.tolist(),
        mean_trajectory=(samples.trajectory_sum / runs).tolist(),
    )


def monte_carlo(
    params: SystemParams, code: CodeSpec, policy: ThresholdPolicy, config: SimConfig
) -> SimStats:
    """Estimate success and violation probabilities and cost under a policy"""
    logger.info(
        f"Simulating {config.runs} paths (seed={config.seed}, scale={config.scale}, "
        f"operational failures {'on' if config.operational_failures else 'off'})"
    )
    stats = summarize(sample_paths(params, code, policy, config))
    logger.info(
        f"P(X_d(T) >= n)={stats.p_terminal_success.value:.4f}, "
        f"P(min X_d < d)={stats.p_path_violation.value:.4f}, "
        f"mean cost={stats.mean_cost.value:.4f} +/- {stats.mean_cost.half_width:.4f}"
    )
    return stats
