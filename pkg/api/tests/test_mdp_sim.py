"""Tests for the exact stochastic simulation"""

import math
from unittest.mock import patch

import numpy as np
import pytest
from pydantic import ValidationError

from api.src.core.config import settings
from api.src.services.mdp_sim import monte_carlo, sample_paths, simulate_path, summarize
from api.src.services.optimizer import solve
from api.src.structures.schemas import SimConfig, ThresholdPolicy


def _start(code, x_d0):
    x0 = np.zeros(code.d + 1, dtype=np.int64)
    x0[-1] = x_d0
    return x0


def _rng(seed=7):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def test_path_conserves_nodes(mbr_code, reference):
    params = reference(mu=0.3, c2=100.0)
    path = simulate_path(
        params,
        mbr_code,
        ThresholdPolicy(t_on=0.2, t_off=2.0),
        _start(mbr_code, 39),
        _rng(),
        operational_failures=True,
    )
    assert path.terminal.sum() == 39 + path.activations - path.failures
    assert np.all(path.terminal >= 0)
    assert path.cost == pytest.approx(
        params.c1 * path.activations + params.c2 * mbr_code.beta * path.acquisitions
    )
    assert path.min_xd <= min(39, path.terminal_xd)
    assert path.end_time == pytest.approx(params.T)


def test_idle_system_has_no_events(mbr_code, reference):
    path = simulate_path(
        reference(mu=0.0),
        mbr_code,
        ThresholdPolicy.null(),
        _start(mbr_code, 39),
        _rng(),
        record_grid=np.linspace(0.0, 3.5, 8),
    )
    assert path.activations == path.failures == path.acquisitions == 0
    assert path.cost == 0.0
    assert path.terminal_xd == 39
    np.testing.assert_array_equal(path.recorded[:, -1], 39.0)


def test_operational_servers_fail_only_when_enabled(small_code, late_params):
    params = late_params.with_changes(mu=5.0, zeta=0.0)
    x0 = _start(small_code, 4)
    kept = simulate_path(params, small_code, ThresholdPolicy.null(), x0, _rng())
    assert kept.failures == 0 and not kept.absorbed

    grid = np.linspace(0.0, params.T, 11)
    lost = simulate_path(
        params, small_code, ThresholdPolicy.null(), x0, _rng(), operational_failures=True, record_grid=grid
    )
    assert lost.absorbed
    assert lost.terminal_xd < small_code.k
    assert lost.end_time < params.T
    # The state is frozen after absorption
    np.testing.assert_array_equal(lost.recorded[-1], lost.terminal)


def test_initial_state_is_recorded(mbr_code, reference):
    path = simulate_path(
        reference(),
        mbr_code,
        ThresholdPolicy(t_on=0.0, t_off=1.22),
        _start(mbr_code, 39),
        _rng(),
        record_grid=np.array([0.0, 1.0, 3.5]),
    )
    np.testing.assert_array_equal(path.recorded[0], _start(mbr_code, 39))
    np.testing.assert_array_equal(path.recorded[-1], path.terminal)


def test_rejects_malformed_initial_state(mbr_code, reference):
    with pytest.raises(ValueError):
        simulate_path(reference(), mbr_code, ThresholdPolicy.null(), np.array([1, 2]), _rng())


def test_activation_count_matches_rate(mbr_code, reference):
    """Activations form a Poisson process of rate zeta on the active interval"""
    stats = monte_carlo(
        reference(), mbr_code, ThresholdPolicy(t_on=0.0, t_off=1.22), SimConfig(seed=11, runs=2000)
    )
    expected = 10.0 * 1.22
    assert abs(stats.mean_activations - expected) < 4.0 * math.sqrt(expected / 2000)


def test_monte_carlo_is_reproducible(mbr_code, reference):
    config = SimConfig(seed=5, runs=300)
    policy = ThresholdPolicy(t_on=0.0, t_off=1.22)
    first = monte_carlo(reference(), mbr_code, policy, config)
    second = monte_carlo(reference(), mbr_code, policy, config)
    assert first.model_dump_json() == second.model_dump_json()
    other = monte_carlo(reference(), mbr_code, policy, SimConfig(seed=6, runs=300))
    assert other.model_dump_json() != first.model_dump_json()


def test_worker_count_does_not_change_results(mbr_code, reference):
    config = SimConfig(seed=9, runs=600)
    policy = ThresholdPolicy(t_on=0.0, t_off=1.22)
    serial = monte_carlo(reference(), mbr_code, policy, config)
    with patch.object(settings, "sim_workers", 3):
        threaded = monte_carlo(reference(), mbr_code, policy, config)
    assert threaded == serial


def test_per_run_samples_and_estimates(mbr_code, reference):
    samples = sample_paths(
        reference(), mbr_code, ThresholdPolicy(t_on=0.0, t_off=1.22), SimConfig(seed=3, runs=50)
    )
    assert samples.cost.shape == (50,)
    assert samples.record_grid[0] == 0.0 and samples.record_grid[-1] == pytest.approx(3.5)
    stats = summarize(samples)
    assert stats.runs == 50
    assert 0.0 <= stats.p_terminal_success.value <= 1.0
    assert stats.mean_cost.half_width == pytest.approx(1.959963984540054 * stats.mean_cost.std_error)
    assert stats.mean_cost.value == pytest.approx(samples.cost.mean())
    assert len(stats.mean_trajectory) == samples.record_grid.size
    assert len(stats.mean_trajectory[0]) == mbr_code.d + 1


def test_record_grid_must_lie_in_horizon(mbr_code, reference):
    with pytest.raises(ValueError):
        monte_carlo(
            reference(), mbr_code, ThresholdPolicy.null(), SimConfig(seed=1, runs=1, record_grid=(0.0, 5.0))
        )


def test_sim_config_validation():
    with pytest.raises(ValidationError):
        SimConfig(seed=1, runs=0)
    with pytest.raises(ValidationError):
        SimConfig(seed=-1, runs=1)
    with pytest.raises(ValidationError):
        SimConfig(seed=1, runs=1, scale=0)


def test_no_activation_never_restores(mbr_code, reference):
    stats = monte_carlo(reference(mu=0.05), mbr_code, ThresholdPolicy.null(), SimConfig(seed=2, runs=200))
    assert stats.p_terminal_success.value == 0.0
    assert stats.mean_activations == 0.0


def test_zero_effect_switch_epoch(mbr_code, reference):
    """Truncating the clock at an epoch that changes nothing leaves statistics unchanged"""
    params = reference(mu=0.3)
    config = SimConfig(seed=21, runs=3000, operational_failures=True)
    plain = monte_carlo(params, mbr_code, ThresholdPolicy.null(), config)
    split = monte_carlo(params, mbr_code, ThresholdPolicy(t_on=1.7, t_off=1.7), config)
    for a, b in [(plain.mean_terminal_xd, split.mean_terminal_xd), (plain.mean_cost, split.mean_cost)]:
        assert abs(a.value - b.value) <= 4.0 * math.hypot(a.std_error, b.std_error) + 1e-12


@pytest.mark.slow
def test_fluid_limit_matches_simulation(mbr_code, reference):
    """Mean scaled paths approach the fluid solution as the population grows"""
    params = reference(c2=10.0)
    result = solve(params, mbr_code)
    grid = tuple(np.linspace(0.0, params.T, 36))
    fluid = np.array([result.trajectory.state_at(t).x for t in grid])

    deviations = []
    for scale in (1, 5, 25):
        config = SimConfig(seed=2024, runs=10_000, record_grid=grid, operational_failures=True, scale=scale)
        stats = monte_carlo(params, mbr_code, result.policy, config)
        mean = np.asarray(stats.mean_trajectory) / scale
        deviations.append(np.abs(mean - fluid).max() / np.abs(fluid).max())
    assert deviations[0] > deviations[1] > deviations[2]

    # stats now holds the largest population
    assert stats.absorbed_fraction == 0.0
    assert stats.p_path_violation.value == 0.0
    terminal = stats.mean_terminal_xd
    assert abs(terminal.value / scale - result.x_d_terminal) <= 3.0 * terminal.std_error / scale
    cost = stats.mean_cost
    assert abs(cost.value / scale - result.cost) <= 3.0 * cost.std_error / scale
