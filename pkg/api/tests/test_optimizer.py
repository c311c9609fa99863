"""Tests for the multiplier search, cost evaluation, sweeps and dimensioning"""

from unittest.mock import patch

import pytest

from api.src.core.config import settings
from api.src.core.errors import GammaDiscoveryFailed, GridMismatch, Infeasible, NoConvergence
from api.src.services.coding import make_code
from api.src.services.fluid import feasibility_check, integrate
from api.src.services.optimizer import (
    RegenerationOptimizer,
    evaluate_gamma,
    minimal_feasible,
    relaxed_cost,
    running_cost,
    solve,
    sweep,
)
from api.src.structures.schemas import CodeVariant, ThresholdPolicy

C1_GRID = [1.0, 10.0, 20.0]
C2_GRID = [0.0, 10.0, 100.0]
J_TABLE = [[12.2, 169.0, 1580.6], [122.5, 279.1, 1691.9], [244.9, 401.3, 1812.9]]
GAMMA_TABLE = [
    [1.2766, 17.5851, 164.0627],
    [12.8000, 29.1024, 175.8790],
    [25.5990, 41.7977, 188.2813],
]


def test_running_cost_activation_only(mbr_code, reference):
    params = reference(c1=1.0)
    policy = ThresholdPolicy(t_on=0.0, t_off=1.22)
    trajectory = integrate(params, mbr_code, policy)
    assert running_cost(trajectory, policy, params, mbr_code) == pytest.approx(12.2)
    assert running_cost(trajectory, None, params, mbr_code) == pytest.approx(12.2)


def test_running_cost_charges_transfers(mbr_code, reference):
    params = reference(c1=0.0, c2=100.0)
    policy = ThresholdPolicy(t_on=0.0, t_off=1.0)
    trajectory = integrate(params, mbr_code, policy)
    cost = running_cost(trajectory, policy, params, mbr_code)
    # About 10 activated nodes, each fetching close to d chunks of beta
    assert 0.5 * 10 * 20 * 100 * mbr_code.beta < cost < 10 * 20 * 100 * mbr_code.beta


def test_running_cost_grid_mismatch(mbr_code, reference):
    trajectory = integrate(reference(T=2.0), mbr_code, ThresholdPolicy.null())
    with pytest.raises(GridMismatch):
        running_cost(trajectory, None, reference(), mbr_code)


def test_relaxed_cost():
    assert relaxed_cost(122.5, 12.8, 50.0, 50.0) == 122.5
    assert relaxed_cost(100.0, 2.0, 48.0, 50.0) == 104.0


def test_evaluate_gamma_reaches_target(mbr_code, reference):
    policy, trajectory, x_d_terminal = evaluate_gamma(reference(), mbr_code, 12.7719)
    assert x_d_terminal == pytest.approx(50.0, abs=0.05)
    assert trajectory.x_d_terminal == x_d_terminal
    assert policy.t_on == 0.0


def test_solve_reference_activation_only(mbr_code, reference):
    result = solve(reference(), mbr_code)
    assert result.converged
    assert 12.75 <= result.gamma_star <= 12.85
    assert result.policy.t_on == 0.0
    assert result.policy.t_off == pytest.approx(1.22, abs=0.05)
    assert result.cost == pytest.approx(122.5, rel=0.05)
    assert abs(result.x_d_terminal - 50.0) <= 0.05
    assert result.path_constraint_ok
    assert result.gamma_left <= result.gamma_star <= result.gamma_right
    assert result.feasibility.feasible


def test_solve_reference_with_transfer_cost(mbr_code, reference):
    result = solve(reference(c2=100.0), mbr_code)
    assert 175.5 <= result.gamma_star <= 176.2
    assert result.policy.t_on == 0.0
    assert result.policy.t_off == pytest.approx(1.22, abs=0.05)


def test_closed_form_costate_agrees(mbr_code, reference):
    params = reference(c2=10.0)
    ode = RegenerationOptimizer(params, mbr_code, costate_method="ode").solve()
    with patch.object(settings, "scan_points", 500):
        closed = RegenerationOptimizer(params, mbr_code, costate_method="closed_form").solve()
    assert closed.costate is None
    assert closed.gamma_star == pytest.approx(ode.gamma_star, rel=0.01)
    assert closed.cost == pytest.approx(ode.cost, rel=0.01)


def test_null_policy_when_nothing_failed(mbr_code, reference):
    result = solve(reference(mu=0.0, x_d0=50.0), mbr_code)
    assert result.gamma_star == 0.0
    assert result.policy.is_null
    assert result.cost == 0.0
    assert result.iterations == 0


def test_infeasible_instance_carries_report(mbr_code, reference):
    with pytest.raises(Infeasible) as excinfo:
        solve(reference(zeta=0.0), mbr_code)
    assert excinfo.value.report is not None
    assert not excinfo.value.report.feasible


def test_iteration_cap_raises_with_partial_result(mbr_code, reference):
    with patch.object(settings, "max_bisection_iterations", 1):
        with pytest.raises(NoConvergence) as excinfo:
            solve(reference(), mbr_code, epsilon=1e-9)
    partial = excinfo.value.result
    assert partial is not None
    assert not partial.converged
    assert partial.iterations == 1


def test_gamma_discovery_cap(mbr_code, reference):
    with patch.object(settings, "max_gamma_doublings", 1):
        with pytest.raises(GammaDiscoveryFailed):
            solve(reference(), mbr_code)


def test_rejects_nonpositive_tolerance(mbr_code, reference):
    with pytest.raises(ValueError):
        RegenerationOptimizer(reference(), mbr_code, epsilon=0.0)


def test_switching_epochs_monotone_in_gamma(mbr_code, reference):
    optimizer = RegenerationOptimizer(reference(), mbr_code)
    evaluations = [optimizer.evaluate(0.1 * 2**k) for k in range(9)]
    t_on = [e.policy.t_on for e in evaluations]
    t_off = [e.policy.t_off for e in evaluations]
    x_d = [e.x_d_terminal for e in evaluations]
    assert all(a >= b for a, b in zip(t_on, t_on[1:]))
    assert all(a <= b for a, b in zip(t_off, t_off[1:]))
    assert all(a <= b + 1e-9 for a, b in zip(x_d, x_d[1:]))


def test_neighbouring_policies_cost_more_or_miss_target(mbr_code, reference):
    params = reference()
    result = solve(params, mbr_code)
    later = ThresholdPolicy(t_on=0.0, t_off=result.policy.t_off + 0.035)
    earlier = ThresholdPolicy(t_on=0.0, t_off=result.policy.t_off - 0.035)
    assert running_cost(integrate(params, mbr_code, later), later, params, mbr_code) > result.cost
    assert integrate(params, mbr_code, earlier).x_d_terminal < 50.0 - 0.05


class RecordingOptimizer(RegenerationOptimizer):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.evaluations = []

    def evaluate(self, gamma):
        evaluation = super().evaluate(gamma)
        self.evaluations.append((gamma, evaluation.x_d_terminal))
        return evaluation


@pytest.mark.parametrize("c2", [0.0, 100.0])
def test_bisection_bracket_stays_valid(mbr_code, reference, c2):
    """Every bisection step keeps X_d(T) below target on the left and above on the right"""
    optimizer = RecordingOptimizer(reference(c2=c2), mbr_code)
    result = optimizer.solve()
    target, eps = optimizer.n_tight, optimizer.epsilon
    terminal = dict(optimizer.evaluations)

    # evaluations: gamma = 0, the doublings up to the first reaching the target, then bisection
    gammas = [gamma for gamma, _ in optimizer.evaluations]
    found = next(i for i in range(1, len(gammas)) if terminal[gammas[i]] >= target)
    left, right = 0.0, gammas[found]
    for gamma in gammas[found + 1 :]:
        assert left < gamma < right
        if terminal[gamma] > target:
            right = gamma
        else:
            left = gamma
        assert terminal[left] <= target + eps
        assert terminal[right] >= target - eps
    assert (left, right) == (result.gamma_left, result.gamma_right)


def test_terminal_constraint_complementarity(mbr_code, reference):
    result = solve(reference(c2=10.0), mbr_code)
    slack = result.gamma_star * (result.n_tight - result.x_d_terminal)
    assert abs(slack) <= result.gamma_star * 0.05 + 1e-12
    assert result.relaxed_cost - result.cost == pytest.approx(slack, abs=1e-9)


def test_delayed_activation_and_shift_equivalence(small_code, late_params):
    """Re-solving from the state at t_on yields the remainder of the same policy"""
    full = solve(late_params, small_code, epsilon=1e-4)
    t_on, t_off = full.policy.t_on, full.policy.t_off
    assert t_on > 0.0

    x0 = full.trajectory.state_at(t_on)
    tail_params = late_params.with_changes(T=late_params.T - t_on, x_d0=x0.x_d)
    tail = solve(tail_params, small_code, epsilon=1e-4, x0=x0)
    assert tail.policy.t_on <= 1e-3 * late_params.T
    assert tail.policy.t_off == pytest.approx(t_off - t_on, abs=1e-3 * late_params.T)
    assert tail.cost == pytest.approx(full.cost, rel=0.01)


def test_sweep_reproduces_cost_tables(mbr_code, reference):
    cells = sweep(reference(), mbr_code, C1_GRID, C2_GRID)
    assert [(c.c1, c.c2) for c in cells] == [(c1, c2) for c1 in C1_GRID for c2 in C2_GRID]
    for cell in cells:
        i, j = C1_GRID.index(cell.c1), C2_GRID.index(cell.c2)
        assert cell.error is None
        assert cell.converged
        assert cell.J_star == pytest.approx(J_TABLE[i][j], rel=0.05)
        assert cell.gamma_star == pytest.approx(GAMMA_TABLE[i][j], rel=0.10)


def test_sweep_single_cell(mbr_code, reference):
    cells = sweep(reference(), mbr_code, [10.0], [10.0])
    assert len(cells) == 1
    assert cells[0].J_star == pytest.approx(279.1, rel=0.05)


def test_sweep_workers_do_not_change_results(mbr_code, reference):
    serial = sweep(reference(), mbr_code, [1.0, 10.0], [0.0], workers=1)
    threaded = sweep(reference(), mbr_code, [1.0, 10.0], [0.0], workers=2)
    assert serial == threaded


def test_sweep_records_cell_failures(mbr_code, reference):
    cells = sweep(reference(zeta=0.0), mbr_code, [1.0], [0.0, 10.0])
    assert len(cells) == 2
    assert all(cell.error and cell.J_star is None for cell in cells)


def test_sweep_without_failures_costs_nothing(mbr_code, reference):
    cells = sweep(reference(mu=0.0, x_d0=50.0), mbr_code, [1.0, 10.0], [0.0, 100.0])
    assert all(cell.J_star == 0.0 for cell in cells)


def test_sweep_needs_values(mbr_code, reference):
    with pytest.raises(ValueError):
        sweep(reference(), mbr_code, [], [0.0])


def test_minimal_horizon(mbr_code, reference):
    result = minimal_feasible("T", lambda T: (reference(T=T), mbr_code), 0.5, 3.5)
    assert result.value <= 3.5
    assert feasibility_check(reference(T=result.value), mbr_code).feasible
    assert not feasibility_check(reference(T=0.99 * result.value), mbr_code).feasible
    assert result.mu_bar == pytest.approx(result.report.mu_bar)


def test_minimal_transfer_rate(mbr_code, reference):
    result = minimal_feasible("lambda", lambda lam: (reference(lam=lam), mbr_code), 0.1, 1.9375)
    assert result.value <= 1.9375
    assert feasibility_check(reference(lam=result.value), mbr_code).feasible


def test_minimal_repair_degree(reference):
    def build(d):
        code = make_code(CodeVariant.MBR, 50, 10, int(d), 10.0)
        return reference(lam=1.0 / (8.0 * code.beta)), code

    result = minimal_feasible("d", build, 11, 39, integer=True)
    assert float(result.value).is_integer()
    assert 11 <= result.value <= 39
    assert feasibility_check(*build(result.value)).feasible


def test_minimal_feasible_bounds(mbr_code, reference):
    with pytest.raises(ValueError):
        minimal_feasible("T", lambda T: (reference(T=T), mbr_code), 3.5, 0.5)
    with pytest.raises(Infeasible):
        minimal_feasible("T", lambda T: (reference(T=T), mbr_code), 0.1, 0.5)
