"""Lyapunov、外層監控、KKT residual 與 oracle 驗證"""

from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from consensus_solver.diagnostics import (
    ReferenceSolution,
    ReferenceSource,
    consensus_kkt_residual,
    kkt_residual,
    long_run_reference,
    lower_kkt_residual,
    lower_stationarity,
    lyapunov,
    lyapunov_decrease_check,
    monotone_merit_check,
    step_gap_check,
    telescoping_monitor,
    validate_oracles,
)
from consensus_solver.globalize import solve
from consensus_solver.lower import build_hessians, initial_lower_state, sweep
from consensus_solver.merit import total_objective
from problem_suite import broken_suite, random_lasso_suite, sample_points
from shared.config import SolverConfig
from shared.core import LowerState, ScaledIdentity, UpperState, as_vector
from shared.errors import DimMismatchError, OracleMismatchError


def _exact_states(suite, config, z, sweeps):
    z = as_vector(z)
    state = initial_lower_state(z, build_hessians(suite.agents, config, z, config.gamma))
    upper = UpperState(z=z, sigma=(0.0,) * suite.n_agents, merit_at_z=total_objective(suite.agents, z))
    states = [state]
    for _ in range(sweeps):
        report = sweep(suite.agents, state, config, upper)
        state = report.state_after
        states.append(state)
    return states


def test_lyapunov_decreases_with_scaled_identity(quad_suite_2d):
    config = SolverConfig(rho=4.0, local_update_strategy="exact")
    z = [1.5, -0.5]
    states = _exact_states(quad_suite_2d, config, z, 200)
    ref = quad_suite_2d.lower_reference(as_vector(z), config.gamma)
    check = lyapunov_decrease_check(states, ref)
    assert check.ok
    assert not check.hypothesis_violation
    assert check.values[-1] < 1e-12 * (1.0 + check.values[0])


def test_lyapunov_decreases_with_random_spd(quad_suite_2d, random_spd):
    for _ in range(5):
        config = SolverConfig(
            local_update_strategy="exact",
            hessian_mode="user-fixed",
            hessians=[random_spd(2) for _ in range(3)],
        )
        z = [-0.3, 2.0]
        states = _exact_states(quad_suite_2d, config, z, 200)
        ref = quad_suite_2d.lower_reference(as_vector(z), config.gamma)
        assert lyapunov_decrease_check(states, ref).ok


def test_lyapunov_flags_nonconvex_use(quad_suite):
    states = _exact_states(quad_suite, SolverConfig(rho=4.0, local_update_strategy="exact"), [0.0], 3)
    ref = quad_suite.lower_reference(as_vector([0.0]), 1.0)
    assert lyapunov_decrease_check(states, ref, convex=False).hypothesis_violation


def test_lyapunov_at_reference_is_zero(quad_suite):
    ref = quad_suite.lower_reference(as_vector([0.0]), 1.0)
    state = initial_lower_state(ref.y_star, (ScaledIdentity(4.0),) * 2)
    state = type(state)(state.x, state.y, ref.lambda_star, state.g, state.hessians)
    assert lyapunov(state, ref) == 0.0


def test_reference_requires_zero_dual_sum():
    with pytest.raises(ValueError):
        ReferenceSolution(
            y_star=as_vector([0.0]),
            lambda_star=(as_vector([1.0]), as_vector([1.0])),
            source=ReferenceSource.ANALYTIC,
        )


def test_long_run_reference_matches_analytic(quad_suite_2d):
    z = as_vector([0.5, 0.5])
    hessians = (ScaledIdentity(4.0),) * 3
    long_run = long_run_reference(quad_suite_2d.agents, z, 1.0, hessians)
    analytic = quad_suite_2d.lower_reference(z, 1.0)
    assert long_run.source == ReferenceSource.LONG_RUN
    np.testing.assert_allclose(long_run.y_star, analytic.y_star, atol=1e-9)
    for a, b in zip(long_run.lambda_star, analytic.lambda_star):
        np.testing.assert_allclose(a, b, atol=1e-9)


def test_kkt_residual_vanishes_at_reference(quad_suite_2d):
    z = as_vector([1.0, 2.0])
    ref = quad_suite_2d.lower_reference(z, 1.0)
    assert kkt_residual(quad_suite_2d.agents, ref.y_star, ref.lambda_star, 1.0, z) <= 1e-12
    with pytest.raises(DimMismatchError):
        kkt_residual(quad_suite_2d.agents, ref.y_star, ref.lambda_star[:1], 1.0, z)


def test_consensus_kkt_residual(quad_suite):
    assert consensus_kkt_residual(quad_suite.agents, as_vector([3.0])) == 0.0
    # Σf′(0) = 0 − 12
    assert consensus_kkt_residual(quad_suite.agents, as_vector([0.0])) == pytest.approx(12.0)


def test_lower_stationarity_and_residual():
    z = as_vector([0.0])
    state = LowerState(
        x=(as_vector([1.0]), as_vector([2.0])),
        y=as_vector([1.5]),
        lam=(as_vector([0.0]), as_vector([0.0])),
        g=(as_vector([3.0]), as_vector([1.0])),
        hessians=(ScaledIdentity(1.0),) * 2,
    )
    # (3 − 1) + (1 − 2)
    assert lower_stationarity(state, z, gamma=1.0) == pytest.approx(1.0)
    assert lower_kkt_residual(state, z, gamma=1.0) == pytest.approx(1.0)
    far = replace(state, y=as_vector([4.0]))
    assert lower_kkt_residual(far, z, gamma=1.0) == pytest.approx(3.0)



def test_telescoping_and_step_gap_on_hand_data():
    good = SimpleNamespace(merit_trajectory=[10.0, 8.0, 7.0], z_step_squares=[1.0, 0.5])
    report = telescoping_monitor(good, gamma=1.0, n_agents=2)
    assert report.ok
    assert report.running_sums == (1.0, 1.5)
    assert report.bounds == (2.0, 3.0)
    assert step_gap_check(good, 1.0, 2) == (True, True)
    assert monotone_merit_check(good.merit_trajectory)

    bad = SimpleNamespace(merit_trajectory=[10.0, 9.9], z_step_squares=[1.0])
    assert not telescoping_monitor(bad, gamma=1.0, n_agents=2).ok
    assert step_gap_check(bad, 1.0, 2) == (False,)
    assert not monotone_merit_check([10.0, 10.0])


def test_telescoping_rejects_bad_input():
    outer = SimpleNamespace(merit_trajectory=[1.0], z_step_squares=[0.1])
    with pytest.raises(DimMismatchError):
        telescoping_monitor(outer, gamma=1.0, n_agents=1)
    with pytest.raises(ValueError):
        telescoping_monitor(outer, gamma=0.0, n_agents=1)


@pytest.mark.parametrize("method", ["caladin-prox", "cadmm-prox"])
def test_outer_monitors_hold_on_double_well(dw_suite, method):
    config = SolverConfig(method=method)
    result = solve(dw_suite.agents, config, [0.9])
    assert telescoping_monitor(result, config.gamma, dw_suite.n_agents).ok
    assert all(step_gap_check(result, config.gamma, dw_suite.n_agents))
    assert monotone_merit_check(result.merit_trajectory)


def test_validate_oracles(quad_suite_2d):
    points = sample_points(quad_suite_2d, count=10, seed=3)
    for agent in quad_suite_2d.agents:
        report = validate_oracles(agent, points)
        assert report.checked == 10
        assert report.to_dict()["status"] == "success"


def test_validate_oracles_skips_kinks():
    suite = random_lasso_suite(n_agents=2, dim=2, rows=4, mu=0.5, seed=1)
    report = validate_oracles(suite.agents[0], [[0.0, 1.0], [0.5, -0.5]])
    assert report.skipped == 1
    assert report.checked == 1


def test_validate_oracles_detects_broken_subgradient():
    agent = broken_suite().agents[0]
    with pytest.raises(OracleMismatchError) as info:
        validate_oracles(agent, [[0.5], [1.5]])
    assert len(info.value.details["points"]) == 2
