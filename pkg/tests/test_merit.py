"""merit 函數、方向導數與下降條件"""

import numpy as np
import pytest

from consensus_solver.lower import initial_lower_state, sweep, build_hessians
from consensus_solver.merit import (
    consensus_descent_condition,
    consensus_descent_margins,
    directional_derivative_numeric,
    l1_gap_directional_derivative,
    local_descent_condition,
    local_merit_drop,
    merit,
    raise_sigma,
    total_objective,
)
from problem_suite import double_well_suite, quadratic_suite
from shared.config import SolverConfig
from shared.core import LowerState, ScaledIdentity, UpperState, as_vector


def test_merit_identity_is_exact(rng):
    # x_i = y = z 時 merit 與 Σf_i(z) 逐位元相同
    for trial in range(100):
        if trial % 2:
            suite = double_well_suite(rng.uniform(-0.5, 0.5, 3))
        else:
            suite = quadratic_suite(rng.uniform(0.5, 3.0, 4), rng.standard_normal(4))
        z = as_vector(rng.uniform(-2.0, 2.0, 1))
        sigma = tuple(rng.uniform(0.0, 5.0, suite.n_agents))
        gamma = float(rng.uniform(0.1, 4.0))
        value = merit(suite.agents, [z] * suite.n_agents, z, z, sigma, gamma)
        assert value.total == total_objective(suite.agents, z)
        assert value.penalty_part == 0.0


def test_merit_breakdown_by_hand(quad_suite):
    x = [as_vector([1.0]), as_vector([2.0])]
    y = as_vector([0.0])
    z = as_vector([1.0])
    value = merit(quad_suite.agents, x, y, z, (2.0, 1.0), gamma=2.0)
    # f_1(1) = 0.5、f_2(2) = 6、近端項 0 + 1、penalty 2·1 + 1·2
    assert value.smooth_part == pytest.approx(7.5)
    assert value.penalty_part == pytest.approx(4.0)
    assert value.total == pytest.approx(11.5)


def test_directional_derivative_of_l1_gap():
    p = np.array([0.5, -2.0, 1.0])
    numeric = directional_derivative_numeric(lambda v: float(np.sum(np.abs(v))), np.zeros(3), p)
    assert numeric.estimate == pytest.approx(l1_gap_directional_derivative(p), abs=1e-9)
    assert l1_gap_directional_derivative(p) == 3.5


def test_directional_derivative_rejects_bad_t_sequence():
    with pytest.raises(ValueError):
        directional_derivative_numeric(lambda v: 0.0, np.zeros(1), np.ones(1), (1e-3, 1e-2))
    with pytest.raises(ValueError):
        directional_derivative_numeric(lambda v: 0.0, np.zeros(1), np.ones(1), ())


def _stacked_phi(problems, y_plus, z, sigma, gamma, dim):
    def phi(flat):
        xs = [as_vector(flat[i * dim:(i + 1) * dim]) for i in range(len(problems))]
        return merit(problems, xs, y_plus, z, sigma, gamma).total

    return phi


def test_consensus_directional_derivative_matches_numeric(rng):
    for trial in range(50):
        n_agents, dim = 3, 2
        suite = quadratic_suite(rng.uniform(0.5, 3.0, n_agents), rng.standard_normal((n_agents, dim)))
        config = SolverConfig(local_update_strategy="exact", rho=float(rng.uniform(2.0, 10.0)), gamma=1.0)
        z = as_vector(rng.standard_normal(dim))
        state = initial_lower_state(z, build_hessians(suite.agents, config, z, config.gamma))
        upper = UpperState(z=z, sigma=(0.0,) * n_agents, merit_at_z=total_objective(suite.agents, z))
        for _ in range(1 + trial % 3):
            report = sweep(suite.agents, state, config, upper)
            state = report.state_after
            upper = UpperState(z=z, sigma=report.sigma_after, merit_at_z=upper.merit_at_z)

        local = report.local_state
        y_plus = report.state_after.y
        point = np.concatenate(local.x)
        direction = np.concatenate([y_plus - x for x in local.x])
        phi = _stacked_phi(suite.agents, y_plus, z, report.sigma_after, config.gamma, dim)
        numeric = directional_derivative_numeric(phi, point, direction)
        value = phi(point)
        assert abs(numeric.estimate - report.directional_derivative) <= 10 * 1e-6 * (1 + abs(value))


def test_local_descent_condition_by_hand():
    y = as_vector([0.0])
    state = LowerState(
        x=(as_vector([1.0]),),
        y=y,
        lam=(as_vector([1.0]),),
        g=(as_vector([0.0]),),
        hessians=(ScaledIdentity(2.0),),
    )
    check = local_descent_condition(state, (1.0,))
    assert check.ok
    assert check.margin == pytest.approx(2.0)
    assert not local_descent_condition(state, (3.0,)).ok


def test_local_step_drops_merit_from_fresh_state(quad_suite_2d):
    # λ = 0、σ = 0 時條件恆成立，exact 局部步驟讓 merit 下降
    config = SolverConfig(local_update_strategy="exact", rho=4.0)
    z = as_vector([0.5, -0.5])
    state = initial_lower_state(z, build_hessians(quad_suite_2d.agents, config, z, config.gamma))
    upper = UpperState(z=z, sigma=(0.0,) * 3, merit_at_z=total_objective(quad_suite_2d.agents, z))
    report = sweep(quad_suite_2d.agents, state, config, upper)
    assert report.local_descent_ok
    assert local_merit_drop(quad_suite_2d.agents, report.local_state, z, (0.0,) * 3, config.gamma) < 0.0
    assert report.local_merit_dropped


def test_consensus_descent_condition_is_strict():
    lam = (as_vector([1.0, -2.0]), as_vector([0.5, 0.0]))
    assert consensus_descent_condition((2.0, 1.0), lam) == (False, True)
    assert consensus_descent_margins((2.0, 1.0), lam) == (0.0, 0.5)


def test_raise_sigma():
    lam = (as_vector([3.0]), as_vector([-2.0]))
    assert raise_sigma((0.0, 5.0), lam, 0.1) == pytest.approx((3.4, 5.0))
    # margin = 0 且 σ = ‖λ‖∞ 時不變
    assert raise_sigma((3.0, 2.0), lam, 0.0) == (3.0, 2.0)
    raised = raise_sigma((0.0, 0.0), lam, 1e-8)
    assert all(s > abs(float(l[0])) for s, l in zip(raised, lam))
    with pytest.raises(ValueError):
        raise_sigma((0.0, 0.0), lam, -1.0)
