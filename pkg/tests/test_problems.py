"""問題套件、套件解析與 grid oracle"""

import numpy as np
import pytest

from consensus_solver.diagnostics import validate_oracles
from consensus_solver.globalize import solve
from consensus_solver.merit import total_objective
from problem_suite import (
    ConvexityTag,
    SUITE_REGISTRY,
    broken_suite,
    check_lower_bound,
    double_well_suite,
    grid_local_minimizers,
    lasso_consensus_suite,
    parse_suite_spec,
    quadratic_suite,
    random_lasso_suite,
    sample_points,
)
from problem_suite.suites import soft_threshold
from shared.config import SolverConfig
from shared.core import ScaledIdentity, as_vector
from shared.errors import OracleMismatchError, SuiteError


# ============================================================================
# 套件
# ============================================================================

def test_quadratic_suite_metadata(quad_suite):
    assert quad_suite.n_agents == 2
    assert quad_suite.dim == 1
    assert quad_suite.is_convex
    assert quad_suite.convexity_tag == ConvexityTag.STRONGLY_CONVEX
    assert quad_suite.analytic_optimum[0] == pytest.approx(3.0)
    assert quad_suite.to_dict()["analytic_optimum"] == [3.0]


def test_quadratic_suite_rejects_bad_weights():
    with pytest.raises(SuiteError):
        quadratic_suite([], [])
    with pytest.raises(SuiteError):
        quadratic_suite([1.0, -2.0], [0.0, 1.0])


def test_quadratic_exact_local_solve_is_stationary(quad_suite_2d):
    agent = quad_suite_2d.agents[1]
    y, z, lam = as_vector([0.5, 0.5]), as_vector([1.0, -1.0]), as_vector([0.2, -0.3])
    b = ScaledIdentity(4.0)
    x = agent.exact_local_solve(lam, y, z, b, 1.0)
    residual = agent.subgradient_at(as_vector(x)) + 1.0 * (x - z) + lam + b.matvec(as_vector(x - y))
    np.testing.assert_allclose(residual, 0.0, atol=1e-12)


def test_double_well_exact_local_solve_picks_global_minimizer(dw_suite):
    agent = dw_suite.agents[0]
    zero = as_vector([0.0])
    # 目標 (x²−1)² + ½γx² + ½b·x² 在 b + γ < 4 時有兩個對稱極小，取較小的根
    x = agent.exact_local_solve(zero, zero, zero, ScaledIdentity(1.0), 1.0)
    assert x[0] == pytest.approx(-np.sqrt(0.5))
    # b + γ ≥ 4 時只剩 0
    x = agent.exact_local_solve(zero, zero, zero, ScaledIdentity(5.0), 1.0)
    assert x[0] == pytest.approx(0.0, abs=1e-12)


def test_double_well_lower_bound():
    suite = double_well_suite([0.5, -0.2, 0.1])
    assert suite.convexity_tag == ConvexityTag.NONCONVEX_SMOOTH
    assert not suite.is_convex
    assert suite.lower_bound == pytest.approx(-1.6)
    assert check_lower_bound(suite, sample_points(suite, count=200, seed=4))


def test_soft_threshold():
    np.testing.assert_array_equal(soft_threshold(np.array([3.0, -0.5, -2.0]), 1.0), [2.0, 0.0, -1.0])


def test_lasso_subgradient_takes_min_norm_element():
    suite = lasso_consensus_suite([np.eye(2)], [np.array([0.3, 2.0])], mu=1.0)
    agent = suite.agents[0]
    # x = 0：平滑部分為 −b，第一個分量落在 [−μ, μ] 內
    g = agent.subgradient_at(as_vector([0.0, 0.0]))
    np.testing.assert_allclose(g, [0.0, -1.0])
    g = agent.subgradient_at(as_vector([1.0, -1.0]))
    np.testing.assert_allclose(g, [1.7, -4.0])


def test_lasso_without_penalty_has_analytic_optimum():
    rng = np.random.default_rng(7)
    mats = [rng.standard_normal((4, 2)) for _ in range(3)]
    vecs = [rng.standard_normal(4) for _ in range(3)]
    suite = lasso_consensus_suite(mats, vecs, mu=0.0)
    stacked = np.vstack(mats)
    expected, *_ = np.linalg.lstsq(stacked, np.concatenate(vecs), rcond=None)
    np.testing.assert_allclose(suite.analytic_optimum, expected, atol=1e-10)
    assert lasso_consensus_suite(mats, vecs, mu=0.5).analytic_optimum is None


def test_lasso_exact_local_solve_satisfies_optimality():
    suite = lasso_consensus_suite([[[2.0, 0.0], [0.0, 1.0]]], [[1.0, 0.05]], mu=0.2)
    agent = suite.agents[0]
    zero = as_vector([0.0, 0.0])
    x = agent.exact_local_solve(zero, zero, zero, ScaledIdentity(1.0), 1.0)
    # 第一個分量：(4 + 2)x = 2 − 0.2；第二個分量被截成 0
    assert x[0] == pytest.approx(1.8 / 6.0)
    assert x[1] == 0.0


def test_lasso_shape_errors():
    with pytest.raises(SuiteError):
        lasso_consensus_suite([np.eye(2)], [np.ones(3)], mu=0.1)
    with pytest.raises(SuiteError):
        lasso_consensus_suite([np.eye(2)], [np.ones(2)], mu=-1.0)


def test_random_lasso_is_reproducible():
    first = random_lasso_suite(n_agents=3, dim=2, rows=5, mu=0.1, seed=11)
    second = random_lasso_suite(n_agents=3, dim=2, rows=5, mu=0.1, seed=11)
    point = as_vector([0.3, -0.7])
    assert total_objective(first.agents, point) == total_objective(second.agents, point)
    assert first.metadata["seed"] == 11


def test_lasso_solve_matches_least_squares():
    rng = np.random.default_rng(3)
    mats = [rng.standard_normal((5, 2)) for _ in range(2)]
    vecs = [rng.standard_normal(5) for _ in range(2)]
    suite = lasso_consensus_suite(mats, vecs, mu=0.0)
    result = solve(suite.agents, SolverConfig(rho=20.0), [0.0, 0.0])
    np.testing.assert_allclose(result.z_star, suite.analytic_optimum, atol=1e-5)


def test_broken_suite_fails_validation_only():
    suite = broken_suite()
    assert check_lower_bound(suite, sample_points(suite))
    with pytest.raises(OracleMismatchError):
        validate_oracles(suite.agents[0], sample_points(suite))


# ============================================================================
# 套件解析
# ============================================================================

def test_parse_quadratic_spec():
    suite = parse_suite_spec("quadratic:a=1,3;c=0,4")
    assert suite.spec == "quadratic:a=1,3;c=0,4"
    assert suite.analytic_optimum[0] == pytest.approx(3.0)


def test_parse_vector_centers():
    suite = parse_suite_spec("quadratic:a=1,1;c=0/1,4/5")
    assert suite.dim == 2
    np.testing.assert_allclose(suite.analytic_optimum, [2.0, 3.0])


def test_parse_other_suites():
    assert parse_suite_spec("doublewell:d=0,0,0").n_agents == 3
    assert parse_suite_spec("lasso:a=1,2;b=0.3,0.1;mu=0").dim == 1
    assert parse_suite_spec("lasso:agents=2;dim=3;rows=5;mu=0.1;seed=0").dim == 3
    assert parse_suite_spec("broken").name == "broken"
    assert set(SUITE_REGISTRY) == {"quadratic", "doublewell", "lasso", "broken"}


@pytest.mark.parametrize(
    "spec",
    ["", "nosuch:a=1", "quadratic:a=1", "quadratic:a=x;c=0", "doublewell:d", "lasso:agents=two;seed=0"],
)
def test_parse_rejects_bad_specs(spec):
    with pytest.raises(SuiteError):
        parse_suite_spec(spec)


# ============================================================================
# Grid oracle
# ============================================================================

def test_grid_oracle_finds_both_wells(dw_suite):
    result = grid_local_minimizers(dw_suite, resolution=1e-4)
    assert len(result.minimizers) == 2
    np.testing.assert_allclose(result.minimizers, [-1.0, 1.0], atol=1e-9)
    assert result.global_value == pytest.approx(0.0, abs=1e-12)


def test_grid_oracle_prefers_tilted_well():
    suite = double_well_suite([0.3, 0.0, 0.0])
    result = grid_local_minimizers(suite, resolution=1e-4)
    assert result.global_minimizer < 0.0


def test_grid_oracle_rejects_vector_suites(quad_suite_2d):
    with pytest.raises(SuiteError):
        grid_local_minimizers(quad_suite_2d)
