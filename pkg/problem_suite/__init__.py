"""
問題套件
二次、雙井、lasso 與負面對照套件，以及純量問題的 grid oracle
"""

from .grid_oracle import GridOracleResult, grid_local_minimizers
from .registry import SUITE_REGISTRY, parse_suite_spec
from .suites import (
    ConvexityTag,
    SuiteInstance,
    broken_suite,
    check_lower_bound,
    double_well_suite,
    lasso_consensus_suite,
    quadratic_suite,
    random_lasso_suite,
    sample_points,
)

__all__ = [
    "ConvexityTag",
    "GridOracleResult",
    "SUITE_REGISTRY",
    "SuiteInstance",
    "broken_suite",
    "check_lower_bound",
    "double_well_suite",
    "grid_local_minimizers",
    "lasso_consensus_suite",
    "parse_suite_spec",
    "quadratic_suite",
    "random_lasso_suite",
    "sample_points",
]
