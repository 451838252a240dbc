"""共用 fixtures"""

import numpy as np
import pytest

from problem_suite import double_well_suite, lasso_consensus_suite, quadratic_suite
from shared.config import SolverConfig


@pytest.fixture
def quad_suite():
    """a = (1, 3)、c = (0, 4)，最佳解 z* = 3"""
    return quadratic_suite([1.0, 3.0], [0.0, 4.0])


@pytest.fixture
def quad_suite_2d():
    return quadratic_suite([1.0, 3.0, 2.0], [[0.0, 1.0], [4.0, -1.0], [1.0, 2.0]])


@pytest.fixture
def dw_suite():
    return double_well_suite([0.0, 0.0, 0.0])


@pytest.fixture
def kink_suite():
    """兩個一維 agent：½(x − 1)² + 0.75|x| 與 ½x² + 0.75|x|，最佳解 0 落在 kink 上"""
    return lasso_consensus_suite([[[1.0]], [[1.0]]], [[1.0], [0.0]], mu=0.75)


@pytest.fixture
def quad_config():
    return SolverConfig(rho=4.0, gamma=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def random_spd(rng):
    """產生 n×n 的隨機 SPD 矩陣（list 形式，可直接放進 SolverConfig.hessians）"""

    def make(n, low=1.0):
        m = rng.standard_normal((n, n))
        return (m @ m.T + low * np.eye(n)).tolist()

    return make
