"""
純量套件的網格搜尋 oracle
在 [lo, hi] 以 resolution 掃描 Σf_i，找出所有內部局部極小，
再對 Σf_i′ 在相鄰格點之間做二分法修正

非凸純量問題的參考答案都以這裡的結果為準。
"""

from dataclasses import dataclass

import numpy as np

from shared.errors import SuiteError

from .suites import SuiteInstance

GRID_LO = -3.0
GRID_HI = 3.0
GRID_RESOLUTION = 1e-6
BISECTION_STEPS = 50
CHUNK_SIZE = 1_000_000


@dataclass(frozen=True)
class GridOracleResult:
    minimizers: tuple
    values: tuple

    @property
    def global_minimizer(self) -> float:
        best = int(np.argmin(self.values))
        return self.minimizers[best]

    @property
    def global_value(self) -> float:
        return min(self.values)


def _bisect(derivative, lo: float, hi: float, steps: int) -> float:
    # 假設 derivative(lo) ≤ 0 ≤ derivative(hi)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if float(derivative(np.array([mid]))[0]) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def grid_local_minimizers(
    suite: SuiteInstance,
    lo: float = GRID_LO,
    hi: float = GRID_HI,
    resolution: float = GRID_RESOLUTION,
    bisection_steps: int = BISECTION_STEPS,
) -> GridOracleResult:
    """Σf_i 在 (lo, hi) 內部的所有局部極小點，依位置排序"""
    if suite.scalar_value is None or suite.scalar_derivative is None:
        raise SuiteError(f"{suite.name} 不是純量套件，無法使用 grid oracle")
    n_points = int(round((hi - lo) / resolution)) + 1
    grid = np.linspace(lo, hi, n_points)
    values = np.empty(n_points)
    for start in range(0, n_points, CHUNK_SIZE):
        stop = min(start + CHUNK_SIZE, n_points)
        values[start:stop] = suite.scalar_value(grid[start:stop])

    interior = np.flatnonzero((values[1:-1] < values[:-2]) & (values[1:-1] <= values[2:])) + 1

    minimizers = []
    for idx in interior:
        left, right = float(grid[idx - 1]), float(grid[idx + 1])
        d_left = float(suite.scalar_derivative(np.array([left]))[0])
        d_right = float(suite.scalar_derivative(np.array([right]))[0])
        if not (d_left <= 0.0 <= d_right):
            continue
        point = _bisect(suite.scalar_derivative, left, right, bisection_steps)
        if minimizers and abs(point - minimizers[-1]) <= 10.0 * resolution:
            continue
        minimizers.append(point)

    if not minimizers:
        raise SuiteError(f"{suite.name} 在 [{lo}, {hi}] 內沒有找到局部極小")
    point_values = tuple(float(suite.scalar_value(np.array([p]))[0]) for p in minimizers)
    return GridOracleResult(minimizers=tuple(minimizers), values=point_values)
