"""
收斂診斷
Lyapunov 下降、外層 telescoping 上界、KKT residual 與 oracle 驗證

所有函數都只讀取輸入，不修改狀態。
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from shared.core import AgentProblem, HessianApprox, LowerState, as_vector, fixed_order_sum, sum_hessians
from shared.errors import DimMismatchError, OracleMismatchError

from .lower import (
    consensus_update_aladin,
    dual_update_aladin,
    initial_lower_state,
    local_update_exact,
    subgradient_surrogate,
)

LYAPUNOV_RTOL = 1e-10
DUAL_SUM_TOL = 1e-9
LONG_RUN_SWEEPS = 10_000


class ReferenceSource(str, Enum):
    ANALYTIC = "ANALYTIC"
    LONG_RUN = "LONG_RUN"


@dataclass(frozen=True)
class ReferenceSolution:
    """固定 z 的下層問題的 KKT 點 (y*, λ*)"""

    y_star: np.ndarray
    lambda_star: tuple
    source: ReferenceSource

    def __post_init__(self):
        total = fixed_order_sum(self.lambda_star)
        scale = 1.0 + max(float(np.max(np.abs(lam))) for lam in self.lambda_star)
        if float(np.max(np.abs(total))) > DUAL_SUM_TOL * scale:
            raise ValueError(f"Σλ_i* 不為 0：{total.tolist()}（{self.source.value}）")


# ============================================================================
# Lyapunov
# ============================================================================

def lyapunov(state: LowerState, ref: ReferenceSolution) -> float:
    """Σ‖y − y*‖²_{B_i} + Σ‖λ_i − λ_i*‖²_{B_i⁻¹}"""
    if len(ref.lambda_star) != state.n_agents:
        raise DimMismatchError("reference 的 agent 數量與 state 不符")
    if ref.y_star.shape != state.y.shape:
        raise DimMismatchError("reference 的維度與 state 不符")
    dy = state.y - ref.y_star
    primal = 0.0
    dual = 0.0
    for b_i, lam_i, lam_star in zip(state.hessians, state.lam, ref.lambda_star):
        primal = primal + b_i.quad(dy)
        dual = dual + b_i.inv_quad(lam_i - lam_star)
    return primal + dual


@dataclass(frozen=True)
class LyapunovCheck:
    values: tuple
    differences: tuple
    ok: bool
    hypothesis_violation: bool


def lyapunov_decrease_check(
    states: Sequence[LowerState],
    ref: ReferenceSolution,
    convex: bool = True,
    rtol: float = LYAPUNOV_RTOL,
) -> LyapunovCheck:
    """相鄰狀態的 L(y⁺,λ⁺) − L(y,λ) ≤ rtol·(1 + L(y,λ))

    只在凸問題且局部更新為 exact 時才有保證；非凸時仍回報差值，並標記 hypothesis_violation。
    """
    values = tuple(lyapunov(s, ref) for s in states)
    differences = tuple(b - a for a, b in zip(values, values[1:]))
    ok = all(d <= rtol * (1.0 + a) for a, d in zip(values, differences))
    return LyapunovCheck(
        values=values,
        differences=differences,
        ok=ok,
        hypothesis_violation=not convex,
    )


def long_run_reference(
    problems: Sequence[AgentProblem],
    z: np.ndarray,
    gamma: float,
    hessians: Sequence[HessianApprox],
    sweeps: int = LONG_RUN_SWEEPS,
) -> ReferenceSolution:
    """以 exact CALADIN（β = 0）在固定 z 上迭代 sweeps 次得到的參考解"""
    state = initial_lower_state(as_vector(z, "z"), hessians)
    combined = sum_hessians(state.hessians, 0.0, state.dim)
    for _ in range(sweeps):
        x_plus = tuple(
            local_update_exact(p, state.y, z, lam, b, gamma)
            for p, lam, b in zip(problems, state.lam, state.hessians)
        )
        local = LowerState(x_plus, state.y, state.lam, state.g, state.hessians, state.sweep_index)
        g = tuple(subgradient_surrogate(local, i) for i in range(state.n_agents))
        local = LowerState(x_plus, state.y, state.lam, g, state.hessians, state.sweep_index)
        y_plus = consensus_update_aladin(local, 0.0, state.y, combined)
        lam_plus = tuple(dual_update_aladin(local, y_plus, i) for i in range(state.n_agents))
        unchanged = np.array_equal(y_plus, state.y) and all(
            np.array_equal(a, b) for a, b in zip(lam_plus, state.lam)
        )
        state = LowerState(x_plus, y_plus, lam_plus, g, state.hessians, state.sweep_index + 1)
        if unchanged:
            break
    return ReferenceSolution(y_star=state.y, lambda_star=state.lam, source=ReferenceSource.LONG_RUN)


# ============================================================================
# 外層監控
# ============================================================================

@dataclass(frozen=True)
class TelescopingReport:
    running_sums: tuple
    bounds: tuple
    ok: bool


def telescoping_monitor(outer, gamma: float, n_agents: int, slack: float = 1e-12) -> TelescopingReport:
    """每個前綴 K 都要 Σ_{j<K}‖z^j − z^{j+1}‖² < (2/(γN))(Φ⁰ − Φ^K)

    outer 需要 merit_trajectory 與 z_step_squares；slack 以 (1 + |Φ⁰|) 縮放。
    """
    if gamma <= 0.0 or n_agents < 1:
        raise ValueError("telescoping 上界需要 γ > 0 與 N ≥ 1")
    merits = list(outer.merit_trajectory)
    steps = list(outer.z_step_squares)
    if len(merits) < len(steps) + 1:
        raise DimMismatchError("merit_trajectory 必須比 z_step_squares 多一個元素")
    tol = slack * (1.0 + abs(merits[0])) * 2.0 / (gamma * n_agents)

    running = 0.0
    sums = []
    bounds = []
    ok = True
    for k, step in enumerate(steps, start=1):
        running = running + step
        bound = 2.0 / (gamma * n_agents) * (merits[0] - merits[k])
        sums.append(running)
        bounds.append(bound)
        ok = ok and running < bound + tol
    return TelescopingReport(running_sums=tuple(sums), bounds=tuple(bounds), ok=ok)


def step_gap_check(outer, gamma: float, n_agents: int, slack: float = 1e-12) -> tuple:
    """每個被接受的 z 步驟：Φ^k − Φ^{k+1} > (γN/2)‖z^{k+1} − z^k‖² − slack"""
    merits = list(outer.merit_trajectory)
    return tuple(
        merits[k] - merits[k + 1] > 0.5 * gamma * n_agents * step - slack
        for k, step in enumerate(outer.z_step_squares)
    )


def monotone_merit_check(merit_trajectory: Sequence[float]) -> bool:
    """被接受的步驟上 Φ^{(z^k,z^k)}(z^k) 嚴格遞減"""
    return all(b < a for a, b in zip(merit_trajectory, merit_trajectory[1:]))


# ============================================================================
# KKT residual
# ============================================================================

def kkt_residual(
    problems: Sequence[AgentProblem],
    y: np.ndarray,
    lam: Sequence[np.ndarray],
    gamma: float,
    z: np.ndarray,
) -> float:
    """max(max_i ‖∂f_i(y) + γ(y−z) + λ_i‖∞, ‖Σλ_i‖∞)"""
    if len(lam) != len(problems):
        raise DimMismatchError("λ 數量與 agent 數量不符")
    worst = 0.0
    for problem, lam_i in zip(problems, lam):
        stationarity = problem.subgradient_at(y) + gamma * (y - z) + lam_i
        worst = max(worst, float(np.max(np.abs(stationarity))))
    return max(worst, float(np.max(np.abs(fixed_order_sum(lam)))))


def consensus_kkt_residual(problems: Sequence[AgentProblem], z: np.ndarray) -> float:
    """x_i = y = z 時的 ‖Σ∂f_i(z)‖∞

    每個 agent 只取 oracle 回傳的一個次梯度，所以只在平滑套件上是穩定性判準；
    有 kink 的套件請用 lower_stationarity。
    """
    return float(np.max(np.abs(fixed_order_sum([p.subgradient_at(z) for p in problems]))))


def lower_stationarity(state: LowerState, z: np.ndarray, gamma: float) -> float:
    """‖Σ_i (g_i − γ(x_i − z))‖∞，state 為某次 sweep 後的下層迭代量

    g_i − γ(x_i − z) 是 agent 的局部更新自己選出的 ∂f_i 元素（exact 時取在 x_i⁺），
    在 ℓ1 的 kink 上也落在 Σ∂f_i 之內。
    """
    terms = [g_i - gamma * (x_i - z) for x_i, g_i in zip(state.x, state.g)]
    return float(np.max(np.abs(fixed_order_sum(terms))))


def lower_kkt_residual(state: LowerState, z: np.ndarray, gamma: float) -> float:
    """max(lower_stationarity, max_i ‖x_i − y‖∞)"""
    gap = max(float(np.max(np.abs(x_i - state.y))) for x_i in state.x)
    return max(lower_stationarity(state, z, gamma), gap)


# ============================================================================
# Oracle 驗證
# ============================================================================

@dataclass(frozen=True)
class OracleValidationReport:
    agent: str
    checked: int
    skipped: int
    max_error: float
    failures: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "status": "success",
            "agent": self.agent,
            "checked": self.checked,
            "skipped": self.skipped,
            "max_error": self.max_error,
        }


def _near_kink(point: np.ndarray, kinks: Sequence[float], margin: float) -> bool:
    return any(bool(np.any(np.abs(point - k) < margin)) for k in kinks)


def validate_oracles(
    problem: AgentProblem, sample_points: Sequence, h: float = 1e-6
) -> OracleValidationReport:
    """中央差分檢查 subgradient oracle

    每個平滑取樣點要求 ‖FD − ∂f‖∞ ≤ 1e-4·(1 + ‖∂f‖∞)；距離 kink 10h 以內的點略過。
    """
    if h <= 0.0:
        raise ValueError("h 必須 > 0")
    checked = 0
    skipped = 0
    max_error = 0.0
    failures = []
    for raw in sample_points:
        point = as_vector(raw, "sample")
        if point.shape != (problem.dim,):
            raise DimMismatchError(f"取樣點維度 {point.shape}，{problem.name} 為 {problem.dim}")
        if _near_kink(point, problem.kinks, 10.0 * h):
            skipped += 1
            continue
        grad = problem.subgradient_at(point)
        fd = np.empty(problem.dim)
        for j in range(problem.dim):
            e = np.zeros(problem.dim)
            e[j] = h
            fd[j] = (problem.value_at(as_vector(point + e)) - problem.value_at(as_vector(point - e))) / (2.0 * h)
        error = float(np.max(np.abs(fd - grad)))
        tolerance = 1e-4 * (1.0 + float(np.max(np.abs(grad))))
        checked += 1
        max_error = max(max_error, error)
        if error > tolerance:
            failures.append({"x": point.tolist(), "subgradient": grad.tolist(), "finite_difference": fd.tolist()})

    if failures:
        raise OracleMismatchError(
            f"{problem.name} 的 subgradient 與中央差分不符（{len(failures)} 個點）",
            {"agent": problem.name, "points": failures},
        )
    return OracleValidationReport(agent=problem.name, checked=checked, skipped=skipped, max_error=max_error)
