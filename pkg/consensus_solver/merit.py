"""
Merit 函數與下降條件
F_i^z(x) = f_i(x) + (γ/2)‖x−z‖²
Φ^{(z,y)}(x) = Σ F_i^z(x_i) + Σ σ_i‖x_i−y‖₁

本模組只做純函數計算，不修改任何狀態，可以在多執行緒下同時呼叫。
下降條件回傳 margin（lhs − rhs），讓 harness 可以記錄接近違反的情況。
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from shared.core import AgentProblem, HessianApprox, LowerState, as_vector, check_same_dim
from shared.errors import DimMismatchError, NonFiniteError

DEFAULT_T_SEQUENCE = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


@dataclass(frozen=True)
class MeritBreakdown:
    """Φ^{(z,y)}(x) 的兩個部分"""

    smooth_part: float
    penalty_part: float
    total: float

    def to_dict(self) -> dict:
        return {
            "smooth_part": self.smooth_part,
            "penalty_part": self.penalty_part,
            "total": self.total,
        }


# ============================================================================
# 目標函數
# ============================================================================

def proximal_objective(problem: AgentProblem, x: np.ndarray, z: np.ndarray, gamma: float) -> float:
    """F_i^z(x) = f_i(x) + (γ/2)‖x−z‖²"""
    if x.shape != z.shape:
        raise DimMismatchError(f"x 維度 {x.shape} 與 z 維度 {z.shape} 不符")
    diff = x - z
    return problem.value_at(x) + 0.5 * gamma * float(np.dot(diff, diff))


def total_objective(problems: Sequence[AgentProblem], z: np.ndarray) -> float:
    """Σ f_i(z)，加總順序與 merit() 相同"""
    total = 0.0
    for problem in problems:
        total = total + problem.value_at(z)
    return total


def merit(
    problems: Sequence[AgentProblem],
    x: Sequence[np.ndarray],
    y: np.ndarray,
    z: np.ndarray,
    sigma: Sequence[float],
    gamma: float,
) -> MeritBreakdown:
    """Φ^{(z,y)}(x)

    x_i = y = z 時 penalty 為 0 且近端項為 0，結果與 total_objective(z) 逐位元相同。
    """
    n_agents = len(problems)
    if len(x) != n_agents or len(sigma) != n_agents:
        raise DimMismatchError(
            f"agent 數量不一致：problems={n_agents}, x={len(x)}, sigma={len(sigma)}"
        )
    check_same_dim([y, z, *x], "merit inputs")

    smooth = 0.0
    penalty = 0.0
    for problem, x_i, sigma_i in zip(problems, x, sigma):
        smooth = smooth + proximal_objective(problem, x_i, z, gamma)
        penalty = penalty + float(sigma_i) * float(np.sum(np.abs(x_i - y)))
    return MeritBreakdown(smooth_part=smooth, penalty_part=penalty, total=smooth + penalty)


def consensus_merit(
    problems: Sequence[AgentProblem], point: np.ndarray, z: np.ndarray, gamma: float
) -> MeritBreakdown:
    """Φ^{(z,p)}(p·𝟙)：所有 x_i 與 y 都取同一點，penalty 為 0"""
    n_agents = len(problems)
    return merit(problems, [point] * n_agents, point, z, (0.0,) * n_agents, gamma)


# ============================================================================
# 方向導數
# ============================================================================

@dataclass(frozen=True)
class DirectionalDerivative:
    estimate: float
    slopes: tuple
    t_sequence: tuple


def directional_derivative_numeric(
    phi: Callable[[np.ndarray], float],
    point: np.ndarray,
    direction: np.ndarray,
    t_sequence: Sequence[float] = DEFAULT_T_SEQUENCE,
) -> DirectionalDerivative:
    """單邊差分估計 lim_{t→0⁺} (Λ(ξ+tp) − Λ(ξ)) / t

    merit 不可微，所以只取 t → 0⁺。
    以最後兩個斜率做一次 Richardson 外插（假設誤差為 O(t)）；
    只有一個 t 時直接回傳該斜率。
    """
    ts = tuple(float(t) for t in t_sequence)
    if not ts or any(t <= 0.0 for t in ts) or any(b >= a for a, b in zip(ts, ts[1:])):
        raise ValueError("t_sequence 必須是嚴格遞減的正數")
    xi = np.asarray(point, dtype=np.float64)
    p = np.asarray(direction, dtype=np.float64)
    if xi.shape != p.shape:
        raise DimMismatchError(f"point {xi.shape} 與 direction {p.shape} 維度不符")

    base = float(phi(xi))
    if not np.isfinite(base):
        raise NonFiniteError("Λ(ξ) 不是有限值")

    slopes = []
    for t in ts:
        val = float(phi(xi + t * p))
        if not np.isfinite(val):
            raise NonFiniteError(f"Λ(ξ + t·p) 在 t={t:g} 不是有限值", {"t": t})
        slopes.append((val - base) / t)

    if len(slopes) == 1:
        estimate = slopes[0]
    else:
        t_prev, t_last = ts[-2], ts[-1]
        s_prev, s_last = slopes[-2], slopes[-1]
        estimate = s_last + (s_last - s_prev) * t_last / (t_prev - t_last)
    return DirectionalDerivative(estimate=estimate, slopes=tuple(slopes), t_sequence=ts)


def l1_gap_directional_derivative(direction: np.ndarray) -> float:
    """‖·‖₁ 在原點沿 p 的方向導數，恰為 ‖p‖₁"""
    return float(np.sum(np.abs(direction)))


def consensus_directional_derivative(
    state: LowerState,
    z: np.ndarray,
    sigma: Sequence[float],
    gamma: float,
    y_plus: np.ndarray,
) -> float:
    """Φ^{(z,y⁺)} 在 x⁺ 沿 Δx̃_i = y⁺ − x_i⁺ 的方向導數

    Σ g_iᵀΔx̃_i − Σ σ_i‖Δx̃_i‖₁，∇F_i^z(x_i⁺) 一律取 state.g（求解器實際使用的量）。
    state.x 必須是 x⁺。
    """
    if len(sigma) != state.n_agents:
        raise DimMismatchError("sigma 數量與 agent 數量不符")
    check_same_dim([y_plus, z, *state.x], "directional derivative inputs")
    first_order = 0.0
    gap = 0.0
    for x_i, g_i, sigma_i in zip(state.x, state.g, sigma):
        delta = y_plus - x_i
        first_order = first_order + float(np.dot(g_i, delta))
        gap = gap + float(sigma_i) * float(np.sum(np.abs(delta)))
    return first_order - gap


# ============================================================================
# 下降條件
# ============================================================================

@dataclass(frozen=True)
class DescentCheck:
    ok: bool
    margin: float


def local_descent_condition(state: LowerState, sigma: Sequence[float]) -> DescentCheck:
    """局部步驟的充分下降條件

    Σ λ_iᵀΔx_i + Σ‖Δx_i‖²_{B_i} > Σ σ_i‖Δx_i‖₁，Δx_i = x_i⁺ − y。
    state.x 為 x⁺，state.y 與 state.lam 為該次局部更新使用的 y 與 λ。
    """
    if len(sigma) != state.n_agents:
        raise DimMismatchError("sigma 數量與 agent 數量不符")
    lhs = 0.0
    rhs = 0.0
    for x_i, lam_i, b_i, sigma_i in zip(state.x, state.lam, state.hessians, sigma):
        delta = x_i - state.y
        lhs = lhs + float(np.dot(lam_i, delta)) + b_i.quad(delta)
        rhs = rhs + float(sigma_i) * float(np.sum(np.abs(delta)))
    margin = lhs - rhs
    return DescentCheck(ok=margin > 0.0, margin=margin)


def consensus_descent_condition(
    sigma: Sequence[float], lambda_plus: Sequence[np.ndarray]
) -> tuple:
    """逐 agent 檢查 σ_i > ‖λ_i⁺‖∞（嚴格不等式）"""
    if len(sigma) != len(lambda_plus):
        raise DimMismatchError("sigma 與 λ⁺ 的 agent 數量不符")
    return tuple(
        bool(float(s) > float(np.max(np.abs(lam)))) for s, lam in zip(sigma, lambda_plus)
    )


def consensus_descent_margins(
    sigma: Sequence[float], lambda_plus: Sequence[np.ndarray]
) -> tuple:
    return tuple(float(s) - float(np.max(np.abs(lam))) for s, lam in zip(sigma, lambda_plus))


def local_merit_drop(
    problems: Sequence[AgentProblem],
    state: LowerState,
    z: np.ndarray,
    sigma: Sequence[float],
    gamma: float,
) -> float:
    """Φ^{(z,y)}(x⁺) − Φ^{(z,y)}(y·𝟙)，負值代表局部步驟讓 merit 下降"""
    after = merit(problems, state.x, state.y, z, sigma, gamma).total
    before = merit(problems, [state.y] * state.n_agents, state.y, z, sigma, gamma).total
    return after - before


# ============================================================================
# σ 維護
# ============================================================================

def raise_sigma(
    sigma: Sequence[float], lambda_plus: Sequence[np.ndarray], margin: float
) -> tuple:
    """σ_i 未嚴格大於 ‖λ_i⁺‖∞ 時設為 ‖λ_i⁺‖∞·(1+margin) + margin，其餘不變；σ 永不下降

    margin = 0 且 σ_i = ‖λ_i⁺‖∞ 時更新前後相同。
    """
    if margin < 0.0:
        raise ValueError("margin 必須 ≥ 0")
    if len(sigma) != len(lambda_plus):
        raise DimMismatchError("sigma 與 λ⁺ 的 agent 數量不符")
    updated = []
    for s, lam in zip(sigma, lambda_plus):
        bound = float(np.max(np.abs(lam)))
        updated.append(bound * (1.0 + margin) + margin if float(s) <= bound else float(s))
    return tuple(updated)


def weighted_sq_norm(matrix: HessianApprox, v: np.ndarray, inverse: bool = False) -> float:
    """‖v‖²_B 或 ‖v‖²_{B⁻¹}"""
    vec = as_vector(v, "v")
    return matrix.inv_quad(vec) if inverse else matrix.quad(vec)


def sq_norm(v: np.ndarray, w: Optional[np.ndarray] = None) -> float:
    diff = v if w is None else v - w
    return float(np.dot(diff, diff))
