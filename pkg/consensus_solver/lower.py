"""
下層迭代（固定 z）
CALADIN-Prox / CADMM-Prox 的一次 sweep，以及 plain C-ADMM / C-ALADIN 基準方法

一次 sweep 的流程：

    ┌──────────────────────────── agents（可平行） ───────────────────────────┐
    │ (CADMM, pre-sweep)  λ_i ← λ_i + ρ(x_i − y)                             │
    │ x_i⁺ = local_update(f_i, y, z, λ_i, B_i, γ)   四種策略擇一             │
    │ g_i  = B_i(y − x_i⁺) − λ_i                                             │
    └──────────────────────────────┬──────────────────────────────────────────┘
                                   │ upload (x_i⁺, g_i 或 λ_i)
                                   ▼
    ┌──────────────────────────── master（barrier） ─────────────────────────┐
    │ y⁺ = (ΣB_i + βI)⁻¹(βy + Σ(B_i x_i⁺ − g_i))        CALADIN              │
    │ y⁺ = (βy + Σ(ρx_i⁺ + λ_i)) / (Nρ + β)              CADMM                │
    │ λ_i⁺ = B_i(x_i⁺ − y⁺) − g_i  或  λ_i + ρ(x_i⁺ − y⁺)                    │
    │ σ 更新、merit 與下降條件                                               │
    └────────────────────────────────────────────────────────────────────────┘

跨 agent 的加總一律依編號順序，agent 的執行順序不影響結果。
simnet 只替換中間的 upload / broadcast，兩端呼叫的是同一組 kernel。
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from shared.config import DualOrdering, HessianMode, LocalUpdateStrategy, SolverConfig
from shared.core import (
    AgentProblem,
    HessianApprox,
    LowerState,
    ScaledIdentity,
    SpdMatrix,
    UpperState,
    as_vector,
    fixed_order_sum,
    project_spd,
    sum_hessians,
)
from shared.errors import DimMismatchError, DivergedError, NoExactOracleError
from shared.solver_logger import SolverLogger

from .merit import (
    MeritBreakdown,
    consensus_descent_condition,
    consensus_descent_margins,
    consensus_directional_derivative,
    local_descent_condition,
    merit,
    raise_sigma,
)

DIVERGENCE_NORM = 1e12


# ============================================================================
# 局部更新 kernel
# ============================================================================

def local_update_linearized_upper(
    agent: AgentProblem,
    y: np.ndarray,
    z: np.ndarray,
    lambda_i: np.ndarray,
    b_i: HessianApprox,
    gamma: float,
) -> np.ndarray:
    """x⁺ = y + B_i⁻¹(γ(z−y) − λ_i − ∂f_i(y))"""
    grad = agent.subgradient_at(y)
    step = b_i.solve(as_vector(gamma * (z - y) - lambda_i - grad, "rhs"))
    return as_vector(y + step, "x⁺")


def _lower_step(
    agent: AgentProblem,
    x_minus: np.ndarray,
    y: np.ndarray,
    z: np.ndarray,
    lambda_i: np.ndarray,
    b_i: HessianApprox,
    gamma: float,
) -> np.ndarray:
    # (B_i + γI)⁻¹(γz + B_i y − λ_i − ∂f_i(x⁻))
    grad = agent.subgradient_at(x_minus)
    rhs = as_vector(gamma * z + b_i.matvec(y) - lambda_i - grad, "rhs")
    return b_i.shifted(gamma).solve(rhs)


def local_update_linearized_lower(
    agent: AgentProblem,
    y: np.ndarray,
    z: np.ndarray,
    lambda_i: np.ndarray,
    b_i: HessianApprox,
    gamma: float,
) -> np.ndarray:
    """x⁺ = (B_i+γI)⁻¹(γz + B_i y − λ_i − ∂f_i(y))"""
    return _lower_step(agent, y, y, z, lambda_i, b_i, gamma)


def local_update_fixed_point(
    agent: AgentProblem,
    y: np.ndarray,
    z: np.ndarray,
    lambda_i: np.ndarray,
    b_i: HessianApprox,
    gamma: float,
    iters: int,
) -> np.ndarray:
    """從 x⁻ = y 開始重複套用 linearized-lower 的映射 iters 次

    iters = 1 時與 local_update_linearized_lower 逐位元相同。
    B_i + γI 壓不住 ∂f_i 的變化時迭代可能在兩點間來回；只有範數超過 1e12 才算 DIVERGED。
    """
    if iters < 1:
        raise ValueError("iters 必須 ≥ 1")
    x = y
    for k in range(iters):
        x = _lower_step(agent, x, y, z, lambda_i, b_i, gamma)
        if float(np.max(np.abs(x))) > DIVERGENCE_NORM:
            raise DivergedError(
                f"{agent.name} 的固定點迭代發散（第 {k + 1} 次）",
                {"agent": agent.name, "iteration": k + 1},
            )
    return x


def local_update_exact(
    agent: AgentProblem,
    y: np.ndarray,
    z: np.ndarray,
    lambda_i: np.ndarray,
    b_i: HessianApprox,
    gamma: float,
) -> np.ndarray:
    """argmin_x f_i(x) + (γ/2)‖x−z‖² + λ_iᵀx + ½‖x−y‖²_{B_i}"""
    if agent.exact_local_solve is None:
        raise NoExactOracleError(f"{agent.name} 沒有提供 exact_local_solve", {"agent": agent.name})
    return as_vector(agent.exact_local_solve(lambda_i, y, z, b_i, gamma), "x⁺")


def agent_local_step(
    agent: AgentProblem,
    y: np.ndarray,
    z: np.ndarray,
    lambda_i: np.ndarray,
    b_i: HessianApprox,
    gamma: float,
    config: SolverConfig,
) -> np.ndarray:
    """依 config.local_update_strategy 選擇局部更新"""
    strategy = config.local_update_strategy
    if strategy == LocalUpdateStrategy.LINEARIZED_UPPER:
        return local_update_linearized_upper(agent, y, z, lambda_i, b_i, gamma)
    if strategy == LocalUpdateStrategy.LINEARIZED_LOWER:
        return local_update_linearized_lower(agent, y, z, lambda_i, b_i, gamma)
    if strategy == LocalUpdateStrategy.FIXED_POINT:
        return local_update_fixed_point(
            agent, y, z, lambda_i, b_i, gamma, config.fixed_point_inner_iters
        )
    return local_update_exact(agent, y, z, lambda_i, b_i, gamma)


# ============================================================================
# 次梯度代理、共識與對偶 kernel
# ============================================================================

def _surrogate(b_i: HessianApprox, y: np.ndarray, x_plus: np.ndarray, lambda_i: np.ndarray) -> np.ndarray:
    return as_vector(b_i.matvec(as_vector(y - x_plus, "y − x⁺")) - lambda_i, "g")


def subgradient_surrogate(state: LowerState, i: int) -> np.ndarray:
    """g_i = B_i(y − x_i⁺) − λ_i，state.x 為 x⁺"""
    return _surrogate(state.hessians[i], state.y, state.x[i], state.lam[i])


def consensus_update_aladin(
    state: LowerState,
    beta: float,
    y_prev: np.ndarray,
    combined: Optional[HessianApprox] = None,
) -> np.ndarray:
    """y⁺ = (ΣB_i + βI)⁻¹(β·y_prev + Σ(B_i x_i⁺ − g_i))

    combined 為預先分解好的 ΣB_i + βI（每個 z-phase 只分解一次）。
    """
    if combined is None:
        combined = sum_hessians(state.hessians, beta, state.dim)
    terms = [b_i.matvec(x_i) - g_i for b_i, x_i, g_i in zip(state.hessians, state.x, state.g)]
    rhs = as_vector(beta * y_prev + fixed_order_sum(terms), "rhs")
    return combined.solve(rhs)


def consensus_update_admm(state: LowerState, rho: float, beta: float, y_prev: np.ndarray) -> np.ndarray:
    """y⁺ = (β·y_prev + Σ(ρx_i⁺ + λ_i)) / (Nρ + β)"""
    # 分母與 sum_hessians 相同的加總方式，B_i = ρI 時與 CALADIN 的結果一致
    denominator = sum_hessians([ScaledIdentity(rho)] * state.n_agents, beta, state.dim)
    terms = [rho * x_i + lam_i for x_i, lam_i in zip(state.x, state.lam)]
    rhs = as_vector(beta * y_prev + fixed_order_sum(terms), "rhs")
    return denominator.solve(rhs)


def recover_dual_aladin(
    b_i: HessianApprox, x_i: np.ndarray, y: np.ndarray, g_i: np.ndarray
) -> np.ndarray:
    """λ_i = B_i(x_i − y) − g_i，agent 端從 broadcast 的 y 還原對偶變數"""
    return as_vector(b_i.matvec(as_vector(x_i - y, "x − y")) - g_i, "λ")


def dual_update_aladin(state: LowerState, y_plus: np.ndarray, i: int) -> np.ndarray:
    """λ_i⁺ = B_i(x_i⁺ − y⁺) − g_i"""
    return recover_dual_aladin(state.hessians[i], state.x[i], y_plus, state.g[i])


def dual_update_admm(lambda_i: np.ndarray, rho: float, x_i: np.ndarray, y: np.ndarray) -> np.ndarray:
    """λ⁺ = λ + ρ(x − y)；呼叫端決定傳入 sweep 前或 sweep 後的 (x, y)"""
    return as_vector(lambda_i + rho * (x_i - y), "λ⁺")


# ============================================================================
# B_i 與 phase 起點
# ============================================================================

def build_hessian(
    problem: AgentProblem, index: int, config: SolverConfig, z: np.ndarray, gamma: float
) -> HessianApprox:
    """第 index 個 agent 在目前 z 下的 B_i"""
    mode = config.hessian_mode
    if not config.method.is_aladin or mode == HessianMode.SCALED_IDENTITY:
        return ScaledIdentity(config.rho)
    if mode == HessianMode.USER_FIXED:
        matrices = config.hessians or []
        if index >= len(matrices):
            raise DimMismatchError(
                f"hessians 只有 {len(matrices)} 個矩陣，缺少 agent {index}",
                {"agent": index},
            )
        matrix = SpdMatrix(matrices[index])
        if matrix.n != z.shape[0]:
            raise DimMismatchError(f"hessians[{index}] 為 {matrix.n}×{matrix.n}，預期 n={z.shape[0]}")
        return matrix
    # CURVATURE_REFRESH：∇²f_i(z) + γI，特徵值下限為 ρ
    curvature = problem.curvature_at(z)
    if curvature is None:
        return ScaledIdentity(config.rho)
    return project_spd(curvature + gamma * np.eye(z.shape[0]), floor=config.rho)


def build_hessians(
    problems: Sequence[AgentProblem], config: SolverConfig, z: np.ndarray, gamma: float
) -> tuple:
    return tuple(build_hessian(p, i, config, z, gamma) for i, p in enumerate(problems))


def initial_lower_state(z: np.ndarray, hessians: Sequence[HessianApprox]) -> LowerState:
    """第一個 phase 的起點：λ_i = 0、x_i = y = z、g_i = 0"""
    zero = as_vector(np.zeros_like(z), "zero")
    n_agents = len(hessians)
    return LowerState(
        x=(z,) * n_agents,
        y=z,
        lam=(zero,) * n_agents,
        g=(zero,) * n_agents,
        hessians=tuple(hessians),
        sweep_index=0,
    )


def carry_lower_state(state: LowerState, hessians: Sequence[HessianApprox]) -> LowerState:
    """z ← y⁺ 之後的 phase 起點

    x_i、λ_i、g_i 與 y（= 新的 z）沿用上一個 phase 的最後一次 sweep，只換上新 z 的 B_i。
    """
    if len(hessians) != state.n_agents:
        raise DimMismatchError(f"收到 {len(hessians)} 個 B_i，預期 {state.n_agents}")
    return replace(state, hessians=tuple(hessians), sweep_index=0)


# ============================================================================
# Sweep
# ============================================================================

@dataclass(frozen=True)
class AgentStep:
    """單一 agent 在一次 sweep 中計算的量"""

    lam_used: np.ndarray
    x_plus: np.ndarray
    g: np.ndarray


@dataclass(frozen=True)
class SweepReport:
    """一次 sweep 的結果與診斷量

    merit_before = Φ^{(z,y)}(y·𝟙)、merit_local = Φ^{(z,y)}(x⁺)（σ 更新前）
    merit_mid = Φ^{(z,y⁺)}(x⁺)、merit_after = Φ^{(z,y⁺)}(y⁺·𝟙)（σ 更新後）
    """

    state_after: LowerState
    local_state: LowerState
    lambda_plus: tuple
    sigma_before: tuple
    sigma_after: tuple
    merit_before: MeritBreakdown
    merit_local: MeritBreakdown
    merit_mid: MeritBreakdown
    merit_after: MeritBreakdown
    local_descent_ok: bool
    local_margin: float
    consensus_descent_ok: tuple
    consensus_margins: tuple
    directional_derivative: float
    delta_x: tuple
    delta_x_tilde: tuple

    @property
    def consensus_all_ok(self) -> bool:
        return all(self.consensus_descent_ok)

    @property
    def delta_x_tilde_norm(self) -> float:
        return float(np.sqrt(sum(d * d for d in self.delta_x_tilde)))

    @property
    def local_merit_dropped(self) -> bool:
        return self.merit_local.total < self.merit_before.total

    @property
    def consensus_merit_dropped(self) -> bool:
        return self.merit_after.total < self.merit_mid.total

    def descent_violations(self, min_step: float = 0.0) -> list:
        """條件成立但 merit 沒有下降的情況；步長不超過 min_step 的 sweep 不計入"""
        violations = []
        if self.local_descent_ok and max(self.delta_x) > min_step and not self.local_merit_dropped:
            violations.append("local")
        if self.consensus_all_ok and self.delta_x_tilde_norm > min_step and not self.consensus_merit_dropped:
            violations.append("consensus")
        return violations


def agent_sweep_step(
    agent: AgentProblem,
    x_i: np.ndarray,
    y: np.ndarray,
    z: np.ndarray,
    lambda_i: np.ndarray,
    b_i: HessianApprox,
    config: SolverConfig,
) -> AgentStep:
    """agent 端的工作：（CADMM pre-sweep）對偶更新、局部更新、g_i"""
    if not config.method.is_aladin and config.resolved_dual_ordering == DualOrdering.PRE_SWEEP:
        lam_used = dual_update_admm(lambda_i, config.rho, x_i, y)
    else:
        lam_used = lambda_i
    x_plus = agent_local_step(agent, y, z, lam_used, b_i, config.effective_gamma, config)
    return AgentStep(lam_used=lam_used, x_plus=x_plus, g=_surrogate(b_i, y, x_plus, lam_used))


def master_combine(
    problems: Sequence[AgentProblem],
    state: LowerState,
    steps: Sequence[AgentStep],
    config: SolverConfig,
    upper: UpperState,
    combined: Optional[HessianApprox] = None,
) -> SweepReport:
    """master 端的工作：共識步驟、對偶更新、σ 更新與 merit 診斷"""
    if len(steps) != state.n_agents:
        raise DimMismatchError(f"收到 {len(steps)} 個 agent 結果，預期 {state.n_agents}")
    gamma = config.effective_gamma
    z = upper.z
    y = state.y
    local_state = LowerState(
        x=tuple(s.x_plus for s in steps),
        y=y,
        lam=tuple(s.lam_used for s in steps),
        g=tuple(s.g for s in steps),
        hessians=state.hessians,
        sweep_index=state.sweep_index,
    )

    if config.method.is_aladin:
        y_plus = consensus_update_aladin(local_state, config.beta, y, combined)
        lambda_plus = tuple(dual_update_aladin(local_state, y_plus, i) for i in range(state.n_agents))
        lam_stored = lambda_plus
    else:
        y_plus = consensus_update_admm(local_state, config.rho, config.beta, y)
        lambda_plus = tuple(
            dual_update_admm(lam, config.rho, x, y_plus)
            for lam, x in zip(local_state.lam, local_state.x)
        )
        if config.resolved_dual_ordering == DualOrdering.PRE_SWEEP:
            lam_stored = local_state.lam
        else:
            lam_stored = lambda_plus

    sigma_before = upper.sigma
    sigma_after = raise_sigma(sigma_before, lambda_plus, config.sigma_margin)
    for i, (old, new) in enumerate(zip(sigma_before, sigma_after)):
        if new != old:
            SolverLogger.sigma_raised(i, old, new)

    n_agents = state.n_agents
    merit_before = merit(problems, [y] * n_agents, y, z, sigma_before, gamma)
    merit_local = merit(problems, local_state.x, y, z, sigma_before, gamma)
    merit_mid = merit(problems, local_state.x, y_plus, z, sigma_after, gamma)
    merit_after = merit(problems, [y_plus] * n_agents, y_plus, z, sigma_after, gamma)

    local_check = local_descent_condition(local_state, sigma_before)
    state_after = LowerState(
        x=local_state.x,
        y=y_plus,
        lam=lam_stored,
        g=local_state.g,
        hessians=state.hessians,
        sweep_index=state.sweep_index + 1,
    )
    return SweepReport(
        state_after=state_after,
        local_state=local_state,
        lambda_plus=lambda_plus,
        sigma_before=sigma_before,
        sigma_after=sigma_after,
        merit_before=merit_before,
        merit_local=merit_local,
        merit_mid=merit_mid,
        merit_after=merit_after,
        local_descent_ok=local_check.ok,
        local_margin=local_check.margin,
        consensus_descent_ok=consensus_descent_condition(sigma_after, lambda_plus),
        consensus_margins=consensus_descent_margins(sigma_after, lambda_plus),
        directional_derivative=consensus_directional_derivative(
            local_state, z, sigma_after, gamma, y_plus
        ),
        delta_x=tuple(float(np.linalg.norm(x - y)) for x in local_state.x),
        delta_x_tilde=tuple(float(np.linalg.norm(y_plus - x)) for x in local_state.x),
    )


def _map_agents(fn: Callable[[int], AgentStep], n_agents: int, max_workers: int) -> list:
    if max_workers <= 1 or n_agents == 1:
        return [fn(i) for i in range(n_agents)]
    with ThreadPoolExecutor(max_workers=min(max_workers, n_agents)) as pool:
        # map 依輸入順序回傳，與完成順序無關
        return list(pool.map(fn, range(n_agents)))


def sweep(
    problems: Sequence[AgentProblem],
    state: LowerState,
    config: SolverConfig,
    upper: UpperState,
    combined: Optional[HessianApprox] = None,
) -> SweepReport:
    """直接呼叫的下層 sweep（不經過 simnet）"""
    if len(problems) != state.n_agents:
        raise DimMismatchError(f"problems 有 {len(problems)} 個，state 有 {state.n_agents} 個 agent")

    def _step(i: int) -> AgentStep:
        return agent_sweep_step(
            problems[i], state.x[i], state.y, upper.z, state.lam[i], state.hessians[i], config
        )

    steps = _map_agents(_step, state.n_agents, config.max_workers)
    return master_combine(problems, state, steps, config, upper, combined)


class Sweeper(Protocol):
    def __call__(
        self,
        problems: Sequence[AgentProblem],
        state: LowerState,
        config: SolverConfig,
        upper: UpperState,
        combined: Optional[HessianApprox],
    ) -> SweepReport: ...


# ============================================================================
# 下層 phase
# ============================================================================

@dataclass(frozen=True)
class LowerPhaseResult:
    state: LowerState
    reports: tuple
    accepted: bool
    upper: UpperState


def run_lower(
    problems: Sequence[AgentProblem],
    state: LowerState,
    config: SolverConfig,
    upper: UpperState,
    sweeper: Optional[Sweeper] = None,
    observer: Optional[Callable[[SweepReport, bool], None]] = None,
) -> LowerPhaseResult:
    """重複 sweep 直到 Φ^{(z,y⁺)}(y⁺) < Φ^{(z,z)}(z) 或用完 max_lower_sweeps

    每次 sweep 後更新 σ。沒有接受時回傳 accepted=False，由 solve 判斷是
    null step、停在最佳點，還是拋出 LowerStalledError。
    """
    sweeper = sweeper or sweep
    combined = (
        sum_hessians(state.hessians, config.beta, state.dim) if config.method.is_aladin else None
    )
    reports = []
    for _ in range(config.max_lower_sweeps):
        report = sweeper(problems, state, config, upper, combined)
        state = report.state_after
        upper = replace(upper, sigma=report.sigma_after)
        reports.append(report)
        accepted = report.merit_after.total < upper.merit_at_z
        SolverLogger.sweep(
            state.sweep_index, report.merit_after.total, report.local_descent_ok, report.consensus_all_ok
        )
        if observer is not None:
            observer(report, accepted)
        if accepted:
            return LowerPhaseResult(state=state, reports=tuple(reports), accepted=True, upper=upper)
    return LowerPhaseResult(state=state, reports=tuple(reports), accepted=False, upper=upper)
