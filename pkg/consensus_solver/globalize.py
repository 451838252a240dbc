"""
上層全域化
σ 維護、z 的接受測試、停止條件、完整的雙層求解迴圈，以及以擾動重啟判斷極限點

外層流程（prox 方法）：

    z⁰ ──► run_lower（第一個 phase 從 y = z、λ = 0 開始，之後沿用上一個 phase 的 x、λ、g）
            │
            ├─ Φ^{(z,y⁺)}(y⁺) < Φ^{(z,z)}(z) ──► z ← y⁺、快取 Φ^{(y⁺,y⁺)}(y⁺) ──► stopping_test
            │                                                                     │
            │                                  ‖z⁺−z‖² ≤ eps_z 且 stationarity ≤ kkt_tol ─┴─► CONVERGED
            │
            └─ 用完 max_lower_sweeps 仍未接受
                   ├─ ‖y − z‖² ≤ eps_z          ──► CONVERGED（null step）
                   ├─ 下層 KKT residual ≤ kkt_tol ──► LOWER_STALLED_AT_OPTIMUM
                   └─ 其他                       ──► LowerStalledError

plain 方法（γ = 0）每次 sweep 都令 z ← y⁺，λ 跨 sweep 保留，沒有 merit 測試。
"""

import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from shared.config import SolverConfig
from shared.core import AgentProblem, LowerState, UpperState, as_vector, sum_hessians
from shared.errors import DimMismatchError, LowerStalledError
from shared.solver_logger import SolverLogger

from .diagnostics import lower_kkt_residual, lower_stationarity
from .lower import (
    SweepReport,
    Sweeper,
    build_hessians,
    carry_lower_state,
    initial_lower_state,
    run_lower,
    sweep,
)
from .merit import raise_sigma, sq_norm, total_objective

DEFAULT_PERTURB_SCALES = (1e-2, 1e-3, 1e-4)


class OuterStatus(str, Enum):
    CONVERGED = "CONVERGED"
    MAX_OUTER = "MAX_OUTER"
    LOWER_STALLED_AT_OPTIMUM = "LOWER_STALLED_AT_OPTIMUM"


class VerdictLabel(str, Enum):
    LOCAL_MINIMIZER = "LOCAL_MINIMIZER"
    SADDLE_OR_OTHER = "SADDLE_OR_OTHER"


@dataclass(frozen=True)
class OuterResult:
    """外層求解結果

    merit_trajectory[k] = Φ^{(z^k,z^k)}(z^k)，z_step_squares[j] = ‖z^j − z^{j+1}‖²
    stationarity 為最後一次 sweep 的 lower_stationarity
    """

    z_star: np.ndarray
    outer_iterations: int
    merit_trajectory: tuple
    z_step_squares: tuple
    status: OuterStatus
    z_trajectory: tuple = field(default_factory=tuple)
    gamma: float = 0.0
    n_agents: int = 0
    sigma: tuple = field(default_factory=tuple)
    lower_sweeps: int = 0
    null_step: bool = False
    stationarity: float = 0.0

    def to_dict(self) -> dict:
        return {
            "z_star": self.z_star.tolist(),
            "outer_iterations": self.outer_iterations,
            "merit_trajectory": list(self.merit_trajectory),
            "z_step_squares": list(self.z_step_squares),
            "status": self.status.value,
            "gamma": self.gamma,
            "n_agents": self.n_agents,
            "sigma": list(self.sigma),
            "lower_sweeps": self.lower_sweeps,
            "null_step": self.null_step,
            "stationarity": self.stationarity,
        }


@dataclass(frozen=True)
class CriticalPointVerdict:
    """擾動重啟的判斷結果（啟發式）"""

    label: VerdictLabel
    trials: int
    escaped_to: Optional[np.ndarray] = None
    scales: tuple = DEFAULT_PERTURB_SCALES
    restarts: int = 0
    max_return_distance: float = 0.0
    stalled_restarts: int = 0

    def __post_init__(self):
        if (self.escaped_to is not None) != (self.label == VerdictLabel.SADDLE_OR_OTHER):
            raise ValueError("escaped_to 只在 SADDLE_OR_OTHER 時存在")

    @property
    def vacuous(self) -> bool:
        return self.trials == 0

    def to_dict(self) -> dict:
        return {
            "label": self.label.value,
            "trials": self.trials,
            "escaped_to": None if self.escaped_to is None else self.escaped_to.tolist(),
            "scales": list(self.scales),
            "restarts": self.restarts,
            "max_return_distance": self.max_return_distance,
            "stalled_restarts": self.stalled_restarts,
            "vacuous": self.vacuous,
            "heuristic": True,
        }


@dataclass(frozen=True)
class SweepEvent:
    """每次 sweep 後交給 observer 的資料（harness 寫 trace 使用）"""

    outer_index: int
    z: np.ndarray
    report: SweepReport
    accepted: bool
    z_step_sq: float


SweepObserver = Callable[[SweepEvent], None]


# ============================================================================
# 上層基本操作
# ============================================================================

def update_sigma(upper: UpperState, lambda_plus: Sequence[np.ndarray], margin: float) -> UpperState:
    """σ_i ← ‖λ_i⁺‖∞·(1+margin) + margin（只在 σ_i 不夠大時），σ 不會下降"""
    return replace(upper, sigma=raise_sigma(upper.sigma, lambda_plus, margin))


def accept_z(
    upper: UpperState,
    y_plus: np.ndarray,
    merit_at_y_plus: float,
    merit_at_z: float,
) -> tuple:
    """Φ^{(z,y⁺)}(y⁺) < Φ^{(z,z)}(z) 時 z ← y⁺

    回傳 (UpperState, accepted)；未接受時回傳原本的 upper。
    接受時 merit_at_z 先記下 Φ^{(z,y⁺)}(y⁺)，它是 Φ^{(y⁺,y⁺)}(y⁺) 的上界；
    solve 會立刻換成 total_objective(y⁺)。
    """
    if not merit_at_y_plus < merit_at_z:
        return upper, False
    accepted = replace(
        upper,
        z=as_vector(y_plus, "z"),
        outer_index=upper.outer_index + 1,
        merit_at_z=float(merit_at_y_plus),
    )
    return accepted, True


def stopping_test(z_step_squares: Sequence[float], eps_z: float, window: int = 1) -> bool:
    """最後 window 個 ‖z^j − z^{j+1}‖² 都 ≤ eps_z"""
    if window < 1:
        raise ValueError("window 必須 ≥ 1")
    if len(z_step_squares) < window:
        return False
    return all(s <= eps_z for s in z_step_squares[-window:])


def estimate_gamma(
    problems: Sequence[AgentProblem],
    z0: np.ndarray,
    config: SolverConfig,
    h: float = 1e-4,
    n_directions: int = 8,
) -> float:
    """估計各 f_i 在 z0 沿隨機方向的最小曲率，γ = 2·max(0, −曲率)

    估計值為 0（z0 附近沒有負曲率）時沿用 config.gamma，γ 必須 > 0。
    """
    rng = np.random.default_rng(config.seed)
    n = z0.shape[0]
    directions = [np.eye(n)[k] for k in range(n)]
    for _ in range(n_directions):
        d = rng.standard_normal(n)
        directions.append(d / np.linalg.norm(d))

    lowest = np.inf
    for problem in problems:
        center = problem.value_at(z0)
        for d in directions:
            ahead = problem.value_at(as_vector(z0 + h * d, "z0 + h·d"))
            behind = problem.value_at(as_vector(z0 - h * d, "z0 − h·d"))
            lowest = min(lowest, (ahead - 2.0 * center + behind) / (h * h))
    estimate = 2.0 * max(0.0, -lowest)
    return estimate if estimate > 0.0 else config.gamma


def contraction_factors(z_trajectory: Sequence[np.ndarray], z_star: np.ndarray, floor: float = 1e-12) -> tuple:
    """‖z^{k+1} − z*‖ / ‖z^k − z*‖，分母小於 floor 的項略過"""
    factors = []
    for current, following in zip(z_trajectory, z_trajectory[1:]):
        denominator = float(np.linalg.norm(current - z_star))
        if denominator < floor:
            continue
        factors.append(float(np.linalg.norm(following - z_star)) / denominator)
    return tuple(factors)


# ============================================================================
# 求解
# ============================================================================

def _check_inputs(problems: Sequence[AgentProblem], z0) -> np.ndarray:
    if not problems:
        raise DimMismatchError("至少需要一個 agent")
    z = as_vector(z0, "z0")
    for problem in problems:
        if problem.dim != z.shape[0]:
            raise DimMismatchError(
                f"{problem.name} 的維度為 {problem.dim}，z0 為 {z.shape[0]}",
                {"agent": problem.name},
            )
    return z


def _stall_status(config: SolverConfig, upper: UpperState, reports: Sequence[SweepReport]) -> OuterStatus:
    """用完 max_lower_sweeps 仍未接受時的狀態

    null step 要求最後兩次 sweep 的 y 都停在 z；只有偶數次 sweep 回到 z 的兩點循環不算。
    """
    ys = [r.state_after.y for r in reports]
    gaps = [sq_norm(y, upper.z) for y in ys[-2:]]
    if all(gap <= config.eps_z for gap in gaps):
        SolverLogger.event("null step", f"‖y − z‖² = {gaps[-1]:.3e}")
        return OuterStatus.CONVERGED
    state = reports[-1].state_after
    residual = lower_kkt_residual(state, upper.z, config.effective_gamma)
    if residual <= config.kkt_tol:
        SolverLogger.event("lower stalled at optimum", f"KKT residual {residual:.3e}")
        return OuterStatus.LOWER_STALLED_AT_OPTIMUM
    cycling = len(ys) >= 3 and sq_norm(ys[-1], ys[-3]) <= config.eps_z < sq_norm(ys[-1], ys[-2])
    message = f"下層 {config.max_lower_sweeps} 次 sweep 內 merit 沒有下降"
    if cycling:
        message += "（y 在兩點間循環；CALADIN 在 β = 0 時可能發生，可設 β > 0）"
    raise LowerStalledError(
        message,
        {
            "z": upper.z.tolist(),
            "kkt_residual": residual,
            "outer_index": upper.outer_index,
            "cycling": cycling,
        },
    )


def solve(
    problems: Sequence[AgentProblem],
    config: SolverConfig,
    z0,
    sweeper: Optional[Sweeper] = None,
    observer: Optional[SweepObserver] = None,
) -> OuterResult:
    """完整的雙層求解"""
    z = _check_inputs(problems, z0)
    if config.auto_gamma and not config.method.is_plain:
        gamma = estimate_gamma(problems, z, config)
        if gamma != config.gamma:
            SolverLogger.event("γ 估計", f"{config.gamma:g} → {gamma:g}")
            config = config.with_gamma(gamma)
    sweeper = sweeper or sweep
    start = time.perf_counter()

    if config.method.is_plain:
        result = _solve_plain(problems, config, z, sweeper, observer)
    else:
        result = _solve_prox(problems, config, z, sweeper, observer)

    SolverLogger.footer(result.status.value, result.outer_iterations, (time.perf_counter() - start) * 1000)
    return result


def _solve_prox(
    problems: Sequence[AgentProblem],
    config: SolverConfig,
    z: np.ndarray,
    sweeper: Sweeper,
    observer: Optional[SweepObserver],
) -> OuterResult:
    n_agents = len(problems)
    gamma = config.effective_gamma
    upper = UpperState(z=z, sigma=(0.0,) * n_agents, outer_index=0, merit_at_z=total_objective(problems, z))
    merits = [upper.merit_at_z]
    steps: list = []
    trajectory = [z]
    status = OuterStatus.MAX_OUTER
    null_step = False
    sweeps_total = 0
    outer_iterations = 0
    stationarity = 0.0
    state: Optional[LowerState] = None

    for k in range(config.max_outer):
        outer_iterations = k + 1
        SolverLogger.phase_start(k, upper.z, upper.merit_at_z)
        hessians = build_hessians(problems, config, upper.z, gamma)
        if state is None:
            state = initial_lower_state(upper.z, hessians)
        else:
            state = carry_lower_state(state, hessians)

        phase_z = upper.z

        def _observe(report: SweepReport, accepted: bool, _k=k, _z=phase_z) -> None:
            if observer is not None:
                step = sq_norm(report.state_after.y, _z) if accepted else 0.0
                observer(SweepEvent(_k, _z, report, accepted, step))

        phase = run_lower(problems, state, config, upper, sweeper, _observe)
        sweeps_total += len(phase.reports)
        upper = phase.upper
        state = phase.state
        stationarity = lower_stationarity(state, phase_z, gamma)

        if not phase.accepted:
            status = _stall_status(config, upper, phase.reports)
            null_step = True
            break

        upper, _ = accept_z(upper, state.y, phase.reports[-1].merit_after.total, upper.merit_at_z)
        upper = replace(upper, merit_at_z=total_objective(problems, upper.z))
        step = sq_norm(upper.z, trajectory[-1])
        steps.append(step)
        merits.append(upper.merit_at_z)
        trajectory.append(upper.z)
        SolverLogger.accepted(k, step, upper.merit_at_z)

        if stopping_test(steps, config.eps_z, config.stopping_window):
            if stationarity <= config.kkt_tol:
                status = OuterStatus.CONVERGED
                break
            SolverLogger.event("stopping test deferred", f"stationarity {stationarity:.3e} > kkt_tol")

    return OuterResult(
        z_star=upper.z,
        outer_iterations=outer_iterations,
        merit_trajectory=tuple(merits),
        z_step_squares=tuple(steps),
        status=status,
        z_trajectory=tuple(trajectory),
        gamma=config.gamma,
        n_agents=n_agents,
        sigma=upper.sigma,
        lower_sweeps=sweeps_total,
        null_step=null_step,
        stationarity=stationarity,
    )


def _solve_plain(
    problems: Sequence[AgentProblem],
    config: SolverConfig,
    z: np.ndarray,
    sweeper: Sweeper,
    observer: Optional[SweepObserver],
) -> OuterResult:
    n_agents = len(problems)
    hessians = build_hessians(problems, config, z, config.effective_gamma)
    state = initial_lower_state(z, hessians)
    combined = sum_hessians(hessians, config.beta, z.shape[0]) if config.method.is_aladin else None
    upper = UpperState(z=z, sigma=(0.0,) * n_agents, outer_index=0, merit_at_z=total_objective(problems, z))
    merits = [upper.merit_at_z]
    steps: list = []
    trajectory = [z]
    status = OuterStatus.MAX_OUTER
    outer_iterations = 0
    stationarity = 0.0

    for k in range(config.max_outer):
        outer_iterations = k + 1
        report = sweeper(problems, state, config, upper, combined)
        y_plus = report.state_after.y
        step = sq_norm(y_plus, state.y)
        if observer is not None:
            observer(SweepEvent(k, upper.z, report, True, step))
        stationarity = lower_stationarity(report.state_after, upper.z, config.effective_gamma)
        state = report.state_after
        upper = UpperState(
            z=y_plus,
            sigma=report.sigma_after,
            outer_index=k + 1,
            merit_at_z=total_objective(problems, y_plus),
        )
        steps.append(step)
        merits.append(upper.merit_at_z)
        trajectory.append(y_plus)
        if stopping_test(steps, config.eps_z, config.stopping_window):
            status = OuterStatus.CONVERGED
            break

    return OuterResult(
        z_star=upper.z,
        outer_iterations=outer_iterations,
        merit_trajectory=tuple(merits),
        z_step_squares=tuple(steps),
        status=status,
        z_trajectory=tuple(trajectory),
        gamma=config.effective_gamma,
        n_agents=n_agents,
        sigma=upper.sigma,
        lower_sweeps=outer_iterations,
        stationarity=stationarity,
    )


# ============================================================================
# 極限點分類
# ============================================================================

def classify_critical_point(
    problems: Sequence[AgentProblem],
    config: SolverConfig,
    z_star,
    num_trials: int,
    perturb_scales: Sequence[float] = DEFAULT_PERTURB_SCALES,
    tol_return: Optional[float] = None,
) -> CriticalPointVerdict:
    """從 z* + s·d 重新求解（d 為隨機單位方向），全部回到 z* 附近視為局部極小

    只要有一次重啟停在 tol_return 之外，就回報 SADDLE_OR_OTHER 與該極限點。
    拋出 LowerStalledError 的重啟記為 stalled，不算回到 z* 也不算逃離。
    num_trials = 0 時回傳 vacuous 的 LOCAL_MINIMIZER。
    """
    if num_trials < 0:
        raise ValueError("num_trials 必須 ≥ 0")
    center = _check_inputs(problems, z_star)
    scales = tuple(float(s) for s in perturb_scales)
    tol = config.tol_return if tol_return is None else tol_return
    rng = np.random.default_rng(config.seed)

    restarts = 0
    stalled = 0
    worst = 0.0
    for trial in range(num_trials):
        direction = rng.standard_normal(center.shape[0])
        direction = direction / np.linalg.norm(direction)
        for scale in scales:
            restarts += 1
            try:
                result = solve(problems, config, center + scale * direction)
            except LowerStalledError as e:
                stalled += 1
                SolverLogger.event("restart stalled", f"trial {trial} scale {scale:g}：{e.message}")
                continue
            distance = float(np.linalg.norm(result.z_star - center))
            worst = max(worst, distance)
            if distance > tol:
                SolverLogger.event(
                    "escaped", f"trial {trial} scale {scale:g} → {result.z_star.tolist()}"
                )
                return CriticalPointVerdict(
                    label=VerdictLabel.SADDLE_OR_OTHER,
                    trials=num_trials,
                    escaped_to=result.z_star,
                    scales=scales,
                    restarts=restarts,
                    max_return_distance=worst,
                    stalled_restarts=stalled,
                )
    return CriticalPointVerdict(
        label=VerdictLabel.LOCAL_MINIMIZER,
        trials=num_trials,
        scales=scales,
        restarts=restarts,
        max_return_distance=worst,
        stalled_restarts=stalled,
    )
