"""
master / agent 的 round 協定

一個 round 的訊息流程：

    agents ──(AgentUpload × N, 經 SimBus)──► master ──(MasterBroadcast × 1)──► agents

- CALADIN：agent 上傳 (x_i⁺, g_i)，λ 不經過網路；收到 y⁺ 後 agent 自行還原 λ_i
- CADMM：agent 保留 λ_i，上傳 (x_i⁺, λ_i)
- z_flag = 1 代表 z 已更新；prox 方法的 agent 保留 x_i、λ_i、g_i，只換上新的 z 與 B_i

兩端呼叫的 kernel 與 consensus_solver.lower.sweep 相同，因此數值結果逐位元一致。
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from consensus_solver.lower import (
    AgentStep,
    SweepReport,
    _surrogate,
    agent_sweep_step,
    build_hessian,
    dual_update_admm,
    master_combine,
    recover_dual_aladin,
)
from shared.config import DualOrdering, SolverConfig
from shared.core import AgentProblem, HessianApprox, LowerState, UpperState, as_vector
from shared.errors import DuplicateUploadError, MalformedFrameError, MissingUploadError

from .bus import SimBus
from .messages import AgentUpload, MasterBroadcast, PayloadKind, decode, encode


# ============================================================================
# Agent
# ============================================================================

class SimAgent:
    """單一 agent 的本地狀態與行為"""

    def __init__(self, index: int, problem: AgentProblem):
        self.index = index
        self.problem = problem
        self.x: Optional[np.ndarray] = None
        self.y: Optional[np.ndarray] = None
        self.z: Optional[np.ndarray] = None
        self.lam: Optional[np.ndarray] = None
        self.g: Optional[np.ndarray] = None
        self.b: Optional[HessianApprox] = None
        self._pending: Optional[AgentStep] = None

    def start_phase(self, z: np.ndarray, config: SolverConfig) -> None:
        """第一個 phase：λ = 0、x = y = z，並依本地曲率建立 B_i"""
        zero = as_vector(np.zeros_like(z), "zero")
        self.z = z
        self.x = z
        self.y = z
        self.lam = zero
        self.g = zero
        self.b = build_hessian(self.problem, self.index, config, z, config.effective_gamma)
        self._pending = None

    def move_anchor(self, z: np.ndarray, config: SolverConfig) -> None:
        """z 被接受後的新 phase：x、λ、g 沿用，B_i 依新的 z 重建"""
        self.z = z
        self.b = build_hessian(self.problem, self.index, config, z, config.effective_gamma)

    def compute_upload(self, config: SolverConfig, round_: int) -> AgentUpload:
        step = agent_sweep_step(self.problem, self.x, self.y, self.z, self.lam, self.b, config)
        self._pending = step
        if config.method.is_aladin:
            return AgentUpload(self.index, step.x_plus, step.g, PayloadKind.SUBGRADIENT, round_)
        return AgentUpload(self.index, step.x_plus, step.lam_used, PayloadKind.DUAL, round_)

    def on_broadcast(self, broadcast: MasterBroadcast, config: SolverConfig) -> None:
        step = self._pending
        if step is None:
            raise MalformedFrameError(f"agent {self.index} 在沒有上傳的情況下收到 broadcast")
        y_plus = broadcast.y_plus
        if config.method.is_aladin:
            self.lam = recover_dual_aladin(self.b, step.x_plus, y_plus, step.g)
        elif config.resolved_dual_ordering == DualOrdering.POST_SWEEP:
            self.lam = dual_update_admm(step.lam_used, config.rho, step.x_plus, y_plus)
        else:
            self.lam = step.lam_used
        self.x = step.x_plus
        self.g = step.g
        self.y = y_plus
        self._pending = None

        if broadcast.z_flag == 1:
            if config.method.is_plain:
                self.z = y_plus
            else:
                self.move_anchor(y_plus, config)


# ============================================================================
# Master
# ============================================================================

class SimMaster:
    """收集 N 個上傳、做共識步驟並產生 broadcast"""

    def __init__(self, problems: Sequence[AgentProblem]):
        self.problems = tuple(problems)

    @property
    def n_agents(self) -> int:
        return len(self.problems)

    def _check_upload(self, frame: bytes, round_: int) -> AgentUpload:
        message = decode(frame)
        if not isinstance(message, AgentUpload):
            raise MalformedFrameError("master 收到非 upload 的訊息")
        if not 0 <= message.agent_id < self.n_agents:
            raise MalformedFrameError(f"agent_id {message.agent_id} 超出範圍")
        if message.round != round_:
            raise MalformedFrameError(
                f"agent {message.agent_id} 的 round {message.round} 與目前 round {round_} 不符"
            )
        return message

    def collect(self, bus: SimBus, round_: int) -> list:
        """在 tick budget 內收齊每個 agent 恰好一個上傳，依 agent_id 排序回傳

        任何錯誤都會先清空 bus 上尚未送達的 frame 再拋出。
        """
        received: dict = {}
        for tick in range(bus.tick_budget + 1):
            for frame in bus.deliver(tick):
                try:
                    message = self._check_upload(frame, round_)
                except MalformedFrameError:
                    bus.clear()
                    raise
                if message.agent_id in received:
                    bus.clear()
                    raise DuplicateUploadError(
                        f"agent {message.agent_id} 在 round {round_} 重複上傳",
                        {"agent_id": message.agent_id, "round": round_},
                    )
                received[message.agent_id] = message
            if len(received) == self.n_agents:
                break
        # 同一 tick 內送達的重複上傳也要偵測
        for frame in bus.deliver(bus.tick_budget):
            try:
                message = decode(frame)
            except MalformedFrameError:
                bus.clear()
                raise
            if isinstance(message, AgentUpload) and message.agent_id in received:
                bus.clear()
                raise DuplicateUploadError(
                    f"agent {message.agent_id} 在 round {round_} 重複上傳",
                    {"agent_id": message.agent_id, "round": round_},
                )

        if len(received) != self.n_agents:
            missing = [i for i in range(self.n_agents) if i not in received]
            bus.clear()
            raise MissingUploadError(
                f"round {round_} 在 {bus.tick_budget} ticks 內缺少 agent {missing} 的上傳",
                {"missing": missing, "round": round_},
            )
        return [received[i] for i in range(self.n_agents)]

    def combine(
        self,
        uploads: Sequence[AgentUpload],
        state: LowerState,
        config: SolverConfig,
        upper: UpperState,
        combined: Optional[HessianApprox],
        round_: int,
    ) -> tuple:
        steps = []
        for upload, lam_i, b_i in zip(uploads, state.lam, state.hessians):
            if config.method.is_aladin:
                # λ 不上傳，使用 master 由 QP 還原的值
                steps.append(AgentStep(lam_used=lam_i, x_plus=upload.x_plus, g=upload.payload))
            else:
                g = _surrogate(b_i, state.y, upload.x_plus, upload.payload)
                steps.append(AgentStep(lam_used=upload.payload, x_plus=upload.x_plus, g=g))
        report = master_combine(self.problems, state, steps, config, upper, combined)
        if config.method.is_plain:
            z_flag = 1
        else:
            z_flag = int(report.merit_after.total < upper.merit_at_z)
        broadcast = MasterBroadcast(y_plus=report.state_after.y, z_flag=z_flag, round=round_)
        return report, broadcast


# ============================================================================
# Round
# ============================================================================

@dataclass(frozen=True)
class RoundResult:
    broadcast: MasterBroadcast
    uploads: tuple
    report: SweepReport
    uploads_delivered: int
    broadcasts: int = 1


def run_round(
    bus: SimBus,
    agents: Sequence[SimAgent],
    master: SimMaster,
    state: LowerState,
    config: SolverConfig,
    upper: UpperState,
    combined: Optional[HessianApprox] = None,
    round_: int = 0,
) -> RoundResult:
    """agents 上傳 → master 收集與共識 → broadcast → agents 更新"""
    delivered_before = bus.stats.uploads_delivered
    for agent in agents:
        bus.post_upload(agent.index, encode(agent.compute_upload(config, round_)))
    uploads = master.collect(bus, round_)
    report, broadcast = master.combine(uploads, state, config, upper, combined, round_)
    frame = bus.publish(encode(broadcast))
    for agent in agents:
        agent.on_broadcast(decode(frame), config)
    return RoundResult(
        broadcast=broadcast,
        uploads=tuple(uploads),
        report=report,
        uploads_delivered=bus.stats.uploads_delivered - delivered_before,
    )


@dataclass
class ProtocolSweeper:
    """可直接交給 globalize.solve 的 sweeper，每次 sweep 走一個 round"""

    problems: Sequence[AgentProblem]
    bus: SimBus = field(default_factory=SimBus)
    agents: list = field(default_factory=list)
    master: Optional[SimMaster] = None
    rounds: list = field(default_factory=list)

    def __post_init__(self):
        if not self.agents:
            self.agents = [SimAgent(i, p) for i, p in enumerate(self.problems)]
        if self.master is None:
            self.master = SimMaster(self.problems)
        self._started = False

    def __call__(
        self,
        problems: Sequence[AgentProblem],
        state: LowerState,
        config: SolverConfig,
        upper: UpperState,
        combined: Optional[HessianApprox],
    ) -> SweepReport:
        if not self._started:
            for agent in self.agents:
                agent.start_phase(upper.z, config)
            self._started = True
        result = run_round(
            self.bus, self.agents, self.master, state, config, upper, combined, len(self.rounds)
        )
        self.rounds.append(result)
        return result.report
