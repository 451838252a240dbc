"""
實驗執行
解析套件 → solve（直接或經過 simnet）→ 監控 → RunRecord

監控分兩類：
- 強制（只對 prox 方法）：merit 單調、每步 gap、telescoping 上界；任一失敗 → exit 3
- 參考用：局部 / 共識下降條件的違反次數、Lyapunov（凸套件且 exact 更新）
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from consensus_solver.diagnostics import (
    consensus_kkt_residual,
    monotone_merit_check,
    step_gap_check,
    telescoping_monitor,
)
from consensus_solver.globalize import OuterResult, OuterStatus, solve
from problem_suite import SuiteInstance, parse_suite_spec
from shared.config import LocalUpdateStrategy, Method, SolverConfig
from shared.core import as_vector
from shared.errors import ConfigError
from shared.solver_logger import SolverLogger
from simnet import ProtocolSweeper

from .records import RunRecord, TraceRecorder, render_snapshot, run_id_for

# 下降條件的檢查只在 ‖Δx̃‖ 超過這個值時才計入
DESCENT_MIN_STEP = 1e-5

ENFORCED_MONITORS = ("monotone_merit", "step_gap", "telescoping")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_OUTER = 2
EXIT_MONITOR = 3


@dataclass(frozen=True)
class RunRequest:
    """一次執行的完整輸入（寫入 config_snapshot 的內容）"""

    suite_spec: str
    config: SolverConfig
    z0: Optional[tuple] = None
    via_protocol: bool = False

    def resolve_z0(self, suite: SuiteInstance) -> np.ndarray:
        if self.z0 is None:
            return as_vector(np.zeros(suite.dim), "z0")
        return as_vector(self.z0, "z0")

    def snapshot(self) -> str:
        items = list(self.config.snapshot_items())
        items.append(("suite", self.suite_spec))
        items.append(("z0", None if self.z0 is None else [float(v) for v in self.z0]))
        items.append(("via_protocol", self.via_protocol))
        return render_snapshot(items)


def with_method(config: SolverConfig, method: Method) -> SolverConfig:
    """重新驗證後替換 method"""
    data = config.model_dump()
    data["method"] = method
    try:
        return SolverConfig(**data)
    except ValueError as e:
        raise ConfigError(f"{method.value} 與目前設定不相容：{e}") from e


def evaluate_monitors(result, config: SolverConfig, recorder: TraceRecorder, suite: SuiteInstance) -> dict:
    """回傳 verdicts；None 表示該監控不適用"""
    verdicts: dict = {}
    if config.method.is_plain:
        for name in ENFORCED_MONITORS:
            verdicts[name] = None
    else:
        gamma, n_agents = result.gamma, result.n_agents
        verdicts["monotone_merit"] = monotone_merit_check(result.merit_trajectory)
        verdicts["step_gap"] = all(step_gap_check(result, gamma, n_agents))
        verdicts["telescoping"] = telescoping_monitor(result, gamma, n_agents).ok

    local_violations = 0
    consensus_violations = 0
    for report in recorder.reports:
        kinds = report.descent_violations(DESCENT_MIN_STEP)
        local_violations += "local" in kinds
        consensus_violations += "consensus" in kinds
    verdicts["local_descent_violations"] = local_violations
    verdicts["consensus_descent_violations"] = consensus_violations

    checks = recorder.lyapunov_checks(convex=suite.is_convex)
    verdicts["lyapunov"] = all(c.ok for c in checks) if checks else None
    return verdicts


def monitors_failed(verdicts: dict) -> bool:
    return any(verdicts.get(name) is False for name in ENFORCED_MONITORS)


def _lyapunov_reference(suite: SuiteInstance, config: SolverConfig):
    if config.method.is_plain or not suite.is_convex or suite.lower_reference is None:
        return None
    if config.local_update_strategy != LocalUpdateStrategy.EXACT:
        return None
    return suite.lower_reference


def final_residual(suite: SuiteInstance, result: OuterResult) -> float:
    """平滑套件取 ‖Σ∇f_i(z*)‖∞；有 kink 的套件取最後一次 sweep 的 lower_stationarity"""
    if any(agent.kinks for agent in suite.agents):
        return result.stationarity
    return consensus_kkt_residual(suite.agents, result.z_star)


def run_experiment(request: RunRequest, suite: Optional[SuiteInstance] = None) -> RunRecord:
    """執行一次實驗；suite 可預先建立（compare 共用同一個套件）"""
    suite = suite or parse_suite_spec(request.suite_spec)
    config = request.config
    z0 = request.resolve_z0(suite)
    recorder = TraceRecorder(suite.agents, config.effective_gamma, _lyapunov_reference(suite, config))
    sweeper = ProtocolSweeper(suite.agents) if request.via_protocol else None
    SolverLogger.header("bilevel consensus run", request.suite_spec, config.method.value, suite.n_agents)

    result = solve(suite.agents, config, z0, sweeper=sweeper, observer=recorder)

    snapshot = request.snapshot()
    return RunRecord(
        run_id=run_id_for(snapshot),
        config_snapshot=snapshot,
        trace=tuple(recorder.records),
        result=result,
        verdicts=evaluate_monitors(result, config, recorder, suite),
        suite_spec=request.suite_spec,
        method=config.method.value,
        final_kkt_residual=final_residual(suite, result),
    )


def exit_code_for(record: RunRecord) -> int:
    if monitors_failed(record.verdicts):
        return EXIT_MONITOR
    if record.result.status == OuterStatus.MAX_OUTER:
        return EXIT_MAX_OUTER
    return EXIT_OK


def run_comparison(
    suite_spec: str, config: SolverConfig, methods: Sequence[Method], z0=None
) -> list:
    """相同套件、seed 與初始點下依序執行各方法"""
    if len(methods) < 2:
        raise ConfigError("compare 至少需要兩個方法")
    suite = parse_suite_spec(suite_spec)
    records = []
    for method in methods:
        request = RunRequest(suite_spec=suite_spec, config=with_method(config, method), z0=z0)
        records.append(run_experiment(request, suite))
    return records
