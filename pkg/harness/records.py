"""
實驗紀錄
TraceRecord（每次 sweep 一列）、RunRecord（一次執行）與檔案輸出

輸出檔案：
    trace.csv            第一行 "#schema=v1"，第二行為欄位名稱
    result.json          OuterResult + verdicts
    config_snapshot.toml 完整設定（可直接當 --config 重跑）

浮點數以 repr 輸出，相同設定重跑時 trace.csv 逐位元相同。
"""

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from consensus_solver.diagnostics import (
    ReferenceSolution,
    kkt_residual,
    lyapunov,
    lyapunov_decrease_check,
)
from consensus_solver.globalize import OuterResult, SweepEvent
from consensus_solver.lower import SweepReport, carry_lower_state, initial_lower_state
from shared.core import AgentProblem, LowerState

TRACE_SCHEMA = "v1"
TRACE_COLUMNS = (
    "outer_index",
    "sweep_index",
    "merit_total",
    "merit_smooth",
    "merit_penalty",
    "z_step_sq",
    "lyapunov",
    "local_descent_ok",
    "consensus_descent_ok",
    "max_kkt_residual",
    "sigma_max",
)

TRACE_FILE = "trace.csv"
RESULT_FILE = "result.json"
SNAPSHOT_FILE = "config_snapshot.toml"
SUMMARY_FILE = "summary.csv"


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


@dataclass(frozen=True)
class TraceRecord:
    """一次 sweep 的紀錄；merit 欄位為 Φ^{(z,y⁺)}(x⁺)"""

    outer_index: int
    sweep_index: int
    merit_total: float
    merit_smooth: float
    merit_penalty: float
    z_step_sq: float
    lyapunov: Optional[float]
    local_descent_ok: bool
    consensus_descent_ok: bool
    max_kkt_residual: float
    sigma_max: float

    def row(self) -> list:
        return [_fmt(getattr(self, name)) for name in TRACE_COLUMNS]


def _paired_state(report: SweepReport) -> LowerState:
    return replace(report.state_after, lam=report.lambda_plus)


class TraceRecorder:
    """SweepEvent observer：把每次 sweep 轉成 TraceRecord

    reference 不為 None 時，同時記錄每個 z-phase 的 Lyapunov 值。
    Lyapunov 取 (y⁺, λ⁺)：CADMM pre-sweep 存回 state 的是 sweep 前的 λ，這裡改用 report.lambda_plus。
    """

    def __init__(
        self,
        problems: Sequence[AgentProblem],
        gamma: float,
        reference: Optional[Callable[[np.ndarray, float], ReferenceSolution]] = None,
    ):
        self.problems = tuple(problems)
        self.gamma = gamma
        self.reference = reference
        self.records: list = []
        self.reports: list = []
        self._phases: list = []
        self._phase_index: Optional[int] = None
        self._ref: Optional[ReferenceSolution] = None
        self._last: Optional[LowerState] = None

    def __call__(self, event: SweepEvent) -> None:
        report = event.report
        value = None
        if self.reference is not None:
            if event.outer_index != self._phase_index:
                self._phase_index = event.outer_index
                self._ref = self.reference(event.z, self.gamma)
                hessians = report.state_after.hessians
                if self._last is None:
                    start = initial_lower_state(event.z, hessians)
                else:
                    start = carry_lower_state(self._last, hessians)
                self._phases.append((self._ref, [start]))
            paired = _paired_state(report)
            self._phases[-1][1].append(paired)
            self._last = paired
            value = lyapunov(paired, self._ref)

        state = report.state_after
        self.reports.append(report)
        self.records.append(
            TraceRecord(
                outer_index=event.outer_index,
                sweep_index=state.sweep_index,
                merit_total=report.merit_mid.total,
                merit_smooth=report.merit_mid.smooth_part,
                merit_penalty=report.merit_mid.penalty_part,
                z_step_sq=event.z_step_sq,
                lyapunov=value,
                local_descent_ok=report.local_descent_ok,
                consensus_descent_ok=report.consensus_all_ok,
                max_kkt_residual=kkt_residual(self.problems, state.y, report.lambda_plus, self.gamma, event.z),
                sigma_max=max(report.sigma_after),
            )
        )

    def lyapunov_checks(self, convex: bool = True) -> list:
        """每個 z-phase 一個 LyapunovCheck"""
        return [lyapunov_decrease_check(states, ref, convex=convex) for ref, states in self._phases]


def trace_csv(records: Sequence[TraceRecord]) -> str:
    buffer = io.StringIO()
    buffer.write(f"#schema={TRACE_SCHEMA}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for record in records:
        writer.writerow(record.row())
    return buffer.getvalue()


# ============================================================================
# config_snapshot
# ============================================================================

def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"無法輸出為 TOML：{type(value).__name__}")


def render_snapshot(items: Sequence[tuple]) -> str:
    """依順序輸出 key = value，值為 None 的欄位略過"""
    lines = [f"{key} = {_toml_value(value)}" for key, value in items if value is not None]
    return "\n".join(lines) + "\n"


def run_id_for(snapshot: str) -> str:
    return hashlib.sha256(snapshot.encode("utf-8")).hexdigest()[:12]


# ============================================================================
# RunRecord
# ============================================================================

@dataclass
class RunRecord:
    run_id: str
    config_snapshot: str
    trace: tuple
    result: OuterResult
    verdicts: dict = field(default_factory=dict)
    suite_spec: str = ""
    method: str = ""
    final_kkt_residual: float = 0.0

    def to_dict(self) -> dict:
        return {
            "status": "success",
            "run_id": self.run_id,
            "suite": self.suite_spec,
            "method": self.method,
            "result": self.result.to_dict(),
            "final_kkt_residual": self.final_kkt_residual,
            "verdicts": self.verdicts,
        }

    def write(self, out_dir: Path) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / TRACE_FILE).write_text(trace_csv(self.trace), encoding="utf-8")
        (out_dir / SNAPSHOT_FILE).write_text(self.config_snapshot, encoding="utf-8")
        (out_dir / RESULT_FILE).write_text(
            json.dumps(self.to_dict(), ensure_ascii=False, indent=2, default=str) + "\n",
            encoding="utf-8",
        )
        return out_dir


SUMMARY_COLUMNS = ("method", "status", "outer_iterations", "final_merit", "final_kkt_residual", "z_star")


def summary_rows(records: Sequence[RunRecord]) -> list:
    rows = []
    for record in records:
        result = record.result
        rows.append(
            [
                record.method,
                result.status.value,
                str(result.outer_iterations),
                repr(float(result.merit_trajectory[-1])),
                repr(float(record.final_kkt_residual)),
                " ".join(repr(float(v)) for v in result.z_star),
            ]
        )
    return rows


def write_summary(records: Sequence[RunRecord], path: Path) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    writer.writerows(summary_rows(records))
    Path(path).write_text(buffer.getvalue(), encoding="utf-8")
