"""
harness - 實驗執行、紀錄與命令列介面
"""

from .cli import build_parser, main
from .records import RunRecord, TraceRecord, TraceRecorder, trace_csv
from .runner import RunRequest, exit_code_for, run_comparison, run_experiment

__all__ = [
    "RunRecord",
    "RunRequest",
    "TraceRecord",
    "TraceRecorder",
    "build_parser",
    "exit_code_for",
    "main",
    "run_comparison",
    "run_experiment",
    "trace_csv",
]
