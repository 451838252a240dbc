"""
雙層全域化共識求解器
merit / lower / globalize / diagnostics 四個模組
"""

from .diagnostics import (
    ReferenceSolution,
    ReferenceSource,
    consensus_kkt_residual,
    kkt_residual,
    lower_kkt_residual,
    lower_stationarity,
    lyapunov,
    lyapunov_decrease_check,
    telescoping_monitor,
    validate_oracles,
)
from .globalize import (
    CriticalPointVerdict,
    OuterResult,
    OuterStatus,
    VerdictLabel,
    classify_critical_point,
    solve,
)
from .lower import SweepReport, run_lower, sweep
from .merit import MeritBreakdown, merit, proximal_objective

__all__ = [
    "CriticalPointVerdict",
    "MeritBreakdown",
    "OuterResult",
    "OuterStatus",
    "ReferenceSolution",
    "ReferenceSource",
    "SweepReport",
    "VerdictLabel",
    "classify_critical_point",
    "consensus_kkt_residual",
    "kkt_residual",
    "lower_kkt_residual",
    "lower_stationarity",
    "lyapunov",
    "lyapunov_decrease_check",
    "merit",
    "proximal_objective",
    "run_lower",
    "solve",
    "sweep",
    "telescoping_monitor",
    "validate_oracles",
]
