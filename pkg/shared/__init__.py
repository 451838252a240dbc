"""
共用模組
核心型別、線性代數、設定、錯誤與 logger
"""

from .config import (
    DualOrdering,
    HessianMode,
    LocalUpdateStrategy,
    Method,
    SolverConfig,
)
from .core import (
    AgentProblem,
    HessianApprox,
    LowerState,
    ScaledIdentity,
    SpdMatrix,
    UpperState,
    as_vector,
    fixed_order_sum,
    project_spd,
    spd_solve,
)
from .errors import SolverError
from .solver_logger import SolverLogger, logger

__all__ = [
    "AgentProblem",
    "DualOrdering",
    "HessianApprox",
    "HessianMode",
    "LocalUpdateStrategy",
    "LowerState",
    "Method",
    "ScaledIdentity",
    "SolverConfig",
    "SolverError",
    "SolverLogger",
    "SpdMatrix",
    "UpperState",
    "as_vector",
    "fixed_order_sum",
    "logger",
    "project_spd",
    "spd_solve",
]
