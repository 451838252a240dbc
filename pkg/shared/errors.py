"""
共用錯誤定義
所有模組拋出的例外都繼承 SolverError，並帶有固定的錯誤代碼 (code)

CLI 與 simnet 依 code 決定 exit code 或錯誤訊息格式
"""

from typing import Any, Optional


class SolverError(Exception):
    """所有求解器錯誤的基底類別"""

    code = "SOLVER_ERROR"

    def __init__(self, message: str, details: Optional[dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> dict:
        """轉換為錯誤回應字典（CLI 輸出到 stderr 使用）"""
        payload = {
            "status": "error",
            "code": self.code,
            "error_message": self.message,
        }
        if self.details:
            payload["details"] = self.details
        return payload


# ============================================================================
# 線性代數 / 維度
# ============================================================================

class NonSpdError(SolverError):
    code = "NON_SPD"


class DimMismatchError(SolverError):
    code = "DIM_MISMATCH"


class NonFiniteError(SolverError):
    code = "NON_FINITE"


# ============================================================================
# Oracle 相關
# ============================================================================

class OracleFailureError(SolverError):
    code = "ORACLE_FAILURE"


class NoExactOracleError(SolverError):
    code = "NO_EXACT_ORACLE"


class OracleMismatchError(SolverError):
    code = "ORACLE_MISMATCH"


# ============================================================================
# 迭代流程
# ============================================================================

class DivergedError(SolverError):
    code = "DIVERGED"


class LowerStalledError(SolverError):
    code = "LOWER_STALLED"


class HypothesisViolationError(SolverError):
    code = "HYPOTHESIS_VIOLATION"


# ============================================================================
# 通訊協定 (simnet)
# ============================================================================

class MissingUploadError(SolverError):
    code = "MISSING_UPLOAD"


class DuplicateUploadError(SolverError):
    code = "DUPLICATE_UPLOAD"


class MalformedFrameError(SolverError):
    code = "MALFORMED_FRAME"


# ============================================================================
# 設定 / 問題套件
# ============================================================================

class ConfigError(SolverError):
    code = "CONFIG_ERROR"


class SuiteError(SolverError):
    code = "SUITE_ERROR"
