"""
求解器設定
SolverConfig 收納 CALADIN-Prox / CADMM-Prox 的所有可調參數（γ, ρ, β, 容忍度, 更新策略）

- 使用 pydantic BaseModel 驗證並凍結設定
- 列舉值使用 CLI 的拼寫（例如 "caladin-prox"、"lin-upper"），
  也接受成員名稱（例如 "CALADIN_PROX"）
- 執行期設定（log 等級、是否上色）透過 .env / 環境變數載入，不影響數值結果
"""

import os
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# 載入環境變數
load_dotenv()


# ============================================================================
# 列舉
# ============================================================================

class Method(str, Enum):
    CADMM_PROX = "cadmm-prox"
    CALADIN_PROX = "caladin-prox"
    PLAIN_CADMM = "plain-cadmm"
    PLAIN_CALADIN = "plain-caladin"

    @property
    def is_plain(self) -> bool:
        return self in (Method.PLAIN_CADMM, Method.PLAIN_CALADIN)

    @property
    def is_aladin(self) -> bool:
        return self in (Method.CALADIN_PROX, Method.PLAIN_CALADIN)


class LocalUpdateStrategy(str, Enum):
    LINEARIZED_UPPER = "lin-upper"
    LINEARIZED_LOWER = "lin-lower"
    FIXED_POINT = "fixed-point"
    EXACT = "exact"


class HessianMode(str, Enum):
    SCALED_IDENTITY = "scaled-identity"
    USER_FIXED = "user-fixed"
    CURVATURE_REFRESH = "curvature-refresh"


class DualOrdering(str, Enum):
    # 先用 sweep 前的 (x, y) 更新 λ，再做局部更新（CADMM-Prox 預設）
    PRE_SWEEP = "pre-sweep"
    # 共識步驟之後才用 (x⁺, y⁺) 更新 λ（傳統 C-ADMM）
    POST_SWEEP = "post-sweep"


def _coerce_enum(enum_cls: type[Enum], value: Any) -> Any:
    if isinstance(value, str):
        key = value.strip()
        for member in enum_cls:
            if key == member.value or key.upper().replace("-", "_") == member.name:
                return member
    return value


# ============================================================================
# SolverConfig
# ============================================================================

class SolverConfig(BaseModel):
    """所有可調參數；預設值同時列在 CLI 的 --help"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma: float = Field(1.0, gt=0.0, description="上層近端項權重 γ")
    rho: float = Field(20.0, gt=0.0, description="增廣項 / B_i = ρI 的 ρ")
    beta: float = Field(0.0, ge=0.0, description="共識 QP 的 y 正則化 β")
    sigma_margin: float = Field(1e-8, ge=0.0, description="σ 更新的嚴格性邊界")
    eps_z: float = Field(1e-14, gt=0.0, description="停止條件 ‖z⁺−z‖² ≤ eps_z")
    stopping_window: int = Field(1, ge=1, description="停止條件需連續成立的次數")
    max_outer: int = Field(500, ge=1)
    max_lower_sweeps: int = Field(200, ge=1)
    local_update_strategy: LocalUpdateStrategy = LocalUpdateStrategy.LINEARIZED_UPPER
    fixed_point_inner_iters: int = Field(5, ge=1)
    method: Method = Method.CALADIN_PROX
    hessian_mode: HessianMode = HessianMode.SCALED_IDENTITY
    dual_ordering: Optional[DualOrdering] = None
    kkt_tol: float = Field(1e-6, gt=0.0)
    seed: int = Field(0, ge=0, lt=2**64)
    max_workers: int = Field(1, ge=1)
    auto_gamma: bool = False
    hessians: Optional[list[list[list[float]]]] = None

    @field_validator("local_update_strategy", mode="before")
    @classmethod
    def _strategy(cls, value: Any) -> Any:
        return _coerce_enum(LocalUpdateStrategy, value)

    @field_validator("method", mode="before")
    @classmethod
    def _method(cls, value: Any) -> Any:
        return _coerce_enum(Method, value)

    @field_validator("hessian_mode", mode="before")
    @classmethod
    def _hessian_mode(cls, value: Any) -> Any:
        return _coerce_enum(HessianMode, value)

    @field_validator("dual_ordering", mode="before")
    @classmethod
    def _dual_ordering(cls, value: Any) -> Any:
        return _coerce_enum(DualOrdering, value)

    @model_validator(mode="after")
    def _check_hessians(self) -> "SolverConfig":
        if self.hessian_mode == HessianMode.USER_FIXED and not self.hessians:
            raise ValueError("hessian_mode=user-fixed 需要提供 hessians")
        # C-ADMM 的 B_i 固定為 ρI
        if not self.method.is_aladin and self.hessian_mode != HessianMode.SCALED_IDENTITY:
            raise ValueError(f"{self.method.value} 只支援 hessian_mode=scaled-identity")
        return self

    @property
    def effective_gamma(self) -> float:
        """基準方法（plain）不使用近端項"""
        return 0.0 if self.method.is_plain else self.gamma

    @property
    def resolved_dual_ordering(self) -> DualOrdering:
        if self.dual_ordering is not None:
            return self.dual_ordering
        if self.method == Method.CADMM_PROX:
            return DualOrdering.PRE_SWEEP
        return DualOrdering.POST_SWEEP

    def with_gamma(self, gamma: float) -> "SolverConfig":
        """回傳只替換 γ 的新設定（γ 估計 使用）"""
        return self.model_copy(update={"gamma": float(gamma)})

    @property
    def tol_return(self) -> float:
        """擾動重啟後視為「回到原點」的距離"""
        return 10.0 * self.eps_z ** 0.5

    def snapshot_items(self) -> list[tuple[str, Any]]:
        """依欄位順序輸出 (key, value)，供 config_snapshot 使用"""
        items = []
        for key in type(self).model_fields:
            value = getattr(self, key)
            if isinstance(value, Enum):
                value = value.value
            items.append((key, value))
        return items


# ============================================================================
# 執行期設定（.env）
# ============================================================================

@dataclass(frozen=True)
class RuntimeSettings:
    log_level: str = "WARNING"
    color: bool = True


def load_runtime_settings() -> RuntimeSettings:
    """從環境變數讀取 BILEVEL_LOG_LEVEL / BILEVEL_COLOR"""
    return RuntimeSettings(
        log_level=os.getenv("BILEVEL_LOG_LEVEL", "WARNING").upper(),
        color=os.getenv("BILEVEL_COLOR", "1").lower() not in ("0", "false", "no"),
    )
