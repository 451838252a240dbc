"""
核心資料型別與小型稠密線性代數
提供所有模組共用的向量檢查、SPD 矩陣、固定順序加總與 agent/狀態型別

設計重點：
- 所有向量皆為唯讀的 float64 numpy 陣列，建構後不可變
- 跨 agent 的加總一律依 agent 編號順序進行，確保平行執行時結果逐位元一致
- B_i 可以是 ScaledIdentity（ρI 標記）或 SpdMatrix，兩者提供相同介面
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol, Sequence, Union

import numpy as np
from scipy import linalg

from .errors import (
    DimMismatchError,
    NonFiniteError,
    NonSpdError,
    OracleFailureError,
)

SYMMETRY_RTOL = 1e-12


# ============================================================================
# 向量工具
# ============================================================================

def as_vector(values: Any, name: str = "vector") -> np.ndarray:
    """轉換為唯讀的一維 float64 向量，並檢查有限性與維度"""
    arr = np.atleast_1d(np.array(values, dtype=np.float64))
    if arr.ndim != 1:
        raise DimMismatchError(f"{name} 必須是一維向量，收到 shape={arr.shape}")
    if arr.size == 0:
        raise DimMismatchError(f"{name} 維度必須大於 0")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} 含有 NaN 或 Inf", {"name": name})
    arr.setflags(write=False)
    return arr


def check_same_dim(vectors: Sequence[np.ndarray], name: str = "vectors") -> int:
    """確認所有向量維度一致，回傳共同維度"""
    if not vectors:
        raise DimMismatchError(f"{name} 不可為空")
    dim = vectors[0].shape[0]
    for idx, vec in enumerate(vectors):
        if vec.shape != (dim,):
            raise DimMismatchError(
                f"{name}[{idx}] 維度為 {vec.shape}，預期 ({dim},)",
                {"index": idx},
            )
    return dim


def fixed_order_sum(terms: Sequence[Any]) -> np.ndarray:
    """依 agent 編號順序加總向量

    不論各項由哪個 worker、以何種順序算出，加總順序固定為 0..N-1，
    因此結果在不同執行次數與執行緒數下逐位元相同。
    """
    if len(terms) == 0:
        raise DimMismatchError("fixed_order_sum 需要至少一個向量")
    vectors = [as_vector(t, f"terms[{i}]") for i, t in enumerate(terms)]
    check_same_dim(vectors, "terms")
    total = np.array(vectors[0], dtype=np.float64)
    for vec in vectors[1:]:
        total = total + vec
    return as_vector(total, "sum")


# ============================================================================
# Hessian 近似 B_i
# ============================================================================

class HessianApprox(Protocol):
    """B_i 的共同介面（ScaledIdentity 與 SpdMatrix 皆實作）"""

    def matvec(self, v: np.ndarray) -> np.ndarray: ...

    def solve(self, b: np.ndarray) -> np.ndarray: ...

    def quad(self, v: np.ndarray) -> float: ...

    def inv_quad(self, v: np.ndarray) -> float: ...

    def shifted(self, gamma: float) -> "HessianApprox": ...

    def dense(self, n: int) -> np.ndarray: ...


@dataclass(frozen=True)
class ScaledIdentity:
    """ρ·I 標記，C-ADMM 與 B_i = ρI 的 C-ALADIN 使用"""

    scale: float

    def __post_init__(self):
        if not np.isfinite(self.scale) or self.scale <= 0.0:
            raise NonSpdError(f"ScaledIdentity 需要正的係數，收到 {self.scale}")

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return as_vector(self.scale * v, "B·v")

    def solve(self, b: np.ndarray) -> np.ndarray:
        return as_vector(b / self.scale, "B⁻¹·b")

    def quad(self, v: np.ndarray) -> float:
        return float(self.scale * np.dot(v, v))

    def inv_quad(self, v: np.ndarray) -> float:
        return float(np.dot(v, v) / self.scale)

    def shifted(self, gamma: float) -> "ScaledIdentity":
        return ScaledIdentity(self.scale + gamma)

    def dense(self, n: int) -> np.ndarray:
        return self.scale * np.eye(n)


class SpdMatrix:
    """對稱正定矩陣，建構時完成 Cholesky 分解

    先取 (A+Aᵀ)/2；若 Cholesky 失敗則加上 μ_floor·I 再分解一次，
    μ_floor = 1e-8·(1 + trace/n)。仍失敗時拋出 NonSpdError。
    """

    def __init__(self, entries: Any):
        arr = np.array(entries, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
            raise DimMismatchError(f"SpdMatrix 需要 n×n 矩陣，收到 shape={arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("SpdMatrix 含有 NaN 或 Inf")
        scale = max(1.0, float(np.max(np.abs(arr))))
        if np.max(np.abs(arr - arr.T)) > SYMMETRY_RTOL * scale:
            raise NonSpdError("矩陣不對稱", {"asymmetry": float(np.max(np.abs(arr - arr.T)))})

        sym = 0.5 * (arr + arr.T)
        n = sym.shape[0]
        self.mu_floor = 1e-8 * (1.0 + abs(float(np.trace(sym))) / n)
        self.regularized = False
        try:
            factor = linalg.cho_factor(sym, lower=True, check_finite=False)
        except linalg.LinAlgError:
            sym = sym + self.mu_floor * np.eye(n)
            self.regularized = True
            try:
                factor = linalg.cho_factor(sym, lower=True, check_finite=False)
            except linalg.LinAlgError as e:
                raise NonSpdError(f"加入 μ_floor={self.mu_floor:.3e} 後仍非正定：{e}") from e

        sym.setflags(write=False)
        self.entries = sym
        self.n = n
        self._factor = factor
        self._shifted: dict[float, "SpdMatrix"] = {}

    def __repr__(self) -> str:
        return f"SpdMatrix(n={self.n}, regularized={self.regularized})"

    def _check(self, v: np.ndarray) -> None:
        if v.shape != (self.n,):
            raise DimMismatchError(f"向量維度 {v.shape} 與矩陣 {self.n}×{self.n} 不符")

    def matvec(self, v: np.ndarray) -> np.ndarray:
        self._check(v)
        return as_vector(self.entries @ v, "B·v")

    def solve(self, b: np.ndarray) -> np.ndarray:
        self._check(b)
        return as_vector(linalg.cho_solve(self._factor, b, check_finite=False), "B⁻¹·b")

    def quad(self, v: np.ndarray) -> float:
        self._check(v)
        return float(v @ self.entries @ v)

    def inv_quad(self, v: np.ndarray) -> float:
        return float(np.dot(v, self.solve(v)))

    def shifted(self, gamma: float) -> "SpdMatrix":
        # 每個 phase 的 γ 固定，分解結果重複使用
        key = float(gamma)
        if key not in self._shifted:
            self._shifted[key] = SpdMatrix(self.entries + key * np.eye(self.n))
        return self._shifted[key]

    def dense(self, n: int) -> np.ndarray:
        if n != self.n:
            raise DimMismatchError(f"要求 {n}×{n}，實際為 {self.n}×{self.n}")
        return np.array(self.entries)

    def min_eigenvalue(self) -> float:
        return float(linalg.eigvalsh(self.entries)[0])


def project_spd(entries: Any, floor: float) -> SpdMatrix:
    """將對稱矩陣的特徵值截到 floor 以上（曲率更新 B_i 使用）"""
    arr = np.atleast_2d(np.array(entries, dtype=np.float64))
    sym = 0.5 * (arr + arr.T)
    eigvals, eigvecs = linalg.eigh(sym)
    clipped = np.maximum(eigvals, floor)
    return SpdMatrix((eigvecs * clipped) @ eigvecs.T)


def sum_hessians(hessians: Sequence[HessianApprox], beta: float, n: int) -> HessianApprox:
    """計算 ΣB_i + βI（依 agent 順序），全部為 ScaledIdentity 時維持標記形式"""
    if all(isinstance(b, ScaledIdentity) for b in hessians):
        total = 0.0
        for b in hessians:
            total = total + b.scale
        return ScaledIdentity(total + beta)
    dense = np.zeros((n, n))
    for b in hessians:
        dense = dense + b.dense(n)
    return SpdMatrix(dense + beta * np.eye(n))


def spd_solve(a: Union[HessianApprox, Any], b: Any) -> np.ndarray:
    """解 A·u = b，A 為 SPD（陣列輸入會先經過 SpdMatrix 的對稱化與 floor 處理）"""
    rhs = as_vector(b, "b")
    matrix = a if isinstance(a, (ScaledIdentity, SpdMatrix)) else SpdMatrix(a)
    return matrix.solve(rhs)


# ============================================================================
# Agent 問題（oracle 組合）
# ============================================================================

ExactSolve = Callable[[np.ndarray, np.ndarray, np.ndarray, HessianApprox, float], np.ndarray]


@dataclass(frozen=True)
class AgentProblem:
    """單一 agent 的 oracle 組合

    exact_local_solve(λ, y, z, B, γ) 回傳
        argmin_x f_i(x) + (γ/2)‖x−z‖² + λᵀx + ½‖x−y‖²_B
    curvature_hint 可以是常數或 z ↦ ∇²f_i(z) 的函數
    """

    dim: int
    value: Callable[[np.ndarray], float]
    subgradient: Callable[[np.ndarray], Any]
    exact_local_solve: Optional[ExactSolve] = None
    curvature_hint: Optional[Union[float, Callable[[np.ndarray], Any]]] = None
    lower_bound: Optional[float] = None
    name: str = "agent"
    kinks: tuple = field(default_factory=tuple)

    def value_at(self, x: np.ndarray) -> float:
        """檢查過的函數值 f_i(x)"""
        try:
            val = float(self.value(x))
        except (ArithmeticError, ValueError) as e:
            raise OracleFailureError(f"{self.name} 的 value oracle 失敗：{e}") from e
        if not np.isfinite(val):
            raise OracleFailureError(f"{self.name} 的 value oracle 回傳非有限值", {"x": x.tolist()})
        return val

    def subgradient_at(self, x: np.ndarray) -> np.ndarray:
        """檢查過的次梯度 ∂f_i(x)"""
        try:
            raw = self.subgradient(x)
        except (ArithmeticError, ValueError) as e:
            raise OracleFailureError(f"{self.name} 的 subgradient oracle 失敗：{e}") from e
        grad = np.array(raw, dtype=np.float64).reshape(-1)
        if grad.shape != (self.dim,) or not np.all(np.isfinite(grad)):
            raise OracleFailureError(
                f"{self.name} 的 subgradient oracle 回傳無效結果",
                {"x": x.tolist(), "shape": list(grad.shape)},
            )
        return as_vector(grad, "subgradient")

    def curvature_at(self, z: np.ndarray) -> Optional[np.ndarray]:
        """曲率提示在 z 的 n×n 矩陣；沒有提示時回傳 None"""
        if self.curvature_hint is None:
            return None
        raw = self.curvature_hint(z) if callable(self.curvature_hint) else self.curvature_hint
        arr = np.array(raw, dtype=np.float64)
        if arr.ndim == 0:
            return float(arr) * np.eye(self.dim)
        return arr.reshape(self.dim, self.dim)


# ============================================================================
# 迭代狀態
# ============================================================================

@dataclass(frozen=True)
class LowerState:
    """下層一次 sweep 的迭代量 (x, y, λ, g, B)"""

    x: tuple
    y: np.ndarray
    lam: tuple
    g: tuple
    hessians: tuple
    sweep_index: int = 0

    def __post_init__(self):
        n_agents = len(self.x)
        if n_agents < 1:
            raise DimMismatchError("LowerState 至少需要一個 agent")
        if not (len(self.lam) == len(self.g) == len(self.hessians) == n_agents):
            raise DimMismatchError("x、λ、g、B 的 agent 數量不一致")
        check_same_dim([self.y, *self.x, *self.lam, *self.g], "LowerState vectors")

    @property
    def n_agents(self) -> int:
        return len(self.x)

    @property
    def dim(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class UpperState:
    """上層全域化狀態 (z, σ)"""

    z: np.ndarray
    sigma: tuple
    outer_index: int = 0
    merit_at_z: float = 0.0

    def __post_init__(self):
        if any((not np.isfinite(s)) or s < 0.0 for s in self.sigma):
            raise NonFiniteError("σ_i 必須是非負有限值", {"sigma": list(self.sigma)})
        if not np.isfinite(self.merit_at_z):
            raise NonFiniteError("merit_at_z 必須是有限值")
