"""
內建問題套件
每個套件提供 agent oracle、凸性標籤、下界，以及可用時的解析最佳解

| 套件                  | f_i(x)                           | 凸性                |
|-----------------------|----------------------------------|---------------------|
| quadratic_suite       | ½a_i‖x − c_i‖²                   | STRONGLY_CONVEX     |
| double_well_suite     | (x² − 1)² + d_i·x（純量）        | NONCONVEX_SMOOTH    |
| lasso_consensus_suite | ½‖A_i x − b_i‖² + μ‖x‖₁          | CONVEX              |
| broken_suite          | x²，但 subgradient 永遠回傳 0    | 負面對照            |

exact_local_solve 的簽名為 (λ, y, z, B, γ) ↦ argmin_x f_i(x) + (γ/2)‖x−z‖² + λᵀx + ½‖x−y‖²_B
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from consensus_solver.diagnostics import ReferenceSolution, ReferenceSource
from consensus_solver.merit import total_objective
from shared.core import AgentProblem, HessianApprox, as_vector
from shared.errors import SuiteError

CD_MAX_SWEEPS = 10_000
CD_TOL = 1e-15


class ConvexityTag(str, Enum):
    STRONGLY_CONVEX = "STRONGLY_CONVEX"
    CONVEX = "CONVEX"
    NONCONVEX_SMOOTH = "NONCONVEX_SMOOTH"
    NONCONVEX_NONSMOOTH = "NONCONVEX_NONSMOOTH"


@dataclass(frozen=True)
class SuiteInstance:
    """一組 agent 問題與其參考資料

    lower_reference(z, γ) 回傳固定 z 下層問題的解析 KKT 點（只有二次套件提供）。
    scalar_value / scalar_derivative 是純量套件的向量化 Σf 與 Σf′，給 grid oracle 使用。
    """

    name: str
    agents: tuple
    convexity_tag: ConvexityTag
    lower_bound: float
    analytic_optimum: Optional[np.ndarray] = None
    spec: str = ""
    lower_reference: Optional[Callable[[np.ndarray, float], ReferenceSolution]] = None
    scalar_value: Optional[Callable[[np.ndarray], np.ndarray]] = None
    scalar_derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def dim(self) -> int:
        return self.agents[0].dim

    @property
    def is_convex(self) -> bool:
        return self.convexity_tag in (ConvexityTag.STRONGLY_CONVEX, ConvexityTag.CONVEX)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "spec": self.spec,
            "n_agents": self.n_agents,
            "dim": self.dim,
            "convexity_tag": self.convexity_tag.value,
            "lower_bound": self.lower_bound,
            "analytic_optimum": None if self.analytic_optimum is None else self.analytic_optimum.tolist(),
        }


def _as_point_list(values: Sequence, n_agents: int, name: str) -> list:
    points = [as_vector(v, f"{name}[{i}]") for i, v in enumerate(values)]
    if len(points) != n_agents:
        raise SuiteError(f"{name} 有 {len(points)} 個元素，預期 {n_agents}")
    dims = {p.shape[0] for p in points}
    if len(dims) != 1:
        raise SuiteError(f"{name} 的維度不一致：{sorted(dims)}")
    return points


def _b_entry(b: HessianApprox) -> float:
    return float(b.dense(1)[0, 0])


# ============================================================================
# 二次套件
# ============================================================================

def _quadratic_agent(index: int, a_i: float, c_i: np.ndarray) -> AgentProblem:
    def value(x: np.ndarray) -> float:
        diff = x - c_i
        return 0.5 * a_i * float(np.dot(diff, diff))

    def subgradient(x: np.ndarray) -> np.ndarray:
        return a_i * (x - c_i)

    def exact_local_solve(lam, y, z, b: HessianApprox, gamma: float) -> np.ndarray:
        # ((a_i + γ)I + B) x = a_i c_i + γz − λ + B y
        rhs = as_vector(a_i * c_i + gamma * z - lam + b.matvec(y), "rhs")
        return b.shifted(a_i + gamma).solve(rhs)

    return AgentProblem(
        dim=c_i.shape[0],
        value=value,
        subgradient=subgradient,
        exact_local_solve=exact_local_solve,
        curvature_hint=a_i,
        lower_bound=0.0,
        name=f"quadratic[{index}]",
    )


def quadratic_suite(a: Sequence[float], c: Sequence) -> SuiteInstance:
    """f_i(x) = ½a_i‖x − c_i‖²，最佳解 Σa_i c_i / Σa_i"""
    weights = [float(v) for v in a]
    if not weights:
        raise SuiteError("quadratic_suite 至少需要一個 agent")
    if any((not np.isfinite(w)) or w <= 0.0 for w in weights):
        raise SuiteError(f"a_i 必須為正數：{weights}")
    centers = _as_point_list(c, len(weights), "c")

    weighted = np.zeros_like(centers[0])
    total_weight = 0.0
    for w, center in zip(weights, centers):
        weighted = weighted + w * center
        total_weight = total_weight + w
    optimum = as_vector(weighted / total_weight, "optimum")

    def lower_reference(z: np.ndarray, gamma: float) -> ReferenceSolution:
        # y* = (Σa_i c_i + Nγz) / (Σa_i + Nγ)，λ_i* = −∇F_i^z(y*)
        n_agents = len(weights)
        y_star = as_vector((weighted + n_agents * gamma * z) / (total_weight + n_agents * gamma), "y*")
        lambda_star = tuple(
            as_vector(-(w * (y_star - center) + gamma * (y_star - z)), "λ*")
            for w, center in zip(weights, centers)
        )
        return ReferenceSolution(y_star=y_star, lambda_star=lambda_star, source=ReferenceSource.ANALYTIC)

    scalar_value = scalar_derivative = None
    if centers[0].shape[0] == 1:
        pairs = [(w, float(center[0])) for w, center in zip(weights, centers)]

        def scalar_value(xs: np.ndarray) -> np.ndarray:
            return sum(0.5 * w * (xs - ci) ** 2 for w, ci in pairs)

        def scalar_derivative(xs: np.ndarray) -> np.ndarray:
            return sum(w * (xs - ci) for w, ci in pairs)

    return SuiteInstance(
        name="quadratic",
        agents=tuple(_quadratic_agent(i, w, center) for i, (w, center) in enumerate(zip(weights, centers))),
        convexity_tag=ConvexityTag.STRONGLY_CONVEX,
        lower_bound=0.0,
        analytic_optimum=optimum,
        lower_reference=lower_reference,
        scalar_value=scalar_value,
        scalar_derivative=scalar_derivative,
        metadata={"a": weights, "c": [center.tolist() for center in centers]},
    )


# ============================================================================
# 雙井套件
# ============================================================================

def _real_roots(coefficients: Sequence[float]) -> list:
    roots = np.roots(coefficients)
    return [float(r.real) for r in roots if abs(r.imag) <= 1e-9 * (1.0 + abs(r.real))]


def _double_well_agent(index: int, d_i: float) -> AgentProblem:
    def value(x: np.ndarray) -> float:
        t = float(x[0])
        return (t * t - 1.0) ** 2 + d_i * t

    def subgradient(x: np.ndarray) -> np.ndarray:
        t = float(x[0])
        return np.array([4.0 * t * (t * t - 1.0) + d_i])

    def exact_local_solve(lam, y, z, b: HessianApprox, gamma: float) -> np.ndarray:
        # 4x³ + (b + γ − 4)x + (d − γz + λ − b·y) = 0，取目標值最小的實根
        b_val = _b_entry(b)
        const = d_i - gamma * float(z[0]) + float(lam[0]) - b_val * float(y[0])
        slope = b_val + gamma - 4.0

        def objective(t: float) -> float:
            return (
                (t * t - 1.0) ** 2 + d_i * t + 0.5 * gamma * (t - float(z[0])) ** 2
                + float(lam[0]) * t + 0.5 * b_val * (t - float(y[0])) ** 2
            )

        candidates = []
        for root in _real_roots([4.0, 0.0, slope, const]):
            for _ in range(2):
                derivative = 12.0 * root * root + slope
                if derivative == 0.0:
                    break
                root = root - (4.0 * root ** 3 + slope * root + const) / derivative
            candidates.append((objective(root), root))
        best_value = min(v for v, _ in candidates)
        ties = [r for v, r in candidates if v - best_value <= 1e-15 * (1.0 + abs(best_value))]
        return np.array([min(ties)])

    return AgentProblem(
        dim=1,
        value=value,
        subgradient=subgradient,
        exact_local_solve=exact_local_solve,
        curvature_hint=lambda x: 12.0 * float(x[0]) ** 2 - 4.0,
        lower_bound=min((t * t - 1.0) ** 2 + d_i * t for t in _real_roots([4.0, 0.0, -4.0, d_i])),
        name=f"doublewell[{index}]",
    )


def double_well_suite(d: Sequence[float]) -> SuiteInstance:
    """f_i(x) = (x² − 1)² + d_i·x（純量）

    下界取 −2Σ|d_i| 與各 f_i 精確最小值總和中較小者。
    """
    tilts = [float(v) for v in d]
    if not tilts:
        raise SuiteError("double_well_suite 至少需要一個 agent")
    if not all(np.isfinite(t) for t in tilts):
        raise SuiteError(f"d_i 必須為有限值：{tilts}")
    agents = tuple(_double_well_agent(i, t) for i, t in enumerate(tilts))
    coarse = -2.0 * sum(abs(t) for t in tilts)
    exact = sum(agent.lower_bound for agent in agents)

    def scalar_value(xs: np.ndarray) -> np.ndarray:
        return sum((xs * xs - 1.0) ** 2 + t * xs for t in tilts)

    def scalar_derivative(xs: np.ndarray) -> np.ndarray:
        return sum(4.0 * xs * (xs * xs - 1.0) + t for t in tilts)

    return SuiteInstance(
        name="doublewell",
        agents=agents,
        convexity_tag=ConvexityTag.NONCONVEX_SMOOTH,
        lower_bound=min(coarse, exact),
        scalar_value=scalar_value,
        scalar_derivative=scalar_derivative,
        metadata={"d": tilts},
    )


# ============================================================================
# Lasso 共識套件
# ============================================================================

def soft_threshold(x, t: float):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _cd_lasso(quad: np.ndarray, lin: np.ndarray, mu: float, x0: np.ndarray) -> np.ndarray:
    """座標下降求 ½xᵀQx + qᵀx + μ‖x‖₁ 的最小值（Q 正定）"""
    x = np.array(x0, dtype=np.float64)
    diag = np.diag(quad)
    for _ in range(CD_MAX_SWEEPS):
        max_change = 0.0
        for j in range(x.shape[0]):
            old = x[j]
            residual = -(lin[j] + float(quad[j] @ x) - diag[j] * old)
            x[j] = soft_threshold(residual, mu) / diag[j]
            max_change = max(max_change, abs(x[j] - old))
        if max_change <= CD_TOL * (1.0 + float(np.max(np.abs(x)))):
            break
    return x


def _lasso_agent(index: int, a_mat: np.ndarray, b_vec: np.ndarray, mu: float) -> AgentProblem:
    gram = a_mat.T @ a_mat
    atb = a_mat.T @ b_vec
    n = a_mat.shape[1]

    def value(x: np.ndarray) -> float:
        r = a_mat @ x - b_vec
        return 0.5 * float(np.dot(r, r)) + mu * float(np.sum(np.abs(x)))

    def subgradient(x: np.ndarray) -> np.ndarray:
        smooth = gram @ x - atb
        # x_j = 0 時取次微分中範數最小的元素
        at_kink = smooth - np.clip(smooth, -mu, mu)
        return np.where(x != 0.0, smooth + mu * np.sign(x), at_kink)

    def exact_local_solve(lam, y, z, b: HessianApprox, gamma: float) -> np.ndarray:
        b_dense = b.dense(n)
        quad = gram + gamma * np.eye(n) + b_dense
        lin = -atb - gamma * z + lam - b_dense @ y
        return _cd_lasso(quad, lin, mu, y)

    return AgentProblem(
        dim=n,
        value=value,
        subgradient=subgradient,
        exact_local_solve=exact_local_solve,
        curvature_hint=gram,
        lower_bound=0.0,
        name=f"lasso[{index}]",
        kinks=(0.0,) if mu > 0.0 else (),
    )


def lasso_consensus_suite(a_mats: Sequence, b_vecs: Sequence, mu: float) -> SuiteInstance:
    """f_i(x) = ½‖A_i x − b_i‖² + μ‖x‖₁；μ = 0 且 ΣA_iᵀA_i 可逆時提供正規方程的解析解"""
    if mu < 0.0 or not np.isfinite(mu):
        raise SuiteError(f"μ 必須 ≥ 0，收到 {mu}")
    mats = [np.atleast_2d(np.array(a, dtype=np.float64)) for a in a_mats]
    vecs = [np.atleast_1d(np.array(b, dtype=np.float64)) for b in b_vecs]
    if not mats or len(mats) != len(vecs):
        raise SuiteError("A_i 與 b_i 的數量必須相同且至少一個")
    n = mats[0].shape[1]
    for i, (a_mat, b_vec) in enumerate(zip(mats, vecs)):
        if a_mat.shape[1] != n or a_mat.shape[0] != b_vec.shape[0]:
            raise SuiteError(f"agent {i} 的 A 為 {a_mat.shape}、b 為 {b_vec.shape}，形狀不相容")
        if not (np.all(np.isfinite(a_mat)) and np.all(np.isfinite(b_vec))):
            raise SuiteError(f"agent {i} 的資料含有 NaN 或 Inf")

    optimum = None
    if mu == 0.0:
        gram_sum = sum(a.T @ a for a in mats)
        if np.linalg.matrix_rank(gram_sum) == n:
            optimum = as_vector(np.linalg.solve(gram_sum, sum(a.T @ b for a, b in zip(mats, vecs))), "optimum")

    return SuiteInstance(
        name="lasso",
        agents=tuple(_lasso_agent(i, a, b, float(mu)) for i, (a, b) in enumerate(zip(mats, vecs))),
        convexity_tag=ConvexityTag.CONVEX,
        lower_bound=0.0,
        analytic_optimum=optimum,
        metadata={"mu": float(mu)},
    )


def random_lasso_suite(n_agents: int, dim: int, rows: int, mu: float, seed: int) -> SuiteInstance:
    """以 seed 產生 A_i ~ N(0,1)、b_i ~ N(0,1) 的 lasso 套件"""
    if min(n_agents, dim, rows) < 1:
        raise SuiteError("agents、dim、rows 都必須 ≥ 1")
    rng = np.random.default_rng(seed)
    mats = [rng.standard_normal((rows, dim)) for _ in range(n_agents)]
    vecs = [rng.standard_normal(rows) for _ in range(n_agents)]
    suite = lasso_consensus_suite(mats, vecs, mu)
    suite.metadata.update({"seed": seed, "rows": rows})
    return suite


# ============================================================================
# 負面對照
# ============================================================================

def broken_suite() -> SuiteInstance:
    """f(x) = x²，但 subgradient 永遠回傳 0；validate_oracles 應該失敗"""
    agent = AgentProblem(
        dim=1,
        value=lambda x: float(x[0]) ** 2,
        subgradient=lambda x: np.zeros(1),
        lower_bound=0.0,
        name="broken[0]",
    )
    return SuiteInstance(
        name="broken",
        agents=(agent,),
        convexity_tag=ConvexityTag.STRONGLY_CONVEX,
        lower_bound=0.0,
    )


# ============================================================================
# 共用檢查
# ============================================================================

def sample_points(suite: SuiteInstance, count: int = 20, seed: int = 0, radius: float = 2.0) -> list:
    """在 [−radius, radius]ⁿ 均勻取樣（seed 固定）"""
    rng = np.random.default_rng(seed)
    return [as_vector(rng.uniform(-radius, radius, suite.dim), "sample") for _ in range(count)]


def check_lower_bound(suite: SuiteInstance, points: Sequence) -> bool:
    """Σf_i 在所有取樣點都不低於 suite.lower_bound"""
    return all(
        total_objective(suite.agents, as_vector(p, "point")) >= suite.lower_bound for p in points
    )
