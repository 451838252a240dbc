"""
套件名稱解析
CLI 以 "名稱:key=v1,v2;key=..." 指定套件，例如

    quadratic:a=1,3;c=0,4          c 的向量分量以 / 分隔（c=0/1,4/5）
    doublewell:d=0,0,0
    lasso:a=1;b=0.3;mu=1           每個 agent 一個 1×1 的 A_i
    lasso:agents=2;dim=3;rows=5;mu=0.1;seed=0   隨機產生
    broken
"""

from dataclasses import replace
from typing import Callable, Dict

import numpy as np

from shared.errors import SuiteError

from .suites import (
    SuiteInstance,
    broken_suite,
    double_well_suite,
    lasso_consensus_suite,
    quadratic_suite,
    random_lasso_suite,
)


def _parse_params(body: str) -> Dict[str, str]:
    params: Dict[str, str] = {}
    for item in filter(None, (part.strip() for part in body.split(";"))):
        if "=" not in item:
            raise SuiteError(f"參數格式錯誤：{item!r}（需要 key=value）")
        key, value = item.split("=", 1)
        params[key.strip()] = value.strip()
    return params


def _floats(text: str, key: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise SuiteError(f"{key} 需要以逗號分隔的數字：{text!r}") from e


def _require(params: Dict[str, str], *keys: str) -> None:
    missing = [k for k in keys if k not in params]
    if missing:
        raise SuiteError(f"缺少參數：{', '.join(missing)}")


def _build_quadratic(params: Dict[str, str]) -> SuiteInstance:
    _require(params, "a", "c")
    centers = [_floats(chunk.replace("/", ","), "c") for chunk in params["c"].split(",")]
    return quadratic_suite(_floats(params["a"], "a"), centers)


def _build_double_well(params: Dict[str, str]) -> SuiteInstance:
    _require(params, "d")
    return double_well_suite(_floats(params["d"], "d"))


def _build_lasso(params: Dict[str, str]) -> SuiteInstance:
    mu = float(params.get("mu", "0"))
    if "seed" in params:
        try:
            return random_lasso_suite(
                n_agents=int(params.get("agents", "2")),
                dim=int(params.get("dim", "3")),
                rows=int(params.get("rows", "5")),
                mu=mu,
                seed=int(params["seed"]),
            )
        except ValueError as e:
            raise SuiteError(f"lasso 參數格式錯誤：{e}") from e
    _require(params, "a", "b")
    a_vals = _floats(params["a"], "a")
    b_vals = _floats(params["b"], "b")
    return lasso_consensus_suite([np.array([[a]]) for a in a_vals], [np.array([b]) for b in b_vals], mu)


def _build_broken(params: Dict[str, str]) -> SuiteInstance:
    return broken_suite()


# 套件註冊表（名稱 → builder）
SUITE_REGISTRY: Dict[str, Callable[[Dict[str, str]], SuiteInstance]] = {
    "quadratic": _build_quadratic,
    "doublewell": _build_double_well,
    "lasso": _build_lasso,
    "broken": _build_broken,
}


def parse_suite_spec(spec: str) -> SuiteInstance:
    """解析 "名稱:參數" 並建立套件；未知名稱或格式錯誤時拋出 SuiteError"""
    if not spec or not spec.strip():
        raise SuiteError("suite spec 不可為空")
    name, _, body = spec.strip().partition(":")
    builder = SUITE_REGISTRY.get(name.strip().lower())
    if builder is None:
        raise SuiteError(
            f"未知的套件：{name!r}",
            {"available": sorted(SUITE_REGISTRY)},
        )
    try:
        suite = builder(_parse_params(body))
    except ValueError as e:
        raise SuiteError(f"{name} 參數格式錯誤：{e}") from e
    return replace(suite, spec=spec.strip())
