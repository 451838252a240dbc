"""SolverConfig 與執行期設定"""

import pytest
from pydantic import ValidationError

from shared.config import (
    DualOrdering,
    HessianMode,
    LocalUpdateStrategy,
    Method,
    SolverConfig,
    load_runtime_settings,
)


def test_defaults():
    config = SolverConfig()
    assert config.gamma == 1.0
    assert config.rho == 20.0
    assert config.beta == 0.0
    assert config.eps_z == 1e-14
    assert config.method == Method.CALADIN_PROX
    assert config.local_update_strategy == LocalUpdateStrategy.LINEARIZED_UPPER
    assert config.hessian_mode == HessianMode.SCALED_IDENTITY


@pytest.mark.parametrize("spelling", ["caladin-prox", "CALADIN_PROX", "caladin_prox"])
def test_method_spellings(spelling):
    assert SolverConfig(method=spelling).method == Method.CALADIN_PROX


@pytest.mark.parametrize(
    "overrides",
    [
        {"gamma": 0.0},
        {"rho": -1.0},
        {"beta": -0.1},
        {"eps_z": 0.0},
        {"max_outer": 0},
        {"fixed_point_inner_iters": 0},
        {"unknown_key": 1},
        {"method": "newton"},
    ],
)
def test_invalid_values_rejected(overrides):
    with pytest.raises(ValidationError):
        SolverConfig(**overrides)


def test_user_fixed_requires_hessians():
    with pytest.raises(ValidationError):
        SolverConfig(hessian_mode="user-fixed")
    config = SolverConfig(hessian_mode="user-fixed", hessians=[[[2.0]]])
    assert config.hessians == [[[2.0]]]


def test_admm_only_scaled_identity():
    with pytest.raises(ValidationError):
        SolverConfig(method="cadmm-prox", hessian_mode="curvature-refresh")


def test_effective_gamma_and_dual_ordering():
    assert SolverConfig(method="plain-cadmm", gamma=3.0).effective_gamma == 0.0
    assert SolverConfig(method="cadmm-prox", gamma=3.0).effective_gamma == 3.0
    assert SolverConfig(method="cadmm-prox").resolved_dual_ordering == DualOrdering.PRE_SWEEP
    assert SolverConfig(method="plain-cadmm").resolved_dual_ordering == DualOrdering.POST_SWEEP
    override = SolverConfig(method="cadmm-prox", dual_ordering="post-sweep")
    assert override.resolved_dual_ordering == DualOrdering.POST_SWEEP


def test_config_is_frozen_and_with_gamma_copies():
    config = SolverConfig()
    with pytest.raises(ValidationError):
        config.gamma = 2.0
    updated = config.with_gamma(8.0)
    assert updated.gamma == 8.0
    assert config.gamma == 1.0


def test_snapshot_items_follow_field_order():
    items = SolverConfig(method="plain-caladin").snapshot_items()
    keys = [k for k, _ in items]
    assert keys == list(SolverConfig.model_fields)
    assert dict(items)["method"] == "plain-caladin"


def test_tol_return():
    assert SolverConfig(eps_z=1e-14).tol_return == pytest.approx(1e-6)


def test_runtime_settings_from_env(monkeypatch):
    monkeypatch.setenv("BILEVEL_LOG_LEVEL", "debug")
    monkeypatch.setenv("BILEVEL_COLOR", "0")
    settings = load_runtime_settings()
    assert settings.log_level == "DEBUG"
    assert settings.color is False
