"""
命令列介面

    python main.py run      --suite "quadratic:a=1,3;c=0,4" --method caladin-prox --out runs/q
    python main.py validate --suite "doublewell:d=0,0,0"
    python main.py classify --suite "doublewell:d=0,0,0" --z-star 0 --trials 8
    python main.py compare  --suite "quadratic:a=1,3;c=0,4" --methods plain-cadmm,cadmm-prox --out runs/cmp

Exit code：
    0  CONVERGED / LOWER_STALLED_AT_OPTIMUM
    1  設定、套件或執行期錯誤（錯誤 JSON 輸出到 stderr）
    2  MAX_OUTER
    3  監控失敗或 oracle 驗證失敗
"""

import argparse
import json
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Optional, Sequence

from consensus_solver.diagnostics import validate_oracles
from consensus_solver.globalize import DEFAULT_PERTURB_SCALES, classify_critical_point
from problem_suite import check_lower_bound, parse_suite_spec, sample_points
from shared.config import HessianMode, LocalUpdateStrategy, Method, SolverConfig
from shared.errors import ConfigError, OracleFailureError, OracleMismatchError, SolverError
from shared.solver_logger import SolverLogger

from .records import RESULT_FILE, SNAPSHOT_FILE, SUMMARY_COLUMNS, SUMMARY_FILE, summary_rows, write_summary
from .runner import (
    EXIT_ERROR,
    EXIT_MONITOR,
    EXIT_OK,
    RunRequest,
    exit_code_for,
    monitors_failed,
    run_comparison,
    run_experiment,
)

# CLI 旗標 → SolverConfig 欄位
_OVERRIDES = (
    ("method", "method"),
    ("gamma", "gamma"),
    ("rho", "rho"),
    ("beta", "beta"),
    ("eps_z", "eps_z"),
    ("max_outer", "max_outer"),
    ("max_lower", "max_lower_sweeps"),
    ("local_update", "local_update_strategy"),
    ("hessian_mode", "hessian_mode"),
    ("seed", "seed"),
    ("workers", "max_workers"),
    ("auto_gamma", "auto_gamma"),
)

# 寫在 config 檔中、但不屬於 SolverConfig 的鍵
_RUN_KEYS = ("suite", "z0", "via_protocol")


def _default(name: str):
    return SolverConfig.model_fields[name].default


def _floats(text: str, flag: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as e:
        raise ConfigError(f"{flag} 需要以逗號分隔的數字：{text!r}") from e


def _read_config_file(path: Path) -> dict:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"找不到設定檔：{path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"設定檔格式錯誤：{path}：{e}") from e


def load_request(args: argparse.Namespace, config_path: Optional[Path] = None) -> RunRequest:
    """合併設定檔與命令列旗標（旗標優先）"""
    path = config_path or getattr(args, "config", None)
    data = _read_config_file(path) if path else {}
    run_values = {key: data.pop(key) for key in _RUN_KEYS if key in data}

    for dest, field_name in _OVERRIDES:
        value = getattr(args, dest, None)
        if value is not None:
            data[field_name] = value

    suite_spec = getattr(args, "suite", None) or run_values.get("suite")
    if not suite_spec:
        raise ConfigError("需要 --suite 或設定檔中的 suite")
    z0 = run_values.get("z0")
    if getattr(args, "z0", None):
        z0 = _floats(args.z0, "--z0")
    via_protocol = bool(getattr(args, "via_protocol", None) or run_values.get("via_protocol", False))

    try:
        config = SolverConfig(**data)
        z0 = None if z0 is None else tuple(float(v) for v in z0)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"設定無效：{e}") from e
    return RunRequest(suite_spec=str(suite_spec), config=config, z0=z0, via_protocol=via_protocol)


def _print_json(payload: dict, stream=None) -> None:
    print(json.dumps(payload, ensure_ascii=False, indent=2, default=str), file=stream or sys.stdout)


# ============================================================================
# 子命令
# ============================================================================

def cmd_run(args: argparse.Namespace) -> int:
    request = load_request(args)
    record = run_experiment(request)
    out_dir = Path(args.out) if args.out else Path("runs") / record.run_id
    record.write(out_dir)
    code = exit_code_for(record)
    _print_json(
        {
            "run_id": record.run_id,
            "status": record.result.status.value,
            "z_star": record.result.z_star.tolist(),
            "outer_iterations": record.result.outer_iterations,
            "monitors_failed": monitors_failed(record.verdicts),
            "out": str(out_dir),
            "exit_code": code,
        }
    )
    return code


def cmd_validate(args: argparse.Namespace) -> int:
    suite = parse_suite_spec(args.suite)
    points = sample_points(suite, count=args.samples, seed=args.seed)
    reports = [validate_oracles(agent, points).to_dict() for agent in suite.agents]
    bound_ok = check_lower_bound(suite, points)
    _print_json({"suite": suite.to_dict(), "agents": reports, "lower_bound_ok": bound_ok})
    if not bound_ok:
        SolverLogger.error(f"{suite.name} 的 lower_bound 在取樣點被違反")
        return EXIT_MONITOR
    return EXIT_OK


def cmd_classify(args: argparse.Namespace) -> int:
    if args.run:
        run_dir = Path(args.run)
        request = load_request(args, run_dir / SNAPSHOT_FILE)
        try:
            stored = json.loads((run_dir / RESULT_FILE).read_text(encoding="utf-8"))
            z_star = stored["result"]["z_star"]
        except (OSError, KeyError, ValueError) as e:
            raise ConfigError(f"無法讀取 {run_dir / RESULT_FILE}：{e}") from e
    else:
        if not args.z_star:
            raise ConfigError("classify 需要 --z-star 或 --run")
        request = load_request(args)
        z_star = _floats(args.z_star, "--z-star")

    suite = parse_suite_spec(request.suite_spec)
    scales = _floats(args.scales, "--scales")
    verdict = classify_critical_point(suite.agents, request.config, z_star, args.trials, scales)
    _print_json({"suite": request.suite_spec, "z_star": list(z_star), "verdict": verdict.to_dict()})
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    names = [m.strip() for m in (args.methods or "").split(",") if m.strip()]
    try:
        methods = [Method(name) for name in names]
    except ValueError as e:
        raise ConfigError(f"未知的方法：{e}") from e
    request = load_request(args)
    records = run_comparison(request.suite_spec, request.config, methods, request.z0)

    out_dir = Path(args.out) if args.out else Path("runs") / "compare"
    for record in records:
        record.write(out_dir / record.method)
    write_summary(records, out_dir / SUMMARY_FILE)

    rows = [list(SUMMARY_COLUMNS)] + summary_rows(records)
    widths = [max(len(row[i]) for row in rows) for i in range(len(SUMMARY_COLUMNS))]
    for row in rows:
        print("  ".join(cell.ljust(width) for cell, width in zip(row, widths)))

    if any(monitors_failed(r.verdicts) for r in records):
        return EXIT_MONITOR
    return EXIT_OK


# ============================================================================
# argparse
# ============================================================================

# 無效的 enum 值由 SolverConfig 拒絕（CONFIG_ERROR，exit 1）
def _choices(enum_cls) -> str:
    return " / ".join(member.value for member in enum_cls)


def _solver_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("solver")
    group.add_argument("--config", type=Path, help="TOML 設定檔（鍵名同 SolverConfig 欄位，另可含 suite / z0 / via_protocol）")
    group.add_argument("--suite", help="套件，例如 'quadratic:a=1,3;c=0,4'")
    group.add_argument("--method", help=f"{_choices(Method)}；預設 {_default('method').value}")
    group.add_argument("--gamma", type=float, help=f"上層近端權重 γ，預設 {_default('gamma')}")
    group.add_argument("--rho", type=float, help=f"ρ，預設 {_default('rho')}")
    group.add_argument("--beta", type=float, help=f"共識 QP 的 β，預設 {_default('beta')}")
    group.add_argument("--eps-z", dest="eps_z", type=float, help=f"停止門檻，預設 {_default('eps_z')}")
    group.add_argument("--max-outer", dest="max_outer", type=int, help=f"預設 {_default('max_outer')}")
    group.add_argument("--max-lower", dest="max_lower", type=int, help=f"每個 z 的 sweep 上限，預設 {_default('max_lower_sweeps')}")
    group.add_argument(
        "--local-update",
        dest="local_update",
        help=f"{_choices(LocalUpdateStrategy)}；預設 {_default('local_update_strategy').value}",
    )
    group.add_argument(
        "--hessian-mode",
        dest="hessian_mode",
        help=f"{_choices(HessianMode)}；預設 {_default('hessian_mode').value}",
    )
    group.add_argument("--seed", type=int, help=f"64-bit seed，預設 {_default('seed')}")
    group.add_argument("--workers", type=int, help=f"agent 平行執行緒數，預設 {_default('max_workers')}")
    group.add_argument("--auto-gamma", dest="auto_gamma", action="store_true", default=None, help="從 z0 的曲率估計 γ")
    group.add_argument("--z0", help="初始點（逗號分隔），預設為 0 向量")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bilevel-consensus", description="雙層全域化共識求解器")
    sub = parser.add_subparsers(dest="command", required=True)
    solver = _solver_flags()

    run = sub.add_parser("run", parents=[solver], help="執行一次實驗並寫出 trace / result / snapshot")
    run.add_argument("--via-protocol", dest="via_protocol", action="store_true", default=None, help="經過 simnet 訊息協定執行")
    run.add_argument("--out", help="輸出目錄，預設 runs/<run_id>")
    run.set_defaults(handler=cmd_run)

    validate = sub.add_parser("validate", help="以中央差分驗證 subgradient oracle")
    validate.add_argument("--suite", required=True)
    validate.add_argument("--samples", type=int, default=20, help="每個 agent 的取樣點數，預設 20")
    validate.add_argument("--seed", type=int, default=0)
    validate.set_defaults(handler=cmd_validate)

    classify = sub.add_parser("classify", parents=[solver], help="以擾動重啟判斷極限點（啟發式）")
    classify.add_argument("--z-star", dest="z_star", help="要判斷的點（逗號分隔）")
    classify.add_argument("--run", help="讀取某次 run 的輸出目錄（z_star 與 config_snapshot）")
    classify.add_argument("--trials", type=int, default=8, help="隨機方向數，預設 8")
    classify.add_argument(
        "--scales",
        default=",".join(repr(s) for s in DEFAULT_PERTURB_SCALES),
        help="擾動大小（逗號分隔）",
    )
    classify.set_defaults(handler=cmd_classify)

    compare = sub.add_parser("compare", parents=[solver], help="相同套件下比較多個方法")
    compare.add_argument("--methods", default="", help="逗號分隔，至少兩個")
    compare.add_argument("--out", help="輸出目錄，預設 runs/compare")
    compare.set_defaults(handler=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (OracleMismatchError, OracleFailureError) as e:
        _print_json(e.to_dict(), sys.stderr)
        return EXIT_MONITOR
    except SolverError as e:
        _print_json(e.to_dict(), sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
