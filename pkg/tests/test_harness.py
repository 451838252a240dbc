"""harness：命令列、輸出檔案與 exit code"""

import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from consensus_solver.diagnostics import ReferenceSolution, ReferenceSource, lyapunov
from consensus_solver.globalize import OuterStatus, solve
from harness import RunRequest, exit_code_for, main, run_comparison, run_experiment, trace_csv
from harness.records import TRACE_COLUMNS, TraceRecorder, render_snapshot, run_id_for
from harness.runner import with_method
from shared.config import DualOrdering, Method, SolverConfig
from shared.errors import ConfigError

QUAD = "quadratic:a=1,3;c=0,4"
DOUBLE_WELL = "doublewell:d=0,0,0"


def _run(tmp_path, capsys, *flags, out="run"):
    code = main(["run", "--out", str(tmp_path / out), *flags])
    payload = json.loads(capsys.readouterr().out)
    return code, payload


def _trace_rows(path):
    lines = (path / "trace.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "#schema=v1"
    return list(csv.DictReader(lines[1:]))


# ============================================================================
# run
# ============================================================================

def test_run_quadratic(tmp_path, capsys):
    code, payload = _run(tmp_path, capsys, "--suite", QUAD, "--rho", "4")
    assert code == 0
    assert payload["status"] == "CONVERGED"
    assert payload["z_star"][0] == pytest.approx(3.0, abs=1e-6)

    out = tmp_path / "run"
    rows = _trace_rows(out)
    assert rows
    assert list(rows[0]) == list(TRACE_COLUMNS)
    result = json.loads((out / "result.json").read_text(encoding="utf-8"))
    assert result["result"]["status"] == "CONVERGED"
    assert result["verdicts"]["telescoping"] is True
    assert result["final_kkt_residual"] <= 1e-6
    assert 'suite = "quadratic:a=1,3;c=0,4"' in (out / "config_snapshot.toml").read_text(encoding="utf-8")


def test_run_double_well(tmp_path, capsys):
    code, payload = _run(tmp_path, capsys, "--suite", DOUBLE_WELL, "--z0", "0.9")
    assert code == 0
    assert payload["z_star"][0] == pytest.approx(1.0, abs=1e-4)


def test_run_reports_max_outer(tmp_path, capsys):
    code, payload = _run(tmp_path, capsys, "--suite", QUAD, "--max-outer", "1")
    assert code == 2
    assert payload["status"] == "MAX_OUTER"


def test_snapshot_rerun_is_bitwise_identical(tmp_path, capsys):
    code, first = _run(tmp_path, capsys, "--suite", DOUBLE_WELL, "--z0", "0.9", "--seed", "7", out="a")
    assert code == 0
    snapshot = tmp_path / "a" / "config_snapshot.toml"
    code, second = _run(tmp_path, capsys, "--config", str(snapshot), out="b")
    assert code == 0
    assert first["run_id"] == second["run_id"]
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    assert snapshot.read_bytes() == (tmp_path / "b" / "config_snapshot.toml").read_bytes()


def test_protocol_run_writes_same_trace(tmp_path, capsys):
    _run(tmp_path, capsys, "--suite", QUAD, "--method", "cadmm-prox", out="direct")
    _run(tmp_path, capsys, "--suite", QUAD, "--method", "cadmm-prox", "--via-protocol", out="protocol")
    direct = (tmp_path / "direct" / "trace.csv").read_bytes()
    assert direct == (tmp_path / "protocol" / "trace.csv").read_bytes()
    snapshot = (tmp_path / "protocol" / "config_snapshot.toml").read_text(encoding="utf-8")
    assert "via_protocol = true" in snapshot


def test_exact_run_records_lyapunov(tmp_path, capsys):
    _run(tmp_path, capsys, "--suite", QUAD, "--rho", "4", "--local-update", "exact")
    rows = _trace_rows(tmp_path / "run")
    assert all(row["lyapunov"] != "" for row in rows)
    result = json.loads((tmp_path / "run" / "result.json").read_text(encoding="utf-8"))
    assert result["verdicts"]["lyapunov"] is True


def test_trace_lyapunov_pairs_y_plus_with_lambda_plus(quad_suite):
    def reference(z, gamma):
        zero = np.zeros_like(z)
        return ReferenceSolution(y_star=z, lambda_star=(zero, zero), source=ReferenceSource.ANALYTIC)

    config = SolverConfig(method="cadmm-prox", rho=4.0, gamma=1.0, local_update_strategy="exact")
    assert config.resolved_dual_ordering == DualOrdering.PRE_SWEEP
    events = []
    recorder = TraceRecorder(quad_suite.agents, config.gamma, reference)

    def observe(event):
        events.append(event)
        recorder(event)

    solve(quad_suite.agents, config, [0.0], observer=observe)
    stale = 0
    for event, record in zip(events, recorder.records):
        ref = reference(event.z, config.gamma)
        paired = replace(event.report.state_after, lam=event.report.lambda_plus)
        assert record.lyapunov == lyapunov(paired, ref)
        if lyapunov(event.report.state_after, ref) != record.lyapunov:
            stale += 1
    # pre-sweep 存回的是舊的 λ
    assert stale > 0

def test_plain_run_skips_enforced_monitors(tmp_path, capsys):
    code, _ = _run(tmp_path, capsys, "--suite", QUAD, "--method", "plain-cadmm", "--rho", "4")
    assert code == 0
    result = json.loads((tmp_path / "run" / "result.json").read_text(encoding="utf-8"))
    assert result["verdicts"]["telescoping"] is None
    assert result["verdicts"]["lyapunov"] is None


def test_config_file_values_and_flag_override(tmp_path, capsys):
    config = tmp_path / "solver.toml"
    config.write_text(f'suite = "{QUAD}"\nrho = 4.0\nmax_outer = 1\n', encoding="utf-8")
    code, _ = _run(tmp_path, capsys, "--config", str(config), "--max-outer", "50")
    assert code == 0
    snapshot = (tmp_path / "run" / "config_snapshot.toml").read_text(encoding="utf-8")
    assert "rho = 4.0" in snapshot
    assert "max_outer = 50" in snapshot


@pytest.mark.parametrize(
    "content",
    ['suite = "quadratic:a=1;c=0"\nrho = [\n', 'suite = "quadratic:a=1;c=0"\nunknown_key = 1\n', "rho = 4.0\n"],
    ids=["malformed", "unknown-key", "no-suite"],
)
def test_bad_config_file_exits_with_error(tmp_path, capsys, content):
    config = tmp_path / "bad.toml"
    config.write_text(content, encoding="utf-8")
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "run")]) == 1
    error = json.loads(capsys.readouterr().err)
    assert error["code"] == "CONFIG_ERROR"


def test_unknown_suite_exits_with_error(tmp_path, capsys):
    assert main(["run", "--suite", "nosuch", "--out", str(tmp_path / "run")]) == 1
    assert json.loads(capsys.readouterr().err)["code"] == "SUITE_ERROR"


@pytest.mark.parametrize("flag", ["--method", "--local-update", "--hessian-mode"])
def test_run_rejects_unknown_enum_value(tmp_path, capsys, flag):
    assert main(["run", "--suite", QUAD, flag, "nosuch", "--out", str(tmp_path / "run")]) == 1
    assert json.loads(capsys.readouterr().err)["code"] == "CONFIG_ERROR"
    assert not (tmp_path / "run").exists()


# ============================================================================
# validate / classify
# ============================================================================

@pytest.mark.parametrize(
    "suite, expected",
    [(QUAD, 0), ("lasso:agents=2;dim=3;rows=5;mu=0.1;seed=0", 0), ("broken", 3)],
)
def test_validate_exit_codes(capsys, suite, expected):
    assert main(["validate", "--suite", suite, "--samples", "10"]) == expected
    captured = capsys.readouterr()
    if expected == 3:
        assert json.loads(captured.err)["code"] == "ORACLE_MISMATCH"
    else:
        assert json.loads(captured.out)["lower_bound_ok"] is True


def test_classify_saddle(capsys):
    assert main(["classify", "--suite", DOUBLE_WELL, "--z-star", "0", "--trials", "4"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["z_star"] == [0.0]
    assert payload["verdict"]["label"] == "SADDLE_OR_OTHER"
    assert payload["verdict"]["heuristic"] is True


def test_classify_from_run_directory(tmp_path, capsys):
    _run(tmp_path, capsys, "--suite", DOUBLE_WELL, "--z0", "0.9")
    assert main(["classify", "--run", str(tmp_path / "run"), "--trials", "2"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["verdict"]["label"] == "LOCAL_MINIMIZER"
    assert payload["suite"] == DOUBLE_WELL


def test_classify_requires_a_point(capsys):
    assert main(["classify", "--suite", DOUBLE_WELL]) == 1


# ============================================================================
# compare
# ============================================================================

def test_compare_writes_summary(tmp_path, capsys):
    out = tmp_path / "cmp"
    code = main(
        ["compare", "--suite", QUAD, "--rho", "4", "--methods", "plain-cadmm,cadmm-prox", "--out", str(out)]
    )
    assert code == 0
    table = capsys.readouterr().out
    assert "plain-cadmm" in table and "cadmm-prox" in table
    rows = list(csv.DictReader((out / "summary.csv").read_text(encoding="utf-8").splitlines()))
    assert [row["method"] for row in rows] == ["plain-cadmm", "cadmm-prox"]
    for row in rows:
        assert row["status"] == "CONVERGED"
        assert float(row["z_star"]) == pytest.approx(3.0, abs=1e-6)
    assert (out / "cadmm-prox" / "trace.csv").exists()


def test_compare_double_well_from_same_start(tmp_path, capsys):
    out = tmp_path / "cmp"
    code = main(
        ["compare", "--suite", DOUBLE_WELL, "--z0", "0.9", "--methods", "caladin-prox,cadmm-prox", "--out", str(out)]
    )
    assert code == 0
    rows = list(csv.DictReader((out / "summary.csv").read_text(encoding="utf-8").splitlines()))
    assert all(float(row["z_star"]) == pytest.approx(1.0, abs=1e-4) for row in rows)


@pytest.mark.parametrize("methods", ["", "cadmm-prox", "cadmm-prox,newton"])
def test_compare_rejects_bad_method_lists(tmp_path, capsys, methods):
    assert main(["compare", "--suite", QUAD, "--methods", methods, "--out", str(tmp_path / "cmp")]) == 1


# ============================================================================
# runner
# ============================================================================

def test_run_comparison_shares_start_and_seed():
    config = SolverConfig(rho=4.0, seed=3)
    records = run_comparison(QUAD, config, [Method.CALADIN_PROX, Method.PLAIN_CALADIN], z0=(0.0,))
    assert [r.method for r in records] == ["caladin-prox", "plain-caladin"]
    assert all(r.result.z_trajectory[0][0] == 0.0 for r in records)
    assert all("seed = 3" in r.config_snapshot for r in records)
    with pytest.raises(ConfigError):
        run_comparison(QUAD, config, [Method.CALADIN_PROX])


def test_with_method_revalidates():
    config = SolverConfig(hessian_mode="curvature-refresh")
    with pytest.raises(ConfigError):
        with_method(config, Method.CADMM_PROX)
    assert with_method(SolverConfig(), Method.PLAIN_CADMM).method == Method.PLAIN_CADMM


def test_monitor_failure_maps_to_exit_three():
    record = run_experiment(RunRequest(suite_spec=QUAD, config=SolverConfig(rho=4.0)))
    assert exit_code_for(record) == 0
    failed = replace(record, verdicts={**record.verdicts, "telescoping": False})
    assert exit_code_for(failed) == 3
    capped = replace(record, result=replace(record.result, status=OuterStatus.MAX_OUTER))
    assert exit_code_for(capped) == 2


def test_trace_csv_and_run_id_are_stable():
    record = run_experiment(RunRequest(suite_spec=QUAD, config=SolverConfig(rho=4.0), z0=(0.0,)))
    again = run_experiment(RunRequest(suite_spec=QUAD, config=SolverConfig(rho=4.0), z0=(0.0,)))
    assert trace_csv(record.trace) == trace_csv(again.trace)
    assert record.run_id == again.run_id == run_id_for(record.config_snapshot)
    assert render_snapshot([("a", 1), ("b", None), ("c", [1.5, 2.0])]) == "a = 1\nc = [1.5, 2.0]\n"
