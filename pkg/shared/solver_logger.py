"""
求解過程的美化 Logger
沿用 ANSI 顏色表與區塊格式，輸出經由 logging.getLogger("bilevel_consensus")

測試或批次執行時可透過 BILEVEL_LOG_LEVEL 關閉輸出
"""

import logging
from typing import Any, Sequence

from .config import load_runtime_settings

_settings = load_runtime_settings()

_log = logging.getLogger("bilevel_consensus")
if not _log.handlers:
    _handler = logging.StreamHandler()
    _handler.setFormatter(logging.Formatter("%(message)s"))
    _log.addHandler(_handler)
_log.setLevel(getattr(logging, _settings.log_level, logging.WARNING))


class SolverLogger:
    """雙層求解器的事件輸出"""

    # ANSI 顏色碼
    COLORS = {
        "reset": "\033[0m",
        "bold": "\033[1m",
        "dim": "\033[2m",
        "red": "\033[91m",
        "green": "\033[92m",
        "yellow": "\033[93m",
        "blue": "\033[94m",
        "magenta": "\033[95m",
        "cyan": "\033[96m",
    }

    color_enabled = _settings.color

    @classmethod
    def _colorize(cls, text: str, *colors: str) -> str:
        if not cls.color_enabled:
            return text
        color_codes = "".join(cls.COLORS.get(c, "") for c in colors)
        return f"{color_codes}{text}{cls.COLORS['reset']}"

    @staticmethod
    def _truncate(text: str, max_len: int = 80) -> str:
        if len(text) > max_len:
            return text[:max_len] + "..."
        return text

    @staticmethod
    def _fmt_vec(vec: Sequence[float], max_len: int = 60) -> str:
        body = ", ".join(f"{float(v):.6g}" for v in vec)
        return SolverLogger._truncate(f"({body})", max_len)

    @classmethod
    def header(cls, title: str, suite: str, method: str, n_agents: int):
        """印出執行標頭"""
        line = "═" * 70
        _log.info(cls._colorize(line, "cyan"))
        _log.info(cls._colorize(f"  {title}", "cyan", "bold"))
        _log.info(f"  {cls._colorize('Suite:', 'dim')}   {suite}")
        _log.info(f"  {cls._colorize('Method:', 'dim')}  {cls._colorize(method, 'green', 'bold')}")
        _log.info(f"  {cls._colorize('Agents:', 'dim')}  {n_agents}")
        _log.info(cls._colorize(line, "cyan"))

    @classmethod
    def phase_start(cls, outer_index: int, z: Sequence[float], merit_at_z: float):
        if not _log.isEnabledFor(logging.DEBUG):
            return
        _log.debug(
            f"  {cls._colorize('▶ phase', 'blue', 'bold')} k={outer_index} "
            f"z={cls._fmt_vec(z)} Φ(z)={merit_at_z:.12g}"
        )

    @classmethod
    def sweep(cls, sweep_index: int, merit_after: float, local_ok: bool, consensus_ok: bool):
        if not _log.isEnabledFor(logging.DEBUG):
            return
        flags = f"local={'✓' if local_ok else '·'} consensus={'✓' if consensus_ok else '·'}"
        _log.debug(f"    sweep {sweep_index:4d}  Φ={merit_after:.12g}  {cls._colorize(flags, 'dim')}")

    @classmethod
    def accepted(cls, outer_index: int, step_sq: float, merit: float):
        _log.info(
            f"  {cls._colorize('✓ z accepted', 'green')} k={outer_index} "
            f"‖Δz‖²={step_sq:.3e} Φ={merit:.12g}"
        )

    @classmethod
    def sigma_raised(cls, agent_id: int, old: float, new: float):
        if not _log.isEnabledFor(logging.DEBUG):
            return
        _log.debug(f"    {cls._colorize('σ', 'magenta')}[{agent_id}] {old:.6g} → {new:.6g}")

    @classmethod
    def event(cls, event_type: str, details: str = ""):
        """印出一般事件"""
        _log.info(f"  {cls._colorize('→', 'dim')} {cls._colorize(event_type, 'cyan')}: {details}")

    @classmethod
    def warning(cls, message: str):
        _log.warning(f"  {cls._colorize('⚠ ' + message, 'yellow')}")

    @classmethod
    def error(cls, error: Any):
        """印出錯誤"""
        _log.error(f"  {cls._colorize('❌ ERROR', 'red', 'bold')} {error}")

    @classmethod
    def footer(cls, status: str, outer_iterations: int, duration_ms: float):
        """印出執行結尾"""
        line = "═" * 70
        _log.info(
            f"  {cls._colorize(f'{status} after {outer_iterations} outer iterations ({duration_ms:.0f}ms)', 'green')}"
        )
        _log.info(cls._colorize(line, "cyan"))


logger = SolverLogger()
