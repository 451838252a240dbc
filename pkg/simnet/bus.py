"""
模擬訊息匯流排
以整數 tick 模擬時間，不依賴 wall clock；可注入延遲、丟包（silent agent）與重複上傳
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Optional

import numpy as np

logger = logging.getLogger("bilevel_consensus.simnet")

DEFAULT_TICK_BUDGET = 8


class DeliveryOrder(str, Enum):
    FIFO = "fifo"
    REVERSE = "reverse"
    SHUFFLE = "shuffle"


@dataclass
class BusStats:
    uploads_posted: int = 0
    uploads_delivered: int = 0
    uploads_dropped: int = 0
    broadcasts: int = 0


@dataclass(frozen=True)
class _Envelope:
    arrival_tick: int
    seq: int
    sender: int
    frame: bytes


class SimBus:
    """agent → master 的上傳佇列與 master → agents 的廣播"""

    def __init__(
        self,
        tick_budget: int = DEFAULT_TICK_BUDGET,
        delivery: DeliveryOrder = DeliveryOrder.FIFO,
        seed: int = 0,
        latency: Optional[Dict[int, int]] = None,
        silent: Iterable[int] = (),
        duplicate: Iterable[int] = (),
    ):
        if tick_budget < 0:
            raise ValueError("tick_budget 必須 ≥ 0")
        self.tick_budget = tick_budget
        self.delivery = DeliveryOrder(delivery)
        self.latency = dict(latency or {})
        self.silent = set(silent)
        self.duplicate = set(duplicate)
        self.stats = BusStats()
        self._rng = np.random.default_rng(seed)
        self._queue: list = []
        self._seq = 0

    def post_upload(self, sender: int, frame: bytes, tick: int = 0) -> None:
        self.stats.uploads_posted += 1
        if sender in self.silent:
            self.stats.uploads_dropped += 1
            logger.debug("upload from agent %d dropped (silent)", sender)
            return
        copies = 2 if sender in self.duplicate else 1
        for _ in range(copies):
            arrival = tick + self.latency.get(sender, 0)
            self._queue.append(_Envelope(arrival, self._seq, sender, frame))
            self._seq += 1

    def deliver(self, tick: int) -> list:
        """取出 arrival_tick ≤ tick 的 frame，依 delivery 設定排序"""
        ready = [e for e in self._queue if e.arrival_tick <= tick]
        if not ready:
            return []
        self._queue = [e for e in self._queue if e.arrival_tick > tick]
        ready.sort(key=lambda e: (e.arrival_tick, e.seq))
        if self.delivery == DeliveryOrder.REVERSE:
            ready.reverse()
        elif self.delivery == DeliveryOrder.SHUFFLE:
            ready = [ready[k] for k in self._rng.permutation(len(ready))]
        self.stats.uploads_delivered += len(ready)
        return [e.frame for e in ready]

    def publish(self, frame: bytes) -> bytes:
        self.stats.broadcasts += 1
        return frame

    def clear(self) -> None:
        """丟棄尚未送達的 frame（round 失敗後使用）"""
        self._queue = []

    @property
    def pending(self) -> int:
        return len(self._queue)
