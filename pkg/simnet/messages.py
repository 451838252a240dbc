"""
master / agent 訊息與 wire 格式

Frame（little-endian）：

    ┌─────────┬─────┬──────────────┬──────────────────┐
    │ version │ tag │ body_len u32 │ body             │
    │ u8 = 1  │ u8  │              │                  │
    └─────────┴─────┴──────────────┴──────────────────┘

    tag 0x01 AgentUpload      body = agent_id u32 | round u32 | kind u8 | dim u32 | x⁺ f64×dim | payload f64×dim
    tag 0x02 MasterBroadcast  body = round u32 | z_flag u8 | dim u32 | y⁺ f64×dim

kind 0 表示 payload 為 g_i（CALADIN），1 表示 λ_i（CADMM）。
f64 以 struct 原樣打包，往返解碼逐位元不變。
"""

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Union

import numpy as np

from shared.core import as_vector
from shared.errors import MalformedFrameError, SolverError

WIRE_VERSION = 1
TAG_UPLOAD = 0x01
TAG_BROADCAST = 0x02

_HEADER = struct.Struct("<BBI")
_UPLOAD_HEAD = struct.Struct("<IIBI")
_BROADCAST_HEAD = struct.Struct("<IBI")


class PayloadKind(IntEnum):
    SUBGRADIENT = 0
    DUAL = 1


@dataclass(frozen=True, eq=False)
class AgentUpload:
    agent_id: int
    x_plus: np.ndarray
    payload: np.ndarray
    kind: PayloadKind
    round: int

    def __eq__(self, other) -> bool:
        return isinstance(other, AgentUpload) and encode(self) == encode(other)

    def __hash__(self) -> int:
        return hash(encode(self))


@dataclass(frozen=True, eq=False)
class MasterBroadcast:
    y_plus: np.ndarray
    z_flag: int
    round: int

    def __post_init__(self):
        if self.z_flag not in (0, 1):
            raise ValueError(f"z_flag 必須是 0 或 1，收到 {self.z_flag}")

    def __eq__(self, other) -> bool:
        return isinstance(other, MasterBroadcast) and encode(self) == encode(other)

    def __hash__(self) -> int:
        return hash(encode(self))


Message = Union[AgentUpload, MasterBroadcast]


def _pack_floats(values: np.ndarray) -> bytes:
    return struct.pack(f"<{values.shape[0]}d", *values.tolist())


def encode(message: Message) -> bytes:
    """將訊息編碼為 frame"""
    if isinstance(message, AgentUpload):
        dim = message.x_plus.shape[0]
        if message.payload.shape != (dim,):
            raise MalformedFrameError("x⁺ 與 payload 維度不符")
        body = (
            _UPLOAD_HEAD.pack(message.agent_id, message.round, int(message.kind), dim)
            + _pack_floats(message.x_plus)
            + _pack_floats(message.payload)
        )
        tag = TAG_UPLOAD
    elif isinstance(message, MasterBroadcast):
        dim = message.y_plus.shape[0]
        body = _BROADCAST_HEAD.pack(message.round, message.z_flag, dim) + _pack_floats(message.y_plus)
        tag = TAG_BROADCAST
    else:
        raise MalformedFrameError(f"不支援的訊息型別：{type(message).__name__}")
    return _HEADER.pack(WIRE_VERSION, tag, len(body)) + body


def _unpack_floats(body: bytes, offset: int, dim: int, name: str) -> np.ndarray:
    values = struct.unpack_from(f"<{dim}d", body, offset)
    try:
        return as_vector(values, name)
    except SolverError as e:
        raise MalformedFrameError(f"{name} 欄位無效：{e.message}") from e


def decode(frame: bytes) -> Message:
    """解析 frame；長度、版本、tag 或內容不正確時拋出 MalformedFrameError"""
    if len(frame) < _HEADER.size:
        raise MalformedFrameError(f"frame 長度 {len(frame)} 小於 header")
    version, tag, body_len = _HEADER.unpack_from(frame, 0)
    if version != WIRE_VERSION:
        raise MalformedFrameError(f"不支援的版本 {version}")
    body = frame[_HEADER.size:]
    if len(body) != body_len:
        raise MalformedFrameError(
            f"body 長度不符：header 記錄 {body_len}，實際 {len(body)}",
            {"expected": body_len, "actual": len(body)},
        )

    if tag == TAG_UPLOAD:
        if body_len < _UPLOAD_HEAD.size:
            raise MalformedFrameError("upload body 過短")
        agent_id, round_, kind, dim = _UPLOAD_HEAD.unpack_from(body, 0)
        if dim == 0 or body_len != _UPLOAD_HEAD.size + 16 * dim:
            raise MalformedFrameError(f"upload 維度 {dim} 與 body 長度 {body_len} 不符")
        if kind not in (PayloadKind.SUBGRADIENT, PayloadKind.DUAL):
            raise MalformedFrameError(f"未知的 payload kind {kind}")
        x_plus = _unpack_floats(body, _UPLOAD_HEAD.size, dim, "x⁺")
        payload = _unpack_floats(body, _UPLOAD_HEAD.size + 8 * dim, dim, "payload")
        return AgentUpload(agent_id, x_plus, payload, PayloadKind(kind), round_)

    if tag == TAG_BROADCAST:
        if body_len < _BROADCAST_HEAD.size:
            raise MalformedFrameError("broadcast body 過短")
        round_, z_flag, dim = _BROADCAST_HEAD.unpack_from(body, 0)
        if dim == 0 or body_len != _BROADCAST_HEAD.size + 8 * dim:
            raise MalformedFrameError(f"broadcast 維度 {dim} 與 body 長度 {body_len} 不符")
        if z_flag not in (0, 1):
            raise MalformedFrameError(f"z_flag 必須是 0 或 1，收到 {z_flag}")
        return MasterBroadcast(_unpack_floats(body, _BROADCAST_HEAD.size, dim, "y⁺"), z_flag, round_)

    raise MalformedFrameError(f"未知的 tag 0x{tag:02x}")
