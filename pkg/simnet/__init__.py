"""
simnet - master / agent 訊息傳遞模擬
"""

from .bus import BusStats, DeliveryOrder, SimBus
from .messages import AgentUpload, MasterBroadcast, PayloadKind, decode, encode
from .protocol import ProtocolSweeper, RoundResult, SimAgent, SimMaster, run_round

__all__ = [
    "AgentUpload",
    "BusStats",
    "DeliveryOrder",
    "MasterBroadcast",
    "PayloadKind",
    "ProtocolSweeper",
    "RoundResult",
    "SimAgent",
    "SimBus",
    "SimMaster",
    "decode",
    "encode",
    "run_round",
]
