"""HTTP game service: live human-vs-model reference games over a JSON API,
with append-only persistence and deterministic request replay."""

from .game import (ContextPool, GameServer, GameSession, RoundRecord,
                   replay_request_log)
from .store import RecordStore

__all__ = ["ContextPool", "GameServer", "GameSession", "RoundRecord",
           "RecordStore", "replay_request_log"]
