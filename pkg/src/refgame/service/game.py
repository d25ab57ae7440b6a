"""Session and round bookkeeping for live reference games.

A session seats a human in one role (listener or speaker) against a model
agent, deals a seeded queue of 3-object rounds with per-round scrambling,
and records every outcome in an append-only store. Every response is a pure
function of (store state, request), so replaying the request log rebuilds
the store byte-for-byte.
"""

from __future__ import annotations

import secrets
import time
from dataclasses import dataclass, field

import numpy as np

from .store import RecordStore

ROLES = ("human_listener", "human_speaker")
DEFAULT_N_ROUNDS = 69


class GameError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind  # not_found | duplicate | bad_request


@dataclass(frozen=True)
class ContextEntry:
    context_id: str
    object_ids: tuple[str, str, str]
    target_index: int
    difficulty: str


@dataclass
class ContextPool:
    entries: list[ContextEntry]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("context pool is empty")

    @classmethod
    def from_trials(cls, trials) -> "ContextPool":
        return cls([ContextEntry(t.context_id, tuple(t.object_ids),
                                 t.target_index, t.difficulty)
                    for t in trials])

    @classmethod
    def from_counterbalanced(cls, pairs) -> "ContextPool":
        """pairs: (ContextSpec, target_index) as produced by context
        counterbalancing."""
        entries = []
        for i, (spec, target_index) in enumerate(pairs):
            entries.append(ContextEntry(
                context_id=f"cb{i:06d}", object_ids=tuple(spec.object_ids),
                target_index=int(target_index),
                difficulty=spec.difficulty))
        return cls(entries)


@dataclass
class Round:
    round_index: int
    context_id: str
    object_ids: tuple[str, str, str]  # canonical order
    target_index: int  # canonical
    difficulty: str
    permutation: tuple[int, int, int]  # presented slot -> canonical index
    utterance: str | None  # model utterance (human_listener role)

    @property
    def presented_ids(self) -> tuple[str, str, str]:
        return tuple(self.object_ids[c] for c in self.permutation)

    @property
    def target_slot(self) -> int:
        return self.permutation.index(self.target_index)

    def to_dict(self) -> dict:
        return {"round_index": self.round_index,
                "context_id": self.context_id,
                "object_ids": list(self.object_ids),
                "target_index": self.target_index,
                "difficulty": self.difficulty,
                "permutation": list(self.permutation),
                "utterance": self.utterance}

    @classmethod
    def from_dict(cls, d: dict) -> "Round":
        return cls(round_index=d["round_index"], context_id=d["context_id"],
                   object_ids=tuple(d["object_ids"]),
                   target_index=d["target_index"],
                   difficulty=d["difficulty"],
                   permutation=tuple(d["permutation"]),
                   utterance=d["utterance"])


@dataclass
class RoundRecord:
    round_index: int
    context_id: str
    difficulty: str
    permutation: tuple[int, int, int]
    utterance: str  # model's (listener role) or human's (speaker role)
    choice: int  # canonical index of the guesser's pick
    presented_choice: int  # slot the pick occupied on screen
    correct: bool
    latency_ms: float
    timestamp: float

    def to_dict(self) -> dict:
        return {"round_index": self.round_index,
                "context_id": self.context_id,
                "difficulty": self.difficulty,
                "permutation": list(self.permutation),
                "utterance": self.utterance,
                "choice": self.choice,
                "presented_choice": self.presented_choice,
                "correct": self.correct,
                "latency_ms": self.latency_ms,
                "timestamp": self.timestamp}

    @classmethod
    def from_dict(cls, d: dict) -> "RoundRecord":
        return cls(round_index=d["round_index"], context_id=d["context_id"],
                   difficulty=d["difficulty"],
                   permutation=tuple(d["permutation"]),
                   utterance=d["utterance"], choice=d["choice"],
                   presented_choice=d["presented_choice"],
                   correct=d["correct"], latency_ms=d["latency_ms"],
                   timestamp=d["timestamp"])


@dataclass
class GameSession:
    session_id: str
    role: str
    seed: int
    created_at: float
    rounds: list[Round]
    results: list[RoundRecord] = field(default_factory=list)

    @property
    def cursor(self) -> int:
        return len(self.results)

    @property
    def done(self) -> bool:
        return self.cursor >= len(self.rounds)

    def accuracy(self, difficulty: str | None = None):
        hits = [r.correct for r in self.results
                if difficulty is None or r.difficulty == difficulty]
        return (sum(hits) / len(hits) if hits else None), len(hits)


class GameServer:
    """Holds live sessions in memory and persists every event; safe to
    restart, because sessions are rebuilt from their event logs."""

    def __init__(self, store: RecordStore, contexts: ContextPool,
                 speaker_agent=None, listener_agent=None,
                 object_labels: dict[str, str] | None = None):
        self.store = store
        self.contexts = contexts
        self.speaker_agent = speaker_agent
        self.listener_agent = listener_agent
        self.object_labels = object_labels or {}
        self.sessions: dict[str, GameSession] = {}
        self._load()

    def _load(self) -> None:
        for sid in self.store.session_ids():
            events = self.store.session_events(sid)
            if not events or events[0].get("event") != "created":
                continue
            head = events[0]
            session = GameSession(
                session_id=sid, role=head["role"], seed=head["seed"],
                created_at=head["created_at"],
                rounds=[Round.from_dict(r) for r in head["rounds"]])
            for ev in events[1:]:
                if ev.get("event") == "round":
                    session.results.append(RoundRecord.from_dict(ev["record"]))
            self.sessions[sid] = session

    # -- session lifecycle ---------------------------------------------------

    def create_session(self, role: str, n_rounds: int = DEFAULT_N_ROUNDS,
                       seed: int = 0, session_id: str | None = None,
                       created_at: float | None = None,
                       log_request: bool = True) -> GameSession:
        if role not in ROLES:
            raise GameError("bad_request", f"unknown role {role!r}")
        if n_rounds < 1:
            raise GameError("bad_request", "n_rounds must be >= 1")
        if role == "human_listener" and self.speaker_agent is None:
            raise GameError("bad_request", "no speaker agent is configured")
        if role == "human_speaker" and self.listener_agent is None:
            raise GameError("bad_request", "no listener agent is configured")
        session_id = session_id or secrets.token_hex(16)
        if session_id in self.sessions:
            raise GameError("bad_request", f"session {session_id} exists")
        created_at = time.time() if created_at is None else created_at
        rng = np.random.default_rng(seed)
        picks = rng.integers(0, len(self.contexts.entries), size=n_rounds)
        rounds = []
        for i, pick in enumerate(picks):
            entry = self.contexts.entries[int(pick)]
            perm = tuple(int(x) for x in
                         np.random.default_rng([seed, i]).permutation(3))
            utterance = None
            if role == "human_listener":
                utterance = self.speaker_agent.utter(
                    entry.object_ids, entry.target_index,
                    seed=seed * 100003 + i)
            rounds.append(Round(round_index=i, context_id=entry.context_id,
                                object_ids=entry.object_ids,
                                target_index=entry.target_index,
                                difficulty=entry.difficulty,
                                permutation=perm, utterance=utterance))
        session = GameSession(session_id=session_id, role=role, seed=seed,
                              created_at=created_at, rounds=rounds)
        self.sessions[session_id] = session
        self.store.append_session_event(session_id, {
            "event": "created", "session_id": session_id, "role": role,
            "seed": seed, "created_at": created_at,
            "rounds": [r.to_dict() for r in rounds]})
        if log_request:
            self.store.append_request({
                "op": "create_session", "role": role, "n_rounds": n_rounds,
                "seed": seed, "session_id": session_id,
                "created_at": created_at})
        return session

    def get_session(self, session_id: str) -> GameSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise GameError("not_found", f"unknown session {session_id}")
        return session

    # -- rounds ----------------------------------------------------------------

    def current_round(self, session_id: str) -> Round | None:
        session = self.get_session(session_id)
        return None if session.done else session.rounds[session.cursor]

    def submit_round(self, session_id: str, round_index: int, payload: dict,
                     timestamp: float | None = None,
                     log_request: bool = True) -> RoundRecord:
        """Serialized by the round index: only the cursor round is
        accepted, so duplicates and out-of-order submissions are rejected
        without any state change."""
        session = self.get_session(session_id)
        if session.done:
            raise GameError("duplicate", "session already complete")
        if round_index != session.cursor:
            raise GameError(
                "duplicate",
                f"expected round {session.cursor}, got {round_index}")
        rnd = session.rounds[round_index]
        timestamp = time.time() if timestamp is None else timestamp
        latency = float(payload.get("latency_ms", 0.0))
        if session.role == "human_listener":
            slot = payload.get("choice")
            if not isinstance(slot, int) or not 0 <= slot <= 2:
                raise GameError("bad_request",
                                "human_listener rounds need a choice in 0..2")
            canonical = rnd.permutation[slot]
            record = RoundRecord(
                round_index=round_index, context_id=rnd.context_id,
                difficulty=rnd.difficulty, permutation=rnd.permutation,
                utterance=rnd.utterance or "", choice=canonical,
                presented_choice=slot,
                correct=canonical == rnd.target_index,
                latency_ms=latency, timestamp=timestamp)
        else:
            text = (payload.get("utterance") or "").strip()
            if not text:
                raise GameError("bad_request",
                                "human_speaker rounds need an utterance")
            canonical = int(self.listener_agent.choose(rnd.object_ids, text))
            record = RoundRecord(
                round_index=round_index, context_id=rnd.context_id,
                difficulty=rnd.difficulty, permutation=rnd.permutation,
                utterance=text, choice=canonical,
                presented_choice=rnd.permutation.index(canonical),
                correct=canonical == rnd.target_index,
                latency_ms=latency, timestamp=timestamp)
        session.results.append(record)
        self.store.append_session_event(session_id, {
            "event": "round", "record": record.to_dict()})
        if log_request:
            self.store.append_request({
                "op": "submit_round", "session_id": session_id,
                "round_index": round_index, "payload": payload,
                "timestamp": timestamp})
        if session.done:
            self.store.append_summary(self._summary(session))
        return record

    # -- reports ----------------------------------------------------------------

    def _summary(self, session: GameSession) -> dict:
        def bucket(difficulty=None):
            hits = [r.correct for r in session.results
                    if difficulty is None or r.difficulty == difficulty]
            return {"correct": sum(hits), "count": len(hits)}

        return {"session_id": session.session_id, "role": session.role,
                "seed": session.seed, "created_at": session.created_at,
                "overall": bucket(), "hard": bucket("hard"),
                "easy": bucket("easy")}

    def session_report(self, session_id: str) -> dict:
        session = self.get_session(session_id)
        overall, n = session.accuracy()
        hard, n_hard = session.accuracy("hard")
        easy, n_easy = session.accuracy("easy")
        return {"session_id": session_id, "role": session.role,
                "n_rounds": len(session.rounds), "completed": n,
                "overall_accuracy": overall,
                "hard_accuracy": hard, "hard_count": n_hard,
                "easy_accuracy": easy, "easy_count": n_easy,
                "done": session.done}

    def aggregate_report(self) -> dict:
        """Count-weighted accuracy over every completed session in the
        persistent summary store."""
        summaries = self.store.summaries()

        def merge(key):
            correct = sum(s[key]["correct"] for s in summaries)
            count = sum(s[key]["count"] for s in summaries)
            return {"accuracy": (correct / count) if count else None,
                    "count": count}

        return {"n_sessions": len(summaries),
                "overall": merge("overall") if summaries else
                {"accuracy": None, "count": 0},
                "hard": merge("hard") if summaries else
                {"accuracy": None, "count": 0},
                "easy": merge("easy") if summaries else
                {"accuracy": None, "count": 0}}

    def export_records(self) -> list[dict]:
        """Line-record export of every stored round, for offline analysis."""
        out = []
        for sid in sorted(self.sessions):
            for record in self.sessions[sid].results:
                row = record.to_dict()
                row["session_id"] = sid
                out.append(row)
        return out


def replay_request_log(requests: list[dict], server: GameServer) -> None:
    """Re-execute a recorded request log against a fresh server. Recorded
    session ids and timestamps are reused, so the rebuilt store matches the
    original byte-for-byte."""
    for rec in requests:
        if rec["op"] == "create_session":
            server.create_session(role=rec["role"], n_rounds=rec["n_rounds"],
                                  seed=rec["seed"],
                                  session_id=rec["session_id"],
                                  created_at=rec["created_at"])
        elif rec["op"] == "submit_round":
            server.submit_round(rec["session_id"], rec["round_index"],
                                rec["payload"], timestamp=rec["timestamp"])
        else:
            raise ValueError(f"unknown request op {rec['op']!r}")
