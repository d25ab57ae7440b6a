"""Append-only persistence for game sessions: one event log per session, a
global request log for deterministic replay, and a compacted summary store
for cross-session aggregation. No database dependency; everything is
line-delimited JSON with canonical key order so replays are byte-comparable.
"""

from __future__ import annotations

import json
from pathlib import Path


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class RecordStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "sessions").mkdir(exist_ok=True)

    # -- paths --------------------------------------------------------------

    def session_path(self, session_id: str) -> Path:
        return self.root / "sessions" / f"{session_id}.jsonl"

    @property
    def request_log_path(self) -> Path:
        return self.root / "requests.jsonl"

    @property
    def summary_path(self) -> Path:
        return self.root / "summaries.jsonl"

    # -- appends --------------------------------------------------------------

    def _append(self, path: Path, record: dict) -> None:
        with path.open("a") as fh:
            fh.write(canonical_json(record) + "\n")

    def append_session_event(self, session_id: str, event: dict) -> None:
        self._append(self.session_path(session_id), event)

    def append_request(self, record: dict) -> None:
        self._append(self.request_log_path, record)

    def append_summary(self, record: dict) -> None:
        self._append(self.summary_path, record)

    # -- reads ----------------------------------------------------------------

    def _read(self, path: Path) -> list[dict]:
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text().splitlines()]

    def session_events(self, session_id: str) -> list[dict]:
        return self._read(self.session_path(session_id))

    def session_ids(self) -> list[str]:
        return sorted(p.stem for p in (self.root / "sessions").glob("*.jsonl"))

    def requests(self) -> list[dict]:
        return self._read(self.request_log_path)

    def summaries(self) -> list[dict]:
        return self._read(self.summary_path)

    # -- comparison -------------------------------------------------------------

    def content_bytes(self) -> dict[str, bytes]:
        """Every store file's bytes, keyed by path relative to the root
        (request log excluded: it is the replay input, not its output)."""
        out = {}
        for path in sorted(self.root.rglob("*.jsonl")):
            rel = path.relative_to(self.root).as_posix()
            if rel == "requests.jsonl":
                continue
            out[rel] = path.read_bytes()
        return out
