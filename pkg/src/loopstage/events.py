"""Append-only JSONL session log: header line first, then densely numbered events.

The log is written ahead of every broadcast it causes. Canonical serialization
(sorted keys, shortest round-trip floats) plus a 64-bit FNV-1a digest give
cross-run stable state hashes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterator, Optional

from .protocol import MessageKind

FORMAT_VERSION = 1

# Event kinds beyond the wire message kinds.
EVENT_ONLY_KINDS = (
    "SessionCreated",
    "TimeoutSubstitution",
    "AgentAction",
    "LearnerUpdate",
    "StateHash",
    "BindingSuspended",
    "BindingResumed",
    "TickAdvance",
    "EndRequested",
)

EVENT_KINDS = frozenset(k.value for k in MessageKind) | frozenset(EVENT_ONLY_KINDS)

# Kinds that carry session-external decisions; replay feeds exactly these and
# recomputes everything else.
EXTERNAL_KINDS = frozenset({
    MessageKind.JOIN.value,
    MessageKind.ACT_SUBMIT.value,
    MessageKind.REWARD_ANNOTATION.value,
    MessageKind.CHANNEL_MSG.value,
    MessageKind.DELEGATION_REQUEST.value,
    MessageKind.DELEGATION_GRANT.value,
    MessageKind.DELEGATION_REVOKE.value,
    MessageKind.PREF_RESPONSE.value,
    MessageKind.START_EPISODE.value,
    "TimeoutSubstitution",
    "TickAdvance",
    "EndRequested",
    "BindingSuspended",
    "BindingResumed",
})


class StorageFailure(RuntimeError):
    pass


class CorruptLog(ValueError):
    pass


class HashMismatch(AssertionError):
    def __init__(self, tick: int, expected: int, actual: int):
        super().__init__(f"state hash diverged at tick {tick}: "
                         f"logged {expected:#018x}, recomputed {actual:#018x}")
        self.tick = tick
        self.expected = expected
        self.actual = actual


def canonical_json(obj) -> str:
    """Field-name-sorted compact JSON; floats use shortest round-trip repr."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def state_digest(state) -> int:
    return fnv1a64(canonical_json(state).encode("utf-8"))


@dataclass(frozen=True)
class LogHeader:
    format_version: int
    session_id: str
    experiment_hash: str
    master_seed: int
    build_id: str

    def to_json(self) -> dict:
        return {
            "format_version": self.format_version,
            "session_id": self.session_id,
            "experiment_hash": self.experiment_hash,
            "master_seed": self.master_seed,
            "build_id": self.build_id,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LogHeader":
        return cls(
            format_version=int(obj["format_version"]),
            session_id=obj["session_id"],
            experiment_hash=obj["experiment_hash"],
            master_seed=int(obj["master_seed"]),
            build_id=obj["build_id"],
        )


@dataclass(frozen=True)
class Event:
    seq: int
    wall_time_ms: int
    tick: Optional[int]
    kind: str
    payload: dict

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "wall_time_ms": self.wall_time_ms,
            "tick": self.tick,
            "kind": self.kind,
            "payload": self.payload,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Event":
        return cls(
            seq=int(obj["seq"]),
            wall_time_ms=int(obj["wall_time_ms"]),
            tick=obj["tick"],
            kind=obj["kind"],
            payload=obj["payload"],
        )


class EventLog:
    """Per-session appender. Appends are flushed before callers broadcast."""

    def __init__(self, writer: IO[str], header: LogHeader):
        self._writer = writer
        self._next_seq = 0
        self.header = header
        try:
            writer.write(canonical_json(header.to_json()) + "\n")
            writer.flush()
        except OSError as exc:
            raise StorageFailure(f"cannot write log header: {exc}") from exc

    @classmethod
    def open(cls, path: "str | Path", header: LogHeader) -> "EventLog":
        return cls(open(path, "w", encoding="utf-8"), header)

    def append(self, kind: str, payload: dict, tick: Optional[int],
               wall_time_ms: int) -> int:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        event = Event(seq=self._next_seq, wall_time_ms=wall_time_ms, tick=tick,
                      kind=kind, payload=payload)
        try:
            self._writer.write(canonical_json(event.to_json()) + "\n")
            self._writer.flush()
        except OSError as exc:
            raise StorageFailure(f"cannot append event {kind}: {exc}") from exc
        self._next_seq += 1
        return event.seq

    def close(self) -> None:
        try:
            self._writer.close()
        except OSError:
            pass


def read_log(path: "str | Path") -> tuple:
    """(header, events) with density and format checks; CorruptLog on failure."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise CorruptLog("log is empty")
    try:
        header = LogHeader.from_json(json.loads(lines[0]))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CorruptLog(f"bad header: {exc}") from None
    if header.format_version != FORMAT_VERSION:
        raise CorruptLog(f"unsupported log format version {header.format_version}")
    events = []
    for i, line in enumerate(lines[1:]):
        if not line.strip():
            continue
        try:
            event = Event.from_json(json.loads(line))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise CorruptLog(f"bad event on line {i + 2}: {exc}") from None
        if event.seq != len(events):
            raise CorruptLog(f"seq gap: expected {len(events)}, got {event.seq}")
        events.append(event)
    return header, events


def iter_log(path: "str | Path") -> Iterator:
    header, events = read_log(path)
    return iter(events)
