"""Working memory plus the episodic, semantic and procedural long-term stores.

Time is logical: timestamps are decision-cycle counters supplied by the
caller. Wall-clock time may be attached to episodes as metadata but plays no
part in ordering or retrieval.

Long-term writes are the agent's learning actions. Procedural updates are
guarded twice (the procedure must be mutable and the store must allow
procedural writes), and unlearning (``forget``) is off unless enabled.
"""

from __future__ import annotations

import copy
import contextlib
import hashlib
import json
import re
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterator, Literal, Sequence, Union

from coala.errors import (
    DanglingSource,
    FormatError,
    MemoryPermissionError,
    TimestampRegression,
    UnknownProcedure,
    UnknownRecord,
)

WMValue = Union[str, int, float, bool, list]
RESERVED_KEYS = ("observation", "goal", "scratchpad", "last_action", "cycle_index")
EPISODE_KINDS = ("observation", "action", "reasoning", "outcome")
PROCEDURE_KINDS = ("prompt-template", "code-skill", "tool-binding")
RecordKind = Literal["episode", "fact", "procedure"]

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class _Absent:
    def __repr__(self) -> str:
        return "Absent"

    def __bool__(self) -> bool:
        return False


Absent = _Absent()


def _check_value(key: str, value: Any) -> None:
    if isinstance(value, (str, int, float, bool)):
        return
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return
    raise TypeError(f"working-memory value for {key!r} must be text, number, boolean or list of text")


class WorkingMemory:
    """Named variables shared by every backend call within an episode."""

    def __init__(self, variables: dict[str, WMValue] | None = None, reserved: Sequence[str] = RESERVED_KEYS):
        self.reserved = tuple(reserved)
        self._vars: dict[str, WMValue] = {}
        for k, v in (variables or {}).items():
            self.set(k, v)

    def get(self, key: str, default: Any = Absent) -> Any:
        value = self._vars.get(key, default)
        return list(value) if isinstance(value, list) else value

    def set(self, key: str, value: WMValue) -> "WorkingMemory":
        if not _IDENT.match(key):
            raise ValueError(f"invalid working-memory key {key!r}")
        _check_value(key, value)
        if key == "cycle_index":
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError("cycle_index must be an integer")
            if value < self._vars.get("cycle_index", 0):
                raise ValueError("cycle_index may not decrease")
        self._vars[key] = list(value) if isinstance(value, list) else value
        return self

    def delete(self, key: str) -> None:
        self._vars.pop(key, None)

    def append(self, key: str, text: str) -> None:
        current = self._vars.get(key)
        items = [] if current is None else (list(current) if isinstance(current, list) else [str(current)])
        items.append(text)
        self._vars[key] = items

    @property
    def cycle_index(self) -> int:
        return int(self._vars.get("cycle_index", 0))

    def advance(self) -> int:
        self._vars["cycle_index"] = self.cycle_index + 1
        return self.cycle_index

    def reset(self) -> None:
        # goal survives; so does cycle_index, which must never run backwards
        self._vars = {k: v for k, v in self._vars.items() if k in ("goal", "cycle_index")}

    def __contains__(self, key: str) -> bool:
        return key in self._vars

    def keys(self):
        return self._vars.keys()

    def to_dict(self) -> dict[str, WMValue]:
        return copy.deepcopy(self._vars)

    def bindings(self) -> dict[str, Any]:
        return dict(self._vars)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, WorkingMemory) and self._vars == other._vars

    def __repr__(self) -> str:
        return f"WorkingMemory({self._vars!r})"


@dataclass
class Episode:
    id: int
    timestamp: int
    content: str
    kind: str
    importance: float | None = None
    last_access: int = 0
    redacted: bool = False
    wall_time: float | None = None


@dataclass
class Fact:
    id: int
    content: str
    sources: tuple[int, ...]
    created: int = 0
    embedding: list[float] | None = None
    last_access: int = 0
    redacted: bool = False

    def __post_init__(self):
        self.sources = tuple(self.sources)


@dataclass
class Procedure:
    name: str
    kind: str
    body: str
    mutable: bool = True
    version: int = 1
    history: list[str] = field(default_factory=list)
    id: int = 0
    last_access: int = 0
    redacted: bool = False

    @property
    def content(self) -> str:
        return f"{self.name}: {self.body}"


@dataclass(frozen=True)
class WriteResult:
    id: int
    exists: bool


class AgentMemory:
    """The four memories of one agent, with guarded learning operations.

    Writers are serialized by a lock and every write installs a complete
    record, so concurrent readers never see half-written state.
    """

    def __init__(
        self,
        *,
        allow_procedural_writes: bool = False,
        allow_unlearning: bool = False,
        working: WorkingMemory | None = None,
    ):
        self.allow_procedural_writes = allow_procedural_writes
        self.allow_unlearning = allow_unlearning
        self.working = working if working is not None else WorkingMemory()
        self.episodes: dict[int, Episode] = {}
        self.facts: dict[int, Fact] = {}
        self.procedures: dict[str, Procedure] = {}
        self._next = {"episode": 1, "fact": 1, "procedure": 1}
        self._last_timestamp = 0
        self._tombstones: list[dict] = []
        self._lock = threading.RLock()

    # episodic

    def append_episode(
        self,
        content: str,
        kind: str,
        timestamp: int,
        *,
        importance: float | None = None,
        wall_time: float | None = None,
    ) -> int:
        if kind not in EPISODE_KINDS:
            raise ValueError(f"episode kind must be one of {EPISODE_KINDS}")
        if importance is not None and not 0.0 <= importance <= 1.0:
            raise ValueError("importance must lie in [0, 1]")
        with self._lock:
            if timestamp < self._last_timestamp:
                raise TimestampRegression(f"timestamp {timestamp} < last stored {self._last_timestamp}")
            eid = self._next["episode"]
            self.episodes[eid] = Episode(eid, timestamp, content, kind, importance, timestamp, wall_time=wall_time)
            self._next["episode"] = eid + 1
            self._last_timestamp = timestamp
            return eid

    # semantic

    def write_fact(
        self,
        content: str,
        sources: Sequence[int] = (),
        *,
        created: int | None = None,
        embedding: Sequence[float] | None = None,
    ) -> WriteResult:
        with self._lock:
            for s in sources:
                if s not in self.episodes:
                    raise DanglingSource(s)
            exists = any(f.content == content and not f.redacted for f in self.facts.values())
            fid = self._next["fact"]
            t = self._last_timestamp if created is None else created
            self.facts[fid] = Fact(
                fid, content, tuple(sources), t, None if embedding is None else list(embedding), t
            )
            self._next["fact"] = fid + 1
            return WriteResult(fid, exists)

    # procedural

    def register_procedure(self, proc: Procedure) -> int:
        if proc.kind not in PROCEDURE_KINDS:
            raise ValueError(f"procedure kind must be one of {PROCEDURE_KINDS}")
        with self._lock:
            if proc.name in self.procedures:
                raise ValueError(f"procedure {proc.name!r} already registered")
            stored = Procedure(proc.name, proc.kind, proc.body, proc.mutable, 1, [], self._next["procedure"])
            stored.last_access = self._last_timestamp
            self.procedures[proc.name] = stored
            self._next["procedure"] += 1
            return stored.version

    def update_procedure(self, name: str, body: str) -> int:
        with self._lock:
            proc = self.procedures.get(name)
            if proc is None:
                raise UnknownProcedure(name)
            if not proc.mutable:
                raise MemoryPermissionError(f"procedure {name!r} is immutable")
            if not self.allow_procedural_writes:
                raise MemoryPermissionError("procedural writes are disabled for this store")
            proc.history.append(proc.body)
            proc.body = body
            proc.version += 1
            return proc.version

    def procedure(self, name: str) -> Procedure:
        try:
            return self.procedures[name]
        except KeyError:
            raise UnknownProcedure(name) from None

    # unlearning

    def forget(self, kind: RecordKind, id: int | str, mode: Literal["delete", "redact"] = "delete") -> dict:
        """Delete or redact one record; returns a confirmation dict.

        Redaction blanks the content but keeps the id so facts citing a
        redacted episode still resolve. Deleting an episode that a fact cites
        is refused for the same reason.
        """
        if mode not in ("delete", "redact"):
            raise ValueError("mode must be 'delete' or 'redact'")
        with self._lock:
            if not self.allow_unlearning:
                raise MemoryPermissionError("unlearning is disabled for this store")
            table, key = self._table(kind, id)
            rec = table[key]
            if kind == "procedure" and not rec.mutable:
                raise MemoryPermissionError(f"procedure {key!r} is immutable")
            if mode == "delete":
                if kind == "episode":
                    citing = sorted(f.id for f in self.facts.values() if key in f.sources)
                    if citing:
                        raise MemoryPermissionError(
                            f"episode {key} is cited by facts {citing}; redact it instead"
                        )
                del table[key]
            else:
                if kind == "procedure":
                    rec.body = ""
                    rec.history = []
                else:
                    rec.content = ""
                if kind == "fact":
                    rec.embedding = None
                rec.redacted = True
            stone = {"rec": "tombstone", "target": kind, "id": key, "mode": mode}
            self._tombstones.append(stone)
            return {"target": kind, "id": key, "mode": mode}

    def _table(self, kind: str, id: int | str) -> tuple[dict, Any]:
        if kind == "episode":
            table = self.episodes
        elif kind == "fact":
            table = self.facts
        elif kind == "procedure":
            table = self.procedures
            if not isinstance(id, str):
                id = next((p.name for p in self.procedures.values() if p.id == id), id)
        else:
            raise ValueError(f"unknown record kind {kind!r}")
        if id not in table:
            raise UnknownRecord(f"{kind} {id!r}")
        return table, id

    # reads used by retrieval

    def records(self, kind: RecordKind) -> list:
        """Live records of one kind in id order."""
        if kind == "episode":
            return [self.episodes[k] for k in sorted(self.episodes)]
        if kind == "fact":
            return [self.facts[k] for k in sorted(self.facts)]
        if kind == "procedure":
            return sorted(self.procedures.values(), key=lambda p: p.id)
        raise ValueError(f"unknown record kind {kind!r}")

    def touch(self, kind: RecordKind, id: int, time: int) -> None:
        with self._lock:
            for rec in self.records(kind):
                if rec.id == id:
                    rec.last_access = max(rec.last_access, time)
                    return

    @property
    def last_timestamp(self) -> int:
        return self._last_timestamp

    # transactions and comparison

    @contextlib.contextmanager
    def transaction(self) -> Iterator["AgentMemory"]:
        """Run a block of long-term writes atomically: any exception restores prior state."""
        with self._lock:
            saved = self._state()
            try:
                yield self
            except BaseException:
                self._restore(saved)
                raise

    def _state(self) -> dict:
        return copy.deepcopy(
            {
                "episodes": self.episodes,
                "facts": self.facts,
                "procedures": self.procedures,
                "next": self._next,
                "last": self._last_timestamp,
                "tombstones": self._tombstones,
            }
        )

    def _restore(self, s: dict) -> None:
        self.episodes = s["episodes"]
        self.facts = s["facts"]
        self.procedures = s["procedures"]
        self._next = s["next"]
        self._last_timestamp = s["last"]
        self._tombstones = s["tombstones"]

    def long_term_digest(self, *, include_access: bool = False) -> str:
        """Hash of long-term content; last_access is excluded unless asked for."""
        lines = [json.dumps(r, sort_keys=True) for r in self._records_out(include_access)]
        return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()

    def _records_out(self, include_access: bool = True) -> list[dict]:
        out = []
        for e in self.records("episode"):
            d = {"rec": "episode", **asdict(e)}
            out.append(d)
        for f in self.records("fact"):
            d = {"rec": "fact", **asdict(f)}
            d["sources"] = list(f.sources)
            out.append(d)
        for p in self.records("procedure"):
            out.append({"rec": "procedure", **asdict(p)})
        if not include_access:
            for d in out:
                d.pop("last_access", None)
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AgentMemory):
            return NotImplemented
        return (
            self._records_out() == other._records_out()
            and self.working == other.working
            and self._next == other._next
            and self._last_timestamp == other._last_timestamp
            and self.allow_procedural_writes == other.allow_procedural_writes
            and self.allow_unlearning == other.allow_unlearning
        )

    # persistence

    def snapshot(self, path: str | Path) -> None:
        with self._lock:
            lines = [
                {
                    "rec": "meta",
                    "allow_procedural_writes": self.allow_procedural_writes,
                    "allow_unlearning": self.allow_unlearning,
                    "next": dict(self._next),
                    "last_timestamp": self._last_timestamp,
                }
            ]
            lines.extend(self._records_out())
            lines.extend({"rec": "wm", "key": k, "value": v} for k, v in self.working.to_dict().items())
            lines.extend(self._tombstones)
        with open(path, "w", encoding="utf-8") as fh:
            for rec in lines:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "AgentMemory":
        """Replay a JSON-lines file; later lines override earlier ones."""
        mem = cls()
        seen = {"episode": 0, "fact": 0, "procedure": 0}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    rec = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise FormatError(lineno, f"invalid JSON ({exc.msg})") from None
                if not isinstance(rec, dict) or "rec" not in rec:
                    raise FormatError(lineno, 'expected an object with a "rec" field')
                try:
                    mem._apply(rec, seen)
                except FormatError:
                    raise
                except (KeyError, TypeError, ValueError) as exc:
                    raise FormatError(lineno, f"bad {rec.get('rec')!r} record: {exc}") from None
        for kind, top in seen.items():
            mem._next[kind] = max(mem._next[kind], top + 1)
        if mem.episodes:
            mem._last_timestamp = max(mem._last_timestamp, max(e.timestamp for e in mem.episodes.values()))
        return mem

    def _apply(self, rec: dict, seen: dict) -> None:
        kind = rec["rec"]
        body = {k: v for k, v in rec.items() if k != "rec"}
        if kind == "meta":
            self.allow_procedural_writes = bool(body["allow_procedural_writes"])
            self.allow_unlearning = bool(body["allow_unlearning"])
            self._next.update({k: int(v) for k, v in body.get("next", {}).items()})
            self._last_timestamp = int(body.get("last_timestamp", 0))
        elif kind == "episode":
            e = Episode(**body)
            self.episodes[e.id] = e
            seen["episode"] = max(seen["episode"], e.id)
        elif kind == "fact":
            f = Fact(**body)
            self.facts[f.id] = f
            seen["fact"] = max(seen["fact"], f.id)
        elif kind == "procedure":
            p = Procedure(**body)
            self.procedures[p.name] = p
            seen["procedure"] = max(seen["procedure"], p.id)
        elif kind == "wm":
            value = body["value"]
            _check_value(body["key"], value)
            self.working._vars[body["key"]] = value
        elif kind == "tombstone":
            target, key, mode = body["target"], body["id"], body["mode"]
            table = {"episode": self.episodes, "fact": self.facts, "procedure": self.procedures}[target]
            if mode == "delete":
                table.pop(key, None)
            elif mode == "redact" and key in table:
                r = table[key]
                if target == "procedure":
                    r.body, r.history = "", []
                else:
                    r.content = ""
                r.redacted = True
            elif mode != "redact":
                raise ValueError(f"unknown tombstone mode {mode!r}")
            if isinstance(key, int):
                seen[target] = max(seen[target], key)
            self._tombstones.append(dict(rec))
        else:
            raise ValueError(f"unknown record type {kind!r}")


def snapshot(memory: AgentMemory, path: str | Path) -> None:
    memory.snapshot(path)


def load(path: str | Path) -> AgentMemory:
    return AgentMemory.load(path)
