"""Config-driven agents: loading, episode runs, transcripts and replay.

An agent config is one JSON document::

    {"name": "react",
     "backend": {"type": "scripted", "table": "../tables/react.json"},
     "memory": {"episodic": true, "semantic": false,
                "allow_procedural_writes": false, "allow_unlearning": false},
     "policy": {...},
     "environment": {"world": "../worlds/two_room.json"},
     "goal": "...", "working": {...}, "procedures": [...],
     "seed": 1, "max_cycles": 10}

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

from coala.decision.cycle import Agent, CycleRecord, cycle
from coala.decision.policy import DecisionPolicy
from coala.errors import CoalaError, HashMismatch, PolicyError, ValidationError
from coala.grounding import Environment, make_environment
from coala.lm.backends import GenerativeBackend, backend_from_config
from coala.memory import PROCEDURE_KINDS, AgentMemory, Procedure

TOP_KEYS = {"name", "backend", "memory", "policy", "environment", "goal", "working", "procedures", "seed", "max_cycles"}
MEMORY_KEYS = {"episodic", "semantic", "allow_procedural_writes", "allow_unlearning"}
BACKEND_KEYS = {"type", "table", "inline", "seed", "url", "timeout"}
BUNDLED = ("saycan", "react", "tot", "reflective", "voyager_lite")


@dataclass(frozen=True)
class MemoryFlags:
    episodic: bool = True
    semantic: bool = True
    allow_procedural_writes: bool = False
    allow_unlearning: bool = False


@dataclass(frozen=True)
class AgentConfig:
    name: str
    backend: Mapping[str, Any]
    policy: DecisionPolicy
    world: Mapping[str, Any]
    memory: MemoryFlags = MemoryFlags()
    goal: str | None = None
    working: Mapping[str, Any] = field(default_factory=dict)
    procedures: tuple[Mapping[str, Any], ...] = ()
    seed: int = 1
    max_cycles: int = 20
    base_dir: Path = Path(".")
    config_hash: str = ""
    source: Path | None = None

    def build_backend(self, seed: int | None = None) -> GenerativeBackend:
        return backend_from_config(self.backend, self.base_dir, self.seed if seed is None else seed)

    def build_environment(self) -> Environment:
        return make_environment(self.world)

    def build_memory(self) -> AgentMemory:
        mem = AgentMemory(
            allow_procedural_writes=self.memory.allow_procedural_writes,
            allow_unlearning=self.memory.allow_unlearning,
        )
        for p in self.procedures:
            mem.register_procedure(Procedure(p["name"], p.get("kind", "prompt-template"), p["body"], p.get("mutable", True)))
        return mem


def config_hash(doc: Mapping[str, Any]) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ValidationError(path, message)


def _strict(doc: Any, allowed: set[str], path: str) -> None:
    _require(isinstance(doc, Mapping), path, "expected an object")
    for key in doc:
        _require(key in allowed, f"{path}.{key}" if path else key, "unknown key")


def _positive_int(doc: Mapping, key: str) -> None:
    v = doc.get(key)
    if v is not None:
        _require(isinstance(v, int) and not isinstance(v, bool) and v >= 1, key, "must be a positive integer")


def _existing(base: Path, rel: Any, path: str) -> Path:
    _require(isinstance(rel, str), path, "expected a file path")
    p = Path(rel)
    if not p.is_absolute():
        p = base / p
    _require(p.is_file(), path, f"file not found: {p}")
    return p


def parse_config(doc: Mapping[str, Any], base_dir: Path = Path("."), source: Path | None = None) -> AgentConfig:
    """Validate an in-memory config document; unknown keys are errors."""
    _strict(doc, TOP_KEYS, "")
    for key in ("backend", "policy", "environment"):
        _require(key in doc, key, "required")
    _positive_int(doc, "seed")
    _positive_int(doc, "max_cycles")

    backend = doc["backend"]
    _strict(backend, BACKEND_KEYS, "backend")
    kind = backend.get("type", "scripted")
    _require(kind in ("scripted", "remote"), "backend.type", "must be 'scripted' or 'remote'")
    if kind == "scripted" and "table" in backend:
        _existing(base_dir, backend["table"], "backend.table")
    if kind == "remote":
        _require(isinstance(backend.get("url"), str), "backend.url", "remote backend needs a url")

    mem = doc.get("memory", {})
    _strict(mem, MEMORY_KEYS, "memory")
    for k, v in mem.items():
        _require(isinstance(v, bool), f"memory.{k}", "must be true or false")
    flags = MemoryFlags(**mem)

    try:
        policy = DecisionPolicy.from_dict(doc["policy"])
    except PolicyError as exc:
        msg = str(exc)
        path, _, rest = msg.partition(": ")
        raise ValidationError(path if rest and path.startswith("policy") else "policy", rest or msg) from None
    except (TypeError, ValueError) as exc:
        raise ValidationError("policy", str(exc)) from None
    for i, trig in enumerate(policy.learning):
        where = f"policy.learning[{i}].action"
        if trig.action == "register-procedure":
            _require(flags.allow_procedural_writes, where, "procedural learning needs memory.allow_procedural_writes")
        if trig.action == "reflect":
            _require(flags.episodic and flags.semantic, where, "reflection needs episodic and semantic memory")
        if trig.action == "append-episode":
            _require(flags.episodic, where, "needs episodic memory")

    env = doc["environment"]
    _strict(env, {"world"}, "environment")
    _require("world" in env, "environment.world", "required")
    if isinstance(env["world"], Mapping):
        world = dict(env["world"])
    else:
        world_path = _existing(base_dir, env["world"], "environment.world")
        try:
            world = json.loads(world_path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ValidationError("environment.world", f"invalid JSON: {exc}") from None
    try:
        make_environment(world)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError("environment.world", str(exc)) from None

    procedures = doc.get("procedures", [])
    _require(isinstance(procedures, list), "procedures", "expected a list")
    for i, p in enumerate(procedures):
        _strict(p, {"name", "kind", "body", "mutable"}, f"procedures[{i}]")
        _require(isinstance(p.get("name"), str) and isinstance(p.get("body"), str), f"procedures[{i}]", "needs name and body")
        _require(p.get("kind", "prompt-template") in PROCEDURE_KINDS, f"procedures[{i}].kind", f"one of {PROCEDURE_KINDS}")

    working = doc.get("working", {})
    _require(isinstance(working, Mapping), "working", "expected an object")
    goal = doc.get("goal")
    _require(goal is None or isinstance(goal, str), "goal", "expected text")

    return AgentConfig(
        name=str(doc.get("name", source.stem if source else "agent")),
        backend=dict(backend),
        policy=policy,
        world=world,
        memory=flags,
        goal=goal,
        working=dict(working),
        procedures=tuple(procedures),
        seed=doc.get("seed", 1),
        max_cycles=doc.get("max_cycles", 20),
        base_dir=base_dir,
        config_hash=config_hash(doc),
        source=source,
    )


def load_config(path: str | Path) -> AgentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(str(path), f"cannot read config: {exc}") from None
    except ValueError as exc:
        raise ValidationError(str(path), f"invalid JSON: {exc}") from None
    return parse_config(doc, path.parent, path)


def bundled_config_path(name: str) -> Path:
    return Path(str(resources.files("coala") / "data" / "agents" / f"{name}.json"))


# transcripts


@dataclass
class Transcript:
    header: dict
    records: list[dict]
    footer: dict

    @property
    def outcome(self) -> str:
        return self.footer["outcome"]

    def cycle_records(self) -> list[CycleRecord]:
        return [CycleRecord.from_dict(r) for r in self.records]

    def lines(self) -> list[str]:
        out = [json.dumps({"type": "header", **self.header}, sort_keys=True)]
        out += [json.dumps({"type": "cycle", **r}, sort_keys=True) for r in self.records]
        out.append(json.dumps({"type": "footer", **self.footer}, sort_keys=True))
        return out

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.lines()) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Transcript":
        header, footer, records = None, None, []
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                kind = doc.pop("type")
            except (ValueError, KeyError, AttributeError):
                raise ValueError(f"{path}:{n}: not a transcript line") from None
            if kind == "header":
                header = doc
            elif kind == "footer":
                footer = doc
            elif kind == "cycle":
                records.append(doc)
            else:
                raise ValueError(f"{path}:{n}: unknown line type {kind!r}")
        if header is None or footer is None:
            raise ValueError(f"{path}: transcript is missing its header or footer")
        idx = [r["cycle_index"] for r in records]
        if idx and idx != list(range(idx[0], idx[0] + len(idx))):
            raise ValueError(f"{path}: cycle indices are not contiguous")
        return cls(header, records, footer)


def transcript_path(log_dir: str | Path, name: str, seed: int) -> Path:
    return Path(log_dir) / f"{name}-seed{seed}.jsonl"


def assemble(config: AgentConfig, seed: int | None = None) -> Agent:
    seed = config.seed if seed is None else seed
    memory = config.build_memory()
    agent = Agent(
        config.policy,
        config.build_backend(seed),
        memory,
        config.build_environment(),
        seed=seed,
        record_episodes=config.memory.episodic,
    )
    if config.goal is not None:
        memory.working.set("goal", config.goal)
    for k, v in config.working.items():
        memory.working.set(k, v)
    return agent


def run_episode(
    config: AgentConfig,
    log_dir: str | Path | None = None,
    *,
    seed: int | None = None,
    max_cycles: int | None = None,
) -> Transcript:
    """Reset, loop cycles until the episode and its learning are done, write logs."""
    seed = config.seed if seed is None else seed
    limit = config.max_cycles if max_cycles is None else max_cycles
    header = {"agent": config.name, "config_hash": config.config_hash, "seed": seed, "max_cycles": limit}
    records: list[dict] = []
    outcome, error = None, None
    agent = None
    try:
        agent = assemble(config, seed)
        agent.start_episode()
        while len(records) < limit:
            if agent.env.done and agent.pending_trigger() is None:
                break
            rec = cycle(agent)
            records.append(rec.to_dict())
            if rec.error is not None:
                outcome, error = "error", rec.error
                break
        if outcome is None:
            if agent.env.done:
                outcome = "success" if agent.env.success else "failure"
            else:
                outcome = "budget_exhausted"
    except (CoalaError, ValueError) as exc:
        outcome, error = "error", {"type": type(exc).__name__, "message": str(exc)}
    footer = {
        "outcome": outcome,
        "reward": agent.env.episode_reward if agent is not None and agent.env is not None else 0.0,
        "cycles": len(records),
    }
    if error is not None:
        footer["error"] = error
    transcript = Transcript(header, records, footer)
    if log_dir is not None:
        path = transcript.write(transcript_path(log_dir, config.name, seed))
        if agent is not None:
            agent.memory.snapshot(path.with_suffix(".memory.jsonl"))
    return transcript


@dataclass
class ReplayReport:
    match: bool
    cycles: int
    divergence: int | None = None
    expected: dict | None = None
    actual: dict | None = None

    def summary(self) -> str:
        if self.match:
            return f"match: {self.cycles} cycle(s) replayed bit-exact"
        where = "footer" if self.divergence is None else f"cycle {self.divergence}"
        return f"divergence at {where}"


def _canon(d: Mapping | None) -> str:
    return json.dumps(d, sort_keys=True)


def replay(transcript: str | Path | Transcript, config: AgentConfig | str | Path) -> ReplayReport:
    """Re-run the recorded episode and compare it record by record."""
    recorded = transcript if isinstance(transcript, Transcript) else Transcript.load(transcript)
    if not isinstance(config, AgentConfig):
        config = load_config(config)
    if recorded.header.get("config_hash") != config.config_hash:
        raise HashMismatch(
            f"transcript was produced by config {recorded.header.get('config_hash')}, not {config.config_hash}"
        )
    fresh = run_episode(config, seed=recorded.header["seed"], max_cycles=recorded.header.get("max_cycles"))
    for i, (a, b) in enumerate(zip(recorded.records, fresh.records)):
        if _canon(a) != _canon(b):
            return ReplayReport(False, i, a.get("cycle_index", i + 1), a, b)
    if len(recorded.records) != len(fresh.records):
        i = min(len(recorded.records), len(fresh.records))
        a = recorded.records[i] if i < len(recorded.records) else None
        b = fresh.records[i] if i < len(fresh.records) else None
        return ReplayReport(False, i, (a or b)["cycle_index"], a, b)
    if _canon(recorded.footer) != _canon(fresh.footer):
        return ReplayReport(False, len(fresh.records), None, recorded.footer, fresh.footer)
    return ReplayReport(True, len(fresh.records))


def run_batch(
    config: AgentConfig,
    n: int,
    log_dir: str | Path | None = None,
    *,
    parallel: int = 1,
    max_cycles: int | None = None,
) -> list[Transcript]:
    """Episodes seed, seed+1, ... on separate agents; results in seed order."""
    if n < 1 or parallel < 1:
        raise ValueError("n and parallel must be >= 1")
    seeds = [config.seed + i for i in range(n)]
    if parallel == 1:
        return [run_episode(config, log_dir, seed=s, max_cycles=max_cycles) for s in seeds]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(lambda s: run_episode(config, log_dir, seed=s, max_cycles=max_cycles), seeds))


def with_overrides(config: AgentConfig, **changes) -> AgentConfig:
    return replace(config, **changes)


def planning_events(transcript: Transcript, kind: str | None = None) -> list[dict]:
    return [e for r in transcript.records for e in r["planning"] if kind is None or e["kind"] == kind]


def executed_actions(transcript: Transcript) -> list[dict]:
    return [r["selected"] for r in transcript.records if r.get("selected") is not None]


__all__: Sequence[str] = [
    "AgentConfig",
    "BUNDLED",
    "MemoryFlags",
    "ReplayReport",
    "Transcript",
    "assemble",
    "bundled_config_path",
    "config_hash",
    "executed_actions",
    "load_config",
    "parse_config",
    "planning_events",
    "replay",
    "run_batch",
    "run_episode",
]
