"""External actions: environments that present the world as a text game.

Invalid actions never raise. They come back as an error observation (with
``metadata["error"] = True``) and leave the environment state untouched, so
an agent can read the failure text and recover. Only stepping a finished
episode raises.
"""

from __future__ import annotations

import fnmatch
import hashlib
import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from coala.errors import EpisodeFinished, ParseError, ToolError
from coala.lm.parsing import ActionGrammar, format_action, parse


@dataclass(frozen=True)
class GroundingAction:
    name: str
    arguments: tuple[str, ...] = ()

    def __init__(self, name: str, arguments: Sequence[str] = ()):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "arguments", tuple(arguments))

    @property
    def text(self) -> str:
        return format_action(self.name, self.arguments)

    def to_dict(self) -> dict:
        return {"type": "grounding", "name": self.name, "arguments": list(self.arguments)}


@dataclass
class Observation:
    text: str
    reward: float | None = None
    done: bool = False
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.text is None:
            raise ValueError("observation text may be empty but not None")

    @property
    def error(self) -> bool:
        return bool(self.metadata.get("error"))

    def to_dict(self) -> dict:
        return {"text": self.text, "reward": self.reward, "done": self.done, "metadata": dict(self.metadata)}


class Environment:
    """Base class: vocabulary checks, done handling and reward bookkeeping.

    Subclasses implement ``_reset`` and ``_apply``; ``_apply`` returns an
    Observation and must not mutate state when it reports an error.
    """

    vocabulary: dict[str, int] = {}

    def __init__(self):
        self.done = False
        self.episode_reward = 0.0
        self.success = False

    @property
    def grammar(self) -> ActionGrammar:
        return ActionGrammar(self.vocabulary)

    def reset(self, seed: int | None = None) -> Observation:
        self.done = False
        self.episode_reward = 0.0
        self.success = False
        return self._reset(seed)

    def step(self, action: GroundingAction) -> Observation:
        if self.done:
            raise EpisodeFinished("the episode is over; call reset()")
        if action.name not in self.vocabulary:
            return self.error(f"Unknown action: {action.name}")
        arity = self.vocabulary[action.name]
        if len(action.arguments) != arity:
            return self.error(f"{action.name} takes {arity} argument(s), got {len(action.arguments)}")
        obs = self._apply(action)
        if obs.error:
            return obs
        if obs.reward:
            self.episode_reward += obs.reward
        if obs.done:
            self.done = True
            self.success = bool(obs.metadata.get("success"))
        return obs

    def fingerprint(self) -> str:
        """Digest of the instance state, for checking that nothing moved."""
        state = sorted((k, repr(v)) for k, v in vars(self).items())
        return hashlib.sha256(repr(state).encode("utf-8")).hexdigest()

    @staticmethod
    def error(text: str) -> Observation:
        return Observation(text, None, False, {"error": True})

    def _reset(self, seed: int | None) -> Observation:
        raise NotImplementedError

    def _apply(self, action: GroundingAction) -> Observation:
        raise NotImplementedError


def _listing(items: Sequence[str]) -> str:
    return ", ".join(items) if items else "nothing"


class GridTextWorld(Environment):
    """Rooms joined by named exits, items to pick up, and a goal predicate.

    World file::

        {"type": "grid",
         "rooms": {"A": {"items": ["key"], "exits": {"east": "B"}}, ...},
         "start": "A",
         "goal": {"room": "B", "holding": ["key"]},
         "step_limit": null}

    A room may carry a display ``name``; the default is ``"room <id>"``.
    With a step limit, the episode ends in failure once that many accepted
    actions have been taken without reaching the goal.
    """

    vocabulary = {"go": 1, "take": 1, "drop": 1, "look": 0, "inventory": 0}

    def __init__(self, world: Mapping[str, Any]):
        super().__init__()
        self.world = json.loads(json.dumps(world))
        rooms = self.world.get("rooms") or {}
        if not rooms:
            raise ValueError("world needs at least one room")
        self.start = self.world.get("start", next(iter(rooms)))
        if self.start not in rooms:
            raise ValueError(f"start room {self.start!r} is not defined")
        for rid, room in rooms.items():
            for d, target in room.get("exits", {}).items():
                if target not in rooms:
                    raise ValueError(f"exit {d!r} of room {rid!r} leads to unknown room {target!r}")
        self.goal = self.world.get("goal", {})
        self.step_limit = self.world.get("step_limit")
        self.reward_value = float(self.world.get("reward", 1.0))
        self._reset(None)

    def _reset(self, seed):
        self.room = self.start
        self.items = {rid: list(r.get("items", [])) for rid, r in self.world["rooms"].items()}
        self.holding: list[str] = []
        self.steps = 0
        return Observation(self.describe())

    def _name(self, rid: str) -> str:
        return self.world["rooms"][rid].get("name", f"room {rid}")

    def describe(self) -> str:
        exits = list(self.world["rooms"][self.room].get("exits", {}))
        return f"You are in {self._name(self.room)}. You see: {_listing(self.items[self.room])}. Exits: {_listing(exits)}."

    def _goal_met(self) -> bool:
        if not self.goal:
            return False
        if "room" in self.goal and self.room != self.goal["room"]:
            return False
        return all(i in self.holding for i in self.goal.get("holding", []))

    def _apply(self, action):
        name, args = action.name, action.arguments
        if name == "go":
            exits = self.world["rooms"][self.room].get("exits", {})
            if args[0] not in exits:
                return self.error("You can't go that way.")
            self.room = exits[args[0]]
            text = self.describe()
        elif name == "take":
            if args[0] not in self.items[self.room]:
                return self.error(f"You can't see any {args[0]} here.")
            self.items[self.room].remove(args[0])
            self.holding.append(args[0])
            text = f"You take the {args[0]}."
        elif name == "drop":
            if args[0] not in self.holding:
                return self.error(f"You are not holding any {args[0]}.")
            self.holding.remove(args[0])
            self.items[self.room].append(args[0])
            text = f"You drop the {args[0]}."
        elif name == "look":
            text = self.describe()
        else:
            text = f"You are holding: {_listing(self.holding)}."
        self.steps += 1
        if self._goal_met():
            return Observation(text, self.reward_value, True, {"success": True})
        if self.step_limit is not None and self.steps >= self.step_limit:
            return Observation(text + " Time is up.", 0.0, True, {"success": False})
        return Observation(text, 0.0)


class SkillWorld(Environment):
    """A fixed set of zero-argument skills, each with a scripted outcome.

    World file::

        {"type": "skills", "instruction": "...",
         "skills": {"find apple": {"observation": "...", "reward": 1.0, "done": true}, ...}}
    """

    def __init__(self, world: Mapping[str, Any]):
        super().__init__()
        self.world = dict(world)
        self.skills = dict(self.world.get("skills", {}))
        if not self.skills:
            raise ValueError("skill world needs at least one skill")
        self.vocabulary = {name: 0 for name in self.skills}

    def _reset(self, seed):
        return Observation(
            f"Instruction: {self.world.get('instruction', '')} Skills: {', '.join(self.skills)}."
        )

    def _apply(self, action):
        skill = self.skills[action.name]
        done = bool(skill.get("done", False))
        reward = float(skill.get("reward", 0.0))
        meta = {"success": reward > 0} if done else {}
        return Observation(skill.get("observation", f"You {action.name}."), reward, done, meta)


class AnswerEnvironment(Environment):
    """Single external action: submit a final answer, checked against the key."""

    def __init__(self, world: Mapping[str, Any]):
        super().__init__()
        self.question = world["question"]
        self.answer = str(world["answer"])
        self.vocabulary = {world.get("finish", "finish"): 1}

    def _reset(self, seed):
        return Observation(self.question)

    def _apply(self, action):
        if action.arguments[0].strip() == self.answer:
            return Observation("Correct.", 1.0, True, {"success": True})
        return Observation("Incorrect.", 0.0, True, {"success": False})


class CraftWorld(Environment):
    """Gather raw materials and craft items from recipes.

    World file::

        {"type": "craft",
         "sources": {"collect": ["stick"], "mine": ["stone"]},
         "recipes": {"stone sword": ["stick", "stone"]},
         "goal": {"holding": ["stone sword"]}}
    """

    def __init__(self, world: Mapping[str, Any]):
        super().__init__()
        self.sources = {k: list(v) for k, v in world.get("sources", {}).items()}
        self.recipes = {k: list(v) for k, v in world.get("recipes", {}).items()}
        self.goal = world.get("goal", {})
        self.vocabulary = {verb: 1 for verb in self.sources}
        self.vocabulary.update({"craft": 1, "inventory": 0})
        self.inventory: list[str] = []

    def _reset(self, seed):
        self.inventory = []
        return Observation(f"Your inventory is empty. Goal: hold {_listing(self.goal.get('holding', []))}.")

    def _apply(self, action):
        name = action.name
        if name == "inventory":
            return Observation(f"You are holding: {_listing(self.inventory)}.", 0.0)
        item = action.arguments[0]
        if name == "craft":
            need = self.recipes.get(item)
            if need is None:
                return self.error(f"There is no recipe for {item}.")
            missing = [n for n in need if n not in self.inventory]
            if missing:
                return self.error(f"You need {_listing(missing)} to craft {item}.")
            for n in need:
                self.inventory.remove(n)
            self.inventory.append(item)
            text = f"You craft a {item}."
        else:
            if item not in self.sources[name]:
                return self.error(f"You can't {name} {item}.")
            self.inventory.append(item)
            text = f"You {name} a {item}."
        if self.goal and all(i in self.inventory for i in self.goal.get("holding", [])):
            return Observation(text, 1.0, True, {"success": True})
        return Observation(text, 0.0)


# tools


@dataclass(frozen=True)
class ToolBinding:
    name: str
    arity: int
    fn: Callable[..., str]


def tool_call(binding: ToolBinding, arguments: Sequence[str]) -> str:
    if len(arguments) != binding.arity:
        raise ToolError(f"{binding.name} takes {binding.arity} argument(s), got {len(arguments)}")
    try:
        return str(binding.fn(*arguments))
    except ToolError:
        raise
    except Exception as exc:
        raise ToolError(str(exc)) from exc


_ARITH = re.compile(r"^\s*(-?\d+)\s*([-+*/])\s*(-?\d+)\s*$")


def calculate(expr: str) -> str:
    """Evaluate exactly one ``<int> <op> <int>`` expression."""
    m = _ARITH.match(expr)
    if m is None:
        raise ToolError(f"expected '<int> <op> <int>', got {expr!r}")
    a, op, b = int(m.group(1)), m.group(2), int(m.group(3))
    if op == "+":
        return str(a + b)
    if op == "-":
        return str(a - b)
    if op == "*":
        return str(a * b)
    if b == 0:
        raise ToolError("division by zero")
    q = Fraction(a, b)
    return str(q.numerator) if q.denominator == 1 else str(float(q))


CALCULATOR = ToolBinding("calculator", 1, calculate)


class ToolEnvironment(Environment):
    """Stateless tools exposed as a single-use environment; ``finish`` ends it."""

    def __init__(self, tools: Sequence[ToolBinding], finish: str = "finish"):
        super().__init__()
        self.tools = {t.name: t for t in tools}
        self.finish = finish
        self.vocabulary = {t.name: t.arity for t in tools}
        self.vocabulary[finish] = 1

    def _reset(self, seed):
        return Observation(f"Tools: {', '.join(self.tools)}.")

    def _apply(self, action):
        if action.name == self.finish:
            return Observation(action.arguments[0], 0.0, True, {"success": True, "answer": action.arguments[0]})
        try:
            return Observation(tool_call(self.tools[action.name], action.arguments), 0.0)
        except ToolError as exc:
            return self.error(f"Tool error: {exc}")


# dialogue


@dataclass
class DialogueStub:
    """Scripted interlocutor: first glob pattern that matches picks the reply."""

    script: list[tuple[str, str]] = field(default_factory=list)
    default: str = "I don't understand."


def dialogue_step(stub: DialogueStub, utterance: str) -> str:
    for pattern, reply in stub.script:
        if fnmatch.fnmatchcase(utterance, pattern):
            return reply
    return stub.default


# programs: text skills run as a sequence of primitive actions


def run_program(env: Environment, body: str) -> Observation:
    """Execute ``a; b; c`` (or newline separated) actions until error or done.

    The whole program counts as one grounding action for the caller; the
    combined observation concatenates the per-step texts.
    """
    statements = [s.strip() for s in re.split(r"[;\n]", body) if s.strip()]
    if not statements:
        return Environment.error("Empty program.")
    texts: list[str] = []
    reward = 0.0
    for n, stmt in enumerate(statements):
        try:
            parsed = parse(stmt, env.grammar)
            obs = env.step(GroundingAction(parsed.name, parsed.arguments))
        except ParseError:
            obs = Environment.error(f"Unknown action: {stmt}")
        texts.append(obs.text)
        reward += obs.reward or 0.0
        if obs.error:
            # only a failure on the first statement leaves the world untouched
            meta = {"failed_statement": stmt, "error": n == 0}
            return Observation(" ".join(texts), reward, False, meta)
        if obs.done:
            return Observation(" ".join(texts), reward, True, dict(obs.metadata))
    return Observation(" ".join(texts), reward, False, {})


WORLD_TYPES: dict[str, type[Environment]] = {
    "grid": GridTextWorld,
    "skills": SkillWorld,
    "answer": AnswerEnvironment,
    "craft": CraftWorld,
}


def make_environment(world: Mapping[str, Any]) -> Environment:
    kind = world.get("type", "grid")
    try:
        return WORLD_TYPES[kind](world)
    except KeyError:
        raise ValueError(f"unknown world type {kind!r}") from None


def load_world(path: str | Path) -> Environment:
    with open(path, encoding="utf-8") as fh:
        return make_environment(json.load(fh))


def env_reset(env: Environment, seed: int | None = None) -> Observation:
    return env.reset(seed)


def env_step(env: Environment, action: GroundingAction) -> Observation:
    return env.step(action)
