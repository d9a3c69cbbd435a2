"""Deterministic production systems.

Two flavours live here:

* Markov algorithms: an ordered list of string rewriting rules. At each step
  the highest-priority rule whose pattern occurs in the string fires, at the
  leftmost occurrence. A terminal rule halts the program after firing.
* Condition-action rules over a dict of named state variables, applied
  first-match in priority order (the thermostat agent is the stock example).

Matching is exact code-point substring search; there is no regex layer.
"""

from __future__ import annotations

import json
import operator
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from coala.errors import StepLimitExceeded, UnboundVariable

DEFAULT_MAX_STEPS = 100_000


@dataclass(frozen=True)
class RewriteRule:
    pattern: str
    replacement: str
    terminal: bool = False

    def __str__(self) -> str:
        arrow = "->." if self.terminal else "->"
        return f"{self.pattern!r} {arrow} {self.replacement!r}"


@dataclass(frozen=True)
class RuleSet:
    """Rules in priority order; index 0 is tried first."""

    rules: tuple[RewriteRule, ...]

    def __init__(self, rules: Iterable[RewriteRule]):
        rules = tuple(rules)
        if not rules:
            raise ValueError("a rule set needs at least one rule")
        object.__setattr__(self, "rules", rules)

    def __len__(self) -> int:
        return len(self.rules)

    def __getitem__(self, i: int) -> RewriteRule:
        return self.rules[i]

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RuleSet":
        try:
            raw = doc["rules"]
        except (KeyError, TypeError):
            raise ValueError('rule document must be an object with a "rules" list') from None
        rules = []
        for i, r in enumerate(raw):
            if not isinstance(r.get("pattern"), str) or not isinstance(r.get("replacement"), str):
                raise ValueError(f"rules[{i}]: pattern and replacement must be strings")
            rules.append(RewriteRule(r["pattern"], r["replacement"], bool(r.get("terminal", False))))
        return cls(rules)

    def to_dict(self) -> dict:
        return {
            "rules": [
                {"pattern": r.pattern, "replacement": r.replacement, "terminal": r.terminal}
                for r in self.rules
            ]
        }


def load_rules(path: str | Path) -> RuleSet:
    with open(path, encoding="utf-8") as fh:
        return RuleSet.from_dict(json.load(fh))


@dataclass(frozen=True)
class StepResult:
    input: str
    output: str
    rule: int
    position: int
    halt: bool


class _NoMatch:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NoMatch"

    def __bool__(self) -> bool:
        return False


NoMatch = _NoMatch()


@dataclass(frozen=True)
class RewriteTrace:
    steps: tuple[StepResult, ...]
    halted: bool

    def lines(self) -> list[str]:
        return [f"{s.rule} @{s.position}: {s.input} => {s.output}" for s in self.steps]


def step(rules: RuleSet, s: str) -> StepResult | _NoMatch:
    for index, rule in enumerate(rules.rules):
        # str.find returns 0 for the empty pattern, which is the leftmost empty substring.
        pos = s.find(rule.pattern)
        if pos >= 0:
            out = s[:pos] + rule.replacement + s[pos + len(rule.pattern):]
            return StepResult(s, out, index, pos, rule.terminal)
    return NoMatch


def run(rules: RuleSet, input: str, max_steps: int = DEFAULT_MAX_STEPS) -> tuple[str, RewriteTrace]:
    """Apply `step` until a terminal rule fires or nothing matches.

    Raises StepLimitExceeded when `max_steps` steps have been taken without
    halting.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    steps: list[StepResult] = []
    s = input
    while len(steps) < max_steps:
        res = step(rules, s)
        if res is NoMatch:
            return s, RewriteTrace(tuple(steps), halted=False)
        steps.append(res)
        s = res.output
        if res.halt:
            return s, RewriteTrace(tuple(steps), halted=True)
    raise StepLimitExceeded(max_steps, s)


#: Division by five with remainder: n strokes become Q strokes, "*", R strokes.
DIVISION_RULES = RuleSet(
    [
        RewriteRule("*|||||", "|*"),
        RewriteRule("*", "*", terminal=True),
        RewriteRule("", "*"),
    ]
)


# condition-action rules

_OPS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
}


@dataclass(frozen=True)
class Condition:
    variable: str
    op: str
    value: Any

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unsupported comparison {self.op!r}")

    def holds(self, state: Mapping[str, Any]) -> bool:
        if self.variable not in state:
            raise UnboundVariable(self.variable)
        return bool(_OPS[self.op](state[self.variable], self.value))

    def __str__(self) -> str:
        return f"{self.variable} {self.op} {self.value!r}"


@dataclass(frozen=True)
class ConditionActionRule:
    preconditions: tuple[Condition, ...]
    actions: tuple[str, ...]

    def __init__(self, preconditions: Sequence[Condition], actions: Sequence[str]):
        object.__setattr__(self, "preconditions", tuple(preconditions))
        object.__setattr__(self, "actions", tuple(actions))

    @property
    def variables(self) -> frozenset[str]:
        return frozenset(c.variable for c in self.preconditions)

    def matches(self, state: Mapping[str, Any]) -> bool:
        # Short-circuits, so a variable is only required once evaluation reaches it.
        return all(c.holds(state) for c in self.preconditions)


def fire(rules: Sequence[ConditionActionRule], state: Mapping[str, Any]) -> list[str]:
    """Actions of the first rule whose preconditions all hold, or [] if none do."""
    for rule in rules:
        if rule.matches(state):
            return list(rule.actions)
    return []


def check_schema(rules: Sequence[ConditionActionRule], schema: Iterable[str]) -> None:
    declared = set(schema)
    for rule in rules:
        for name in sorted(rule.variables - declared):
            raise UnboundVariable(name)


THERMOSTAT_RULES = (
    ConditionActionRule([Condition("temperature", ">", 70), Condition("temperature", "<", 72)], ["stop"]),
    ConditionActionRule(
        [Condition("temperature", "<", 32)], ["call for repairs", "turn on electric heater"]
    ),
    ConditionActionRule(
        [Condition("temperature", "<", 70), Condition("furnace", "==", "off")], ["turn on furnace"]
    ),
    ConditionActionRule(
        [Condition("temperature", ">", 72), Condition("furnace", "==", "on")], ["turn off furnace"]
    ),
)
