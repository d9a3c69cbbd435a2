"""Parse backend output into actions.

Two surface forms are recognized:

    name[arg]            arity 1, the whole bracket body is the argument
    name[a, b]           arity n >= 2, comma separated
    name / name[]        arity 0
    Final Answer: text   shorthand for the grammar's finish action

A leading ``Action:`` (or ``Action 3:``) label is ignored, and with
multi-line output the last line that parses wins, so ``Thought: ...``
preambles are tolerated.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from coala.errors import ParseError

_CALL = re.compile(r"^(?P<name>[^\[\]\n]+?)\s*\[(?P<body>.*)\]$", re.DOTALL)
_LABEL = re.compile(r"^Action(?:\s*\d+)?\s*:\s*", re.IGNORECASE)
_FINAL = re.compile(r"Final Answer\s*:\s*(?P<text>.*)$", re.DOTALL)


@dataclass(frozen=True)
class ParsedAction:
    name: str
    arguments: tuple[str, ...] = ()

    def __init__(self, name: str, arguments: Sequence[str] = ()):
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "arguments", tuple(arguments))


@dataclass(frozen=True)
class ActionGrammar:
    """Allowed action names mapped to their arity."""

    actions: Mapping[str, int] = field(default_factory=dict)
    finish: str = "finish"

    def __post_init__(self):
        object.__setattr__(self, "actions", dict(self.actions))

    def arity(self, name: str) -> int | None:
        return self.actions.get(name)

    def union(self, other: Mapping[str, int]) -> "ActionGrammar":
        merged = dict(self.actions)
        merged.update(other)
        return ActionGrammar(merged, self.finish)


def _unquote(s: str) -> str:
    s = s.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        return s[1:-1]
    return s


def format_action(name: str, arguments: Sequence[str] = ()) -> str:
    """Canonical text form; ``parse`` inverts it for delimiter-free arguments."""
    if not arguments:
        return name
    return f"{name}[{', '.join(arguments)}]"


def _parse_line(line: str, grammar: ActionGrammar) -> ParsedAction | None:
    line = _LABEL.sub("", line.strip()).strip()
    if not line:
        return None
    m = _CALL.match(line)
    if m is None:
        if grammar.arity(line) == 0:
            return ParsedAction(line)
        return None
    name = m.group("name").strip()
    arity = grammar.arity(name)
    if arity is None:
        return None
    body = m.group("body")
    if arity == 0:
        return ParsedAction(name) if not body.strip() else None
    if arity == 1:
        return ParsedAction(name, [_unquote(body)])
    parts = [_unquote(p) for p in body.split(",")]
    if len(parts) != arity:
        return None
    return ParsedAction(name, parts)


def parse(output: str, grammar: ActionGrammar) -> ParsedAction:
    m = _FINAL.search(output)
    if m is not None:
        if grammar.arity(grammar.finish) is None:
            raise ParseError("grammar has no finish action", output)
        return ParsedAction(grammar.finish, [m.group("text").strip()])
    for line in reversed(output.strip().splitlines()):
        parsed = _parse_line(line, grammar)
        if parsed is not None:
            return parsed
    raise ParseError("output matches no action in the grammar", output)
