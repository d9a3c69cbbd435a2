"""Prompt templates with ``{name}`` placeholders."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

from coala.errors import MissingBinding

# Only identifier-shaped braces are placeholders, so JSON snippets in a body survive.
PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str

    def __post_init__(self):
        names = PLACEHOLDER.findall(self.body)
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValueError(f"template {self.id!r} repeats placeholders: {', '.join(dupes)}")

    @property
    def placeholders(self) -> tuple[str, ...]:
        return tuple(PLACEHOLDER.findall(self.body))


def render(template: PromptTemplate | str, bindings: Mapping[str, object]) -> str:
    """Substitute every placeholder in one pass.

    Values are converted with ``str``; lists of strings are joined by newlines.
    Raises MissingBinding naming the first unbound placeholder.
    """
    body = template.body if isinstance(template, PromptTemplate) else template
    for name in PLACEHOLDER.findall(body):
        if name not in bindings:
            raise MissingBinding(name)

    def sub(m: re.Match) -> str:
        value = bindings[m.group(1)]
        if isinstance(value, (list, tuple)):
            return "\n".join(str(v) for v in value)
        return str(value)

    return PLACEHOLDER.sub(sub, body)
