"""Prompt chains: fixed sequences of productions over a growing string.

Each state in a chain transcript carries its text and the role label of every
segment it is made of (Q question, A answer, O observation, C critique), so a
chain run can be compared against its production sequence, e.g. self-critique
yields Q, QA, QAC, QACA.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal, Sequence

from coala.errors import ChainStepError
from coala.lm.backends import CompletionRequest, GenerativeBackend
from coala.lm.prompts import render

StepKind = Literal["llm-sample", "retrieve", "transform", "external-model"]
ROLES = ("Q", "A", "O", "C", "free")
COT_TRIGGER = "Let's think step by step."


@dataclass(frozen=True)
class ChainStep:
    kind: StepKind
    role: str = "free"
    # llm-sample / external-model: prompt built from the current text via {text}
    template: str = "{text}"
    # transform: pure string rewrite of the whole state
    fn: Callable[[str], str] | None = None
    # transform: role labels of segments the rewrite puts in front of the state
    prepend_roles: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("llm-sample", "retrieve", "transform", "external-model"):
            raise ValueError(f"unknown chain step kind {self.kind!r}")
        for r in (self.role, *self.prepend_roles):
            if r not in ROLES:
                raise ValueError(f"unknown role label {r!r}")
        if self.kind == "transform" and self.fn is None:
            raise ValueError("transform steps need fn")


@dataclass(frozen=True)
class ChainState:
    text: str
    roles: tuple[str, ...]


def chain(
    steps: Sequence[ChainStep],
    input: str,
    backend: GenerativeBackend | None = None,
    retriever: Callable[[str], str] | None = None,
    *,
    external: GenerativeBackend | None = None,
    joiner: str = "\n",
    temperature: float = 0.0,
) -> list[ChainState]:
    """Thread `input` through `steps`; the result has len(steps) + 1 states."""
    if not steps:
        raise ValueError("a chain needs at least one step")
    state = ChainState(input, ("Q",))
    transcript = [state]
    for i, st in enumerate(steps):
        try:
            if st.kind == "transform":
                state = ChainState(st.fn(state.text), st.prepend_roles + state.roles)
            else:
                if st.kind == "retrieve":
                    if retriever is None:
                        raise ValueError("retrieve step without a retriever")
                    segment = retriever(state.text)
                else:
                    model = external if st.kind == "external-model" else backend
                    if model is None:
                        raise ValueError(f"{st.kind} step without a backend")
                    prompt = render(st.template, {"text": state.text})
                    segment = model.sample(CompletionRequest(prompt, temperature=temperature))
                role = st.role if st.role != "free" else ("O" if st.kind != "llm-sample" else "A")
                state = ChainState(state.text + joiner + segment, state.roles + (role,))
        except Exception as exc:
            raise ChainStepError(i, exc) from exc
        transcript.append(state)
    return transcript


# Table-style chain builders


def zero_shot() -> list[ChainStep]:
    return [ChainStep("llm-sample", "A")]


def few_shot(examples: Sequence[tuple[str, str]], joiner: str = "\n") -> list[ChainStep]:
    prefix = joiner.join(f"{q}{joiner}{a}" for q, a in examples)
    return [
        ChainStep("transform", fn=lambda q: prefix + joiner + q, prepend_roles=("Q", "A") * len(examples)),
        ChainStep("llm-sample", "A"),
    ]


def zero_shot_cot(trigger: str = COT_TRIGGER) -> list[ChainStep]:
    # The trigger rewrites Q in place, so no new segment appears.
    return [ChainStep("transform", fn=lambda q: f"{q} {trigger}"), ChainStep("llm-sample", "A")]


def rag() -> list[ChainStep]:
    return [ChainStep("retrieve", "O"), ChainStep("llm-sample", "A")]


def socratic() -> list[ChainStep]:
    return [ChainStep("external-model", "O"), ChainStep("llm-sample", "A")]


def self_critique(critique_cue: str = "Critique:", revise_cue: str = "Revised answer:") -> list[ChainStep]:
    return [
        ChainStep("llm-sample", "A"),
        ChainStep("llm-sample", "C", template="{text}\n" + critique_cue),
        ChainStep("llm-sample", "A", template="{text}\n" + revise_cue),
    ]
