"""Decision policies and the action types a cycle can select."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

from coala.errors import PolicyError
from coala.grounding import GroundingAction
from coala.lm.parsing import format_action
from coala.retrieval import ScorerConfig

PROPOSALS = ("enumerate-all", "sample-n", "reason-then-sample", "tree-search")
EVALUATIONS = ("none", "backend-score", "affordance-product", "reason-value")
SELECTIONS = ("argmax", "softmax", "majority-vote", "first")
LEARNING_KINDS = ("append-episode", "write-fact", "register-procedure", "forget")
TRIGGER_EVENTS = ("success", "failure", "done")
STORES = ("episode", "fact", "procedure")


@dataclass(frozen=True)
class LearningAction:
    kind: str
    payload: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LEARNING_KINDS:
            raise PolicyError(f"learning kind must be one of {LEARNING_KINDS}")

    @property
    def text(self) -> str:
        p = self.payload
        if "facts" in p:
            return format_action(self.kind, [f["content"] for f in p["facts"]])
        for key in ("content", "name", "id"):
            if key in p:
                return format_action(self.kind, [str(p[key])])
        return self.kind

    def to_dict(self) -> dict:
        return {"type": "learning", "kind": self.kind, "payload": dict(self.payload)}


Action = GroundingAction | LearningAction


@dataclass
class ActionCandidate:
    action: Action
    value: float | None = None
    rationale: str | None = None
    source: str = "proposed"

    @property
    def text(self) -> str:
        return self.action.text

    def to_dict(self) -> dict:
        return {
            "action": self.action.to_dict(),
            "value": self.value,
            "rationale": self.rationale,
            "source": self.source,
        }


def _strict(doc: Mapping[str, Any], allowed: set[str], path: str) -> None:
    if not isinstance(doc, Mapping):
        raise PolicyError(f"{path}: expected an object")
    for key in doc:
        if key not in allowed:
            raise PolicyError(f"{path}.{key}: unknown key")


@dataclass(frozen=True)
class ReasoningStep:
    """Render ``template`` from working memory, sample, write to ``target``.

    Output written to ``scratchpad`` is appended; any other target is
    overwritten. With ``if_missing`` the step is skipped once the target is set.
    """

    template: str
    id: str = "think"
    target: str = "scratchpad"
    if_missing: bool = False

    @classmethod
    def from_dict(cls, doc, path="reasoning") -> "ReasoningStep":
        if isinstance(doc, str):
            return cls(doc)
        _strict(doc, {"template", "id", "target", "if_missing"}, path)
        return cls(**doc)


@dataclass(frozen=True)
class RetrievalStep:
    query: str = "{goal}"
    store: str = "episode"
    k: int = 3
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    target: str = "retrieved"

    def __post_init__(self):
        if self.store not in STORES:
            raise PolicyError(f"retrieval store must be one of {STORES}")
        if self.k < 1:
            raise PolicyError("retrieval k must be >= 1")

    @classmethod
    def from_dict(cls, doc, path="retrieval") -> "RetrievalStep":
        _strict(doc, {"query", "store", "k", "target", "scorer", "weights", "decay", "k1", "b"}, path)
        scorer_keys = {k: doc[k] for k in ("scorer", "weights", "decay", "k1", "b") if k in doc}
        try:
            scorer = ScorerConfig.from_dict(scorer_keys)
        except (TypeError, ValueError) as exc:
            raise PolicyError(f"{path}: {exc}") from None
        rest = {k: v for k, v in doc.items() if k in ("query", "store", "k", "target")}
        return cls(scorer=scorer, **rest)


@dataclass(frozen=True)
class LearningTrigger:
    """Fixed-schedule learning that fires once when an episode ends.

    ``reflect`` retrieves episodes, prompts over them and writes one fact per
    output line; ``register-procedure`` stores the working-memory program as
    a named skill; ``append-episode`` stores an outcome summary.
    """

    on: str
    action: str
    reasoning: tuple[ReasoningStep, ...] = ()
    retrieval: RetrievalStep | None = None
    template: str = "{episodes}\nReflection:"
    name_key: str = "task"
    body_key: str = "program"
    procedure_kind: str = "code-skill"
    content: str = "{observation}"

    def __post_init__(self):
        if self.on not in TRIGGER_EVENTS:
            raise PolicyError(f"trigger 'on' must be one of {TRIGGER_EVENTS}")
        if self.action not in ("reflect", "register-procedure", "append-episode"):
            raise PolicyError("trigger action must be reflect, register-procedure or append-episode")

    @property
    def learning_kind(self) -> str:
        return "write-fact" if self.action == "reflect" else self.action

    @classmethod
    def from_dict(cls, doc, path="learning") -> "LearningTrigger":
        _strict(
            doc,
            {"on", "action", "reasoning", "retrieval", "template", "name_key", "body_key", "procedure_kind", "content"},
            path,
        )
        d = dict(doc)
        d["reasoning"] = tuple(
            ReasoningStep.from_dict(r, f"{path}.reasoning[{i}]") for i, r in enumerate(d.get("reasoning", []))
        )
        if d.get("retrieval") is not None:
            d["retrieval"] = RetrievalStep.from_dict(d["retrieval"], f"{path}.retrieval")
        return cls(**d)


@dataclass(frozen=True)
class TreeSearchConfig:
    strategy: str = "BFS"
    breadth: int = 1
    depth: int = 3
    budget: int = 1000
    propose_template: str = "{question}\n{thoughts}\nNext thoughts:"
    value_template: str = "{question}\n{thoughts}\nValue:"
    answer_prefix: str = "Answer:"
    success_threshold: float = 1.0

    @classmethod
    def from_dict(cls, doc, path="tree_search") -> "TreeSearchConfig":
        _strict(doc, set(cls.__dataclass_fields__), path)
        cfg = cls(**doc)
        if cfg.strategy not in ("BFS", "DFS"):
            raise PolicyError(f"{path}.strategy: must be BFS or DFS")
        return cfg


@dataclass(frozen=True)
class DecisionPolicy:
    proposal: str = "sample-n"
    evaluation: str = "none"
    selection: str = "first"
    budget: int = 1
    n: int = 1
    temperature: float = 0.0
    proposal_template: str = "{observation}\nAction:"
    evaluation_template: str = "{observation}\n"
    actions: tuple[str, ...] | None = None
    affordances: Mapping[str, float] = field(default_factory=dict)
    softmax_temperature: float = 1.0
    value_floor: float = -math.inf
    reasoning_templates: tuple[ReasoningStep, ...] = ()
    retrieval: tuple[RetrievalStep, ...] = ()
    learning: tuple[LearningTrigger, ...] = ()
    tree_search: TreeSearchConfig | None = None
    programs: bool = False
    learning_candidates: bool = False
    stop: tuple[str, ...] = ()

    def __post_init__(self):
        if self.proposal not in PROPOSALS:
            raise PolicyError(f"proposal must be one of {PROPOSALS}")
        if self.evaluation not in EVALUATIONS:
            raise PolicyError(f"evaluation must be one of {EVALUATIONS}")
        if self.selection not in SELECTIONS:
            raise PolicyError(f"selection must be one of {SELECTIONS}")
        if self.evaluation == "none" and self.selection not in ("first", "majority-vote"):
            raise PolicyError("evaluation 'none' leaves values unset, so selection must be 'first'")
        if self.budget < 1 or self.n < 1:
            raise PolicyError("budget and n must be >= 1")
        if self.proposal == "reason-then-sample" and not self.reasoning_templates:
            raise PolicyError("reason-then-sample needs at least one reasoning template")
        if self.proposal == "tree-search" and self.tree_search is None:
            raise PolicyError("tree-search proposal needs a tree_search block")
        if self.softmax_temperature <= 0:
            raise PolicyError("softmax temperature must be > 0")
        for name, a in self.affordances.items():
            if not 0.0 <= a <= 1.0:
                raise PolicyError(f"affordance for {name!r} must lie in [0, 1]")

    @property
    def keeps_duplicates(self) -> bool:
        return self.selection == "majority-vote"

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], path: str = "policy") -> "DecisionPolicy":
        _strict(doc, set(cls.__dataclass_fields__), path)
        d = dict(doc)
        d["reasoning_templates"] = tuple(
            ReasoningStep.from_dict(r, f"{path}.reasoning_templates[{i}]")
            for i, r in enumerate(d.get("reasoning_templates", []))
        )
        retrieval = d.get("retrieval", [])
        if isinstance(retrieval, Mapping):
            retrieval = [retrieval]
        d["retrieval"] = tuple(
            RetrievalStep.from_dict(r, f"{path}.retrieval[{i}]") for i, r in enumerate(retrieval or [])
        )
        d["learning"] = tuple(
            LearningTrigger.from_dict(t, f"{path}.learning[{i}]") for i, t in enumerate(d.get("learning", []))
        )
        if d.get("tree_search") is not None:
            d["tree_search"] = TreeSearchConfig.from_dict(d["tree_search"], f"{path}.tree_search")
        if d.get("actions") is not None:
            d["actions"] = tuple(d["actions"])
        if "stop" in d:
            d["stop"] = tuple(d["stop"])
        if d.get("value_floor") is None:
            d.pop("value_floor", None)
        return cls(**d)
