"""The decision cycle: plan (retrieve, reason, propose, evaluate, select), then execute.

Reasoning and retrieval only ever happen during planning and only touch
working memory (retrieval also bumps last_access on the records it returns).
Each completed cycle executes exactly one grounding or learning action.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from coala.decision.policy import (
    ActionCandidate,
    DecisionPolicy,
    LearningAction,
    LearningTrigger,
    ReasoningStep,
    RetrievalStep,
    TreeSearchConfig,
)
from coala.decision.search import tree_search
from coala.errors import (
    CapabilityError,
    CoalaError,
    EpisodeFinished,
    MemoryPermissionError,
    NoCandidates,
    ParseError,
)
from coala.grounding import Environment, GroundingAction, Observation, run_program
from coala.lm.backends import CompletionRequest, GenerativeBackend
from coala.lm.backends import score as backend_score
from coala.lm.parsing import ActionGrammar, parse
from coala.lm.prompts import render
from coala.memory import AgentMemory, Procedure, WorkingMemory
from coala.retrieval import Query, ScorerConfig, retrieve

logger = logging.getLogger(__name__)

#: Internal-to-text verbs a policy may let the backend propose as learning actions.
LEARNING_VERBS = {"append_episode": "append-episode", "write_fact": "write-fact"}
PROGRAM_VERBS = {"run": 1, "use": 1}


class _Reject:
    def __repr__(self) -> str:
        return "Reject"

    def __bool__(self) -> bool:
        return False


Reject = _Reject()


@dataclass
class CycleRecord:
    cycle_index: int
    planning: list[dict] = field(default_factory=list)
    candidates: list[dict] = field(default_factory=list)
    parse_failures: list[str] = field(default_factory=list)
    rounds: int = 0
    selected: dict | None = None
    result: dict | None = None
    error: dict | None = None

    @property
    def completed(self) -> bool:
        return self.error is None and self.selected is not None

    def to_dict(self) -> dict:
        return {
            "cycle_index": self.cycle_index,
            "planning": self.planning,
            "rounds": self.rounds,
            "candidates": self.candidates,
            "parse_failures": self.parse_failures,
            "selected": self.selected,
            "result": self.result,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CycleRecord":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class Agent:
    policy: DecisionPolicy
    backend: GenerativeBackend
    memory: AgentMemory = field(default_factory=AgentMemory)
    env: Environment | None = None
    seed: int = 0
    record_episodes: bool = False
    # called between planning and execution; tests use it to check purity
    on_planned: Callable[["Agent", CycleRecord], None] | None = None
    fired: set = field(default_factory=set)
    last_observation: Observation | None = None

    @property
    def wm(self) -> WorkingMemory:
        return self.memory.working

    @property
    def grammar(self) -> ActionGrammar:
        vocab: dict[str, int] = dict(self.env.vocabulary) if self.env is not None else {}
        if self.policy.programs:
            vocab.update(PROGRAM_VERBS)
        if self.policy.learning_candidates:
            vocab.update({k: 1 for k in LEARNING_VERBS})
        return ActionGrammar(vocab)

    def observe(self, obs: Observation, action: str | None = None) -> None:
        self.last_observation = obs
        self.wm.set("observation", obs.text)
        if self.record_episodes:
            content = obs.text if action is None else f"{action} -> {obs.text}"
            self.memory.append_episode(content, "observation", self.wm.cycle_index)

    def start_episode(self) -> Observation:
        if self.env is None:
            raise ValueError("agent has no environment")
        self.fired = set()
        obs = self.env.reset(self.seed)
        self.wm.set("episode_start", self.wm.cycle_index)
        self.observe(obs)
        return obs

    def pending_trigger(self) -> LearningTrigger | None:
        if self.env is None or not self.env.done:
            return None
        outcome = "success" if self.env.success else "failure"
        for i, trig in enumerate(self.policy.learning):
            if i not in self.fired and trig.on in (outcome, "done"):
                return trig
        return None


def _cycle_seed(seed: int, cycle_index: int, round_: int) -> int:
    h = hashlib.sha256(f"{seed}:{cycle_index}:{round_}".encode()).digest()
    return int.from_bytes(h[:8], "big")


def _bindings(agent: Agent, extra: Mapping[str, Any] | None = None) -> dict[str, Any]:
    b = agent.wm.bindings()
    if agent.env is not None:
        b.setdefault("actions", ", ".join(agent.env.vocabulary))
    b.setdefault("skills", ", ".join(sorted(agent.memory.procedures)) or "none")
    if extra:
        b.update(extra)
    return b


# planning: reasoning and retrieval


def reason(
    wm: WorkingMemory,
    template: str | ReasoningStep,
    backend: GenerativeBackend,
    *,
    target: str = "scratchpad",
    extra: Mapping[str, Any] | None = None,
) -> WorkingMemory:
    """Render from working memory, sample, write the completion back.

    Never touches long-term memory or the environment.
    """
    if isinstance(template, ReasoningStep):
        target = template.target
        template = template.template
    bindings = wm.bindings()
    if extra:
        bindings.update(extra)
    completion = backend.sample(CompletionRequest(render(template, bindings), temperature=0.0)).strip()
    if target == "scratchpad":
        wm.append("scratchpad", completion)
    else:
        wm.set(target, completion)
    return wm


def _run_reasoning(agent: Agent, step: ReasoningStep, record: CycleRecord, extra=None) -> None:
    if step.if_missing and step.target in agent.wm:
        return
    reason(agent.wm, step.template, agent.backend, target=step.target, extra=_bindings(agent, extra))
    value = agent.wm.get(step.target)
    output = value[-1] if isinstance(value, list) else value
    record.planning.append({"kind": "reasoning", "id": step.id, "target": step.target, "output": output})


def _run_retrieval(agent: Agent, step: RetrievalStep, record: CycleRecord, **filters) -> list:
    text = render(step.query, _bindings(agent))
    query = Query(text, step.k, step.scorer, now=agent.wm.cycle_index, **filters)
    hits = retrieve(agent.memory, query, step.store, backend=agent.backend)
    records = {r.id: r for r in agent.memory.records(step.store)}
    agent.wm.set(step.target, [records[h.id].content for h in hits])
    record.planning.append(
        {
            "kind": "retrieval",
            "store": step.store,
            "query": text,
            "results": [{"id": h.id, "score": h.score} for h in hits],
        }
    )
    return hits


# proposal


def _to_action(name: str, arguments: Sequence[str]) -> GroundingAction | LearningAction:
    if name in LEARNING_VERBS:
        kind = LEARNING_VERBS[name]
        if kind == "append-episode":
            return LearningAction(kind, {"content": arguments[0], "kind": "outcome"})
        return LearningAction(kind, {"facts": [{"content": arguments[0], "sources": []}]})
    return GroundingAction(name, arguments)


def propose(
    policy: DecisionPolicy,
    wm: WorkingMemory,
    context: Mapping[str, Any],
    *,
    round_: int = 0,
    failures: list[str] | None = None,
) -> list[ActionCandidate]:
    """Generate candidates.

    `context` supplies ``grammar`` (ActionGrammar), ``backend`` and optionally
    ``bindings``. Parse failures are logged, appended to `failures`, and dropped.
    """
    grammar: ActionGrammar = context["grammar"]
    if policy.proposal == "enumerate-all":
        if policy.actions is not None:
            out = []
            for t in policy.actions:
                if grammar.actions.get(t) == 0:
                    action = GroundingAction(t)
                else:
                    p = parse(t, grammar)
                    action = _to_action(p.name, p.arguments)
                out.append(ActionCandidate(action, source="enumerated"))
        else:
            out = [
                ActionCandidate(GroundingAction(name), source="enumerated")
                for name, arity in grammar.actions.items()
                if arity == 0
            ]
        if not out:
            raise NoCandidates("vocabulary has no enumerable actions")
        return out
    if policy.proposal not in ("sample-n", "reason-then-sample"):
        raise ValueError(f"propose() does not handle {policy.proposal!r}")
    backend: GenerativeBackend = context["backend"]
    bindings = dict(context.get("bindings") or wm.bindings())
    prompt = render(policy.proposal_template, bindings)
    out: list[ActionCandidate] = []
    seen: set[str] = set()
    for i in range(policy.n):
        req = CompletionRequest(prompt, policy.temperature, stop=policy.stop, draw=round_ * policy.n + i)
        completion = backend.sample(req)
        try:
            p = parse(completion, grammar)
        except ParseError:
            logger.info("dropping unparseable proposal %r", completion)
            if failures is not None:
                failures.append(completion)
            continue
        cand = ActionCandidate(_to_action(p.name, p.arguments), rationale=completion.strip())
        if not policy.keeps_duplicates:
            if cand.text in seen:
                continue
            seen.add(cand.text)
        out.append(cand)
    if not out:
        raise NoCandidates(f"none of {policy.n} sampled proposals parsed")
    return out


# evaluation


def parse_value(text: str) -> float:
    """Read a value in [0, 1]; numbers above 1 up to 10 are read as ratings out of ten."""
    m = re.match(r"^\s*(-?\d+(?:\.\d+)?)", text)
    if m is None:
        raise ParseError("expected a numeric value", text)
    v = float(m.group(1))
    if 0.0 <= v <= 1.0:
        return v
    if 1.0 < v <= 10.0:
        return v / 10.0
    raise ParseError("value out of range", text)


def evaluate(
    candidates: Sequence[ActionCandidate],
    evaluator: str,
    wm: WorkingMemory,
    *,
    backend: GenerativeBackend | None = None,
    template: str = "{observation}\n",
    affordances: Mapping[str, float] | None = None,
    bindings: Mapping[str, Any] | None = None,
) -> list[ActionCandidate]:
    """Attach values. Results are keyed by candidate index, so call order is irrelevant."""
    if not candidates:
        raise NoCandidates("nothing to evaluate")
    if evaluator == "none":
        return list(candidates)
    if backend is None:
        raise CapabilityError(f"evaluator {evaluator!r} needs a backend")
    base = dict(bindings or wm.bindings())
    values: dict[int, float] = {}
    for i, c in enumerate(candidates):
        if evaluator in ("backend-score", "affordance-product"):
            prompt = render(template, base)
            p = math.exp(backend_score(backend, prompt, c.text))
            if evaluator == "affordance-product":
                p *= (affordances or {}).get(c.text, 1.0)
            values[i] = p
        elif evaluator == "reason-value":
            prompt = render(template, {**base, "action": c.text})
            values[i] = parse_value(backend.sample(CompletionRequest(prompt, temperature=0.0)))
        else:
            raise ValueError(f"unknown evaluator {evaluator!r}")
    for i, c in enumerate(candidates):
        c.value = values[i]
    return list(candidates)


# selection


def select(
    candidates: Sequence[ActionCandidate],
    strategy: str,
    seed: int = 0,
    *,
    temperature: float = 1.0,
    floor: float = -math.inf,
) -> ActionCandidate | _Reject:
    if not candidates:
        return Reject
    if strategy == "first":
        return candidates[0]
    if strategy == "majority-vote":
        counts = Counter(c.text for c in candidates)
        best = max(counts.values())
        return next(c for c in candidates if counts[c.text] == best)
    values = [c.value for c in candidates]
    if any(v is None for v in values):
        raise ValueError(f"{strategy} selection needs evaluated candidates")
    if all(v < floor for v in values):
        return Reject
    if strategy == "argmax":
        best_i = max(range(len(values)), key=lambda i: (values[i], -i))
        return candidates[best_i]
    if strategy == "softmax":
        top = max(values)
        weights = [math.exp((v - top) / temperature) for v in values]
        r = random.Random(seed).random() * math.fsum(weights)
        acc = 0.0
        for c, w in zip(candidates, weights):
            acc += w
            if r < acc:
                return c
        return candidates[-1]
    raise ValueError(f"unknown selection strategy {strategy!r}")


# execution


def _execute_learning(action: LearningAction, memory: AgentMemory, time: int) -> dict:
    p = action.payload
    with memory.transaction():
        if action.kind == "append-episode":
            eid = memory.append_episode(p["content"], p.get("kind", "outcome"), time)
            return {"episode_ids": [eid]}
        if action.kind == "write-fact":
            results = [memory.write_fact(f["content"], f.get("sources", []), created=time) for f in p["facts"]]
            return {"fact_ids": [r.id for r in results], "exists": [r.exists for r in results]}
        if action.kind == "register-procedure":
            if not memory.allow_procedural_writes:
                raise MemoryPermissionError("procedural writes are disabled for this store")
            name = p["name"]
            if name in memory.procedures:
                version = memory.update_procedure(name, p["body"])
            else:
                version = memory.register_procedure(Procedure(name, p.get("kind", "code-skill"), p["body"]))
            return {"procedure": name, "version": version}
        confirmation = memory.forget(p["target"], p["id"], p.get("mode", "delete"))
        return {"forgot": confirmation}


def execute(selected: ActionCandidate, agent: Agent) -> dict:
    """Run the chosen action and write its result into working memory."""
    action = selected.action
    idx = agent.wm.cycle_index
    if isinstance(action, LearningAction):
        delta = _execute_learning(action, agent.memory, idx)
        agent.wm.set("last_action", action.text)
        agent.wm.set("learning_result", str(delta))
        return {"memory_delta": delta}
    env = agent.env
    if env is None:
        raise ValueError("grounding action without an environment")
    if env.done:
        raise EpisodeFinished("the episode is over; call reset()")
    if action.name in PROGRAM_VERBS and agent.policy.programs:
        if action.name == "use":
            body = agent.memory.procedure(action.arguments[0]).body
        else:
            body = action.arguments[0]
            agent.wm.set("program", body)
        obs = run_program(env, body)
    else:
        obs = env.step(action)
    agent.wm.set("last_action", action.text)
    agent.observe(obs, action.text)
    return {"observation": obs.to_dict()}


# tree search over thoughts


@dataclass
class ThoughtProblem:
    """Search states are tuples of thoughts; a thought starting with the answer prefix ends a branch."""

    question: str
    cfg: TreeSearchConfig
    value_of: Callable[[tuple], float]
    root: tuple = ()

    def is_terminal(self, state: tuple) -> bool:
        return bool(state) and state[-1].startswith(self.cfg.answer_prefix)

    def is_success(self, state: tuple) -> bool:
        return self.value_of(state) >= self.cfg.success_threshold


def backend_proposer(backend: GenerativeBackend, cfg: TreeSearchConfig, question: str) -> Callable[[tuple], list]:
    def propose_children(state: tuple) -> list:
        prompt = render(cfg.propose_template, {"question": question, "thoughts": "\n".join(state)})
        text = backend.sample(CompletionRequest(prompt, temperature=0.0))
        return [state + (line.strip(),) for line in text.splitlines() if line.strip()]

    return propose_children


def backend_evaluator(backend: GenerativeBackend, cfg: TreeSearchConfig, question: str) -> Callable[[tuple], float]:
    cache: dict[tuple, float] = {}

    def value(state: tuple) -> float:
        if state not in cache:
            prompt = render(cfg.value_template, {"question": question, "thoughts": "\n".join(state)})
            cache[state] = parse_value(backend.sample(CompletionRequest(prompt, temperature=0.0)))
        return cache[state]

    return value


def _plan_tree_search(agent: Agent, record: CycleRecord) -> list[ActionCandidate]:
    cfg = agent.policy.tree_search
    question = str(agent.wm.get("goal", agent.wm.get("observation", "")))
    value = backend_evaluator(agent.backend, cfg, question)
    problem = ThoughtProblem(question, cfg, value)
    result = tree_search(
        problem,
        backend_proposer(agent.backend, cfg, question),
        value,
        cfg.strategy,
        cfg.breadth,
        cfg.depth,
        cfg.budget,
    )
    thoughts = list(result.path[-1])
    for t in thoughts:
        agent.wm.append("scratchpad", t)
    record.planning.append(
        {
            "kind": "tree-search",
            "strategy": cfg.strategy,
            "path": thoughts,
            "value": result.value,
            "expanded": result.expanded,
        }
    )
    answer = thoughts[-1][len(cfg.answer_prefix):].strip()
    finish = agent.grammar.finish
    return [ActionCandidate(GroundingAction(finish, [answer]), value=result.value, source="proposed")]


# learning plans


def reflect(
    episodes: Sequence,
    backend: GenerativeBackend,
    memory: AgentMemory,
    template: str = "{episodes}\nReflection:",
) -> list[int]:
    """Prompt over episode texts and write one fact per output line, citing the episodes."""
    if not episodes:
        raise ValueError("reflect needs at least one episode")
    facts = _reflection_facts(episodes, backend, template)
    if not facts:
        return []
    with memory.transaction():
        return [memory.write_fact(f["content"], f["sources"]).id for f in facts]


def _reflection_facts(episodes: Sequence, backend: GenerativeBackend, template: str) -> list[dict]:
    prompt = render(template, {"episodes": "\n".join(e.content for e in episodes)})
    text = backend.sample(CompletionRequest(prompt, temperature=0.0))
    sources = sorted(e.id for e in episodes)
    return [{"content": line.strip(), "sources": sources} for line in text.splitlines() if line.strip()]


def _plan_learning(agent: Agent, trig: LearningTrigger, record: CycleRecord) -> list[ActionCandidate]:
    for step in trig.reasoning:
        _run_reasoning(agent, step, record)
    if trig.action == "reflect":
        step = trig.retrieval or RetrievalStep("{observation}", "episode", 50, ScorerConfig("recency"))
        since = agent.wm.get("episode_start", None)
        hits = _run_retrieval(agent, step, record, since=since if isinstance(since, int) else None)
        by_id = {e.id: e for e in agent.memory.records("episode")}
        episodes = [by_id[h.id] for h in sorted(hits, key=lambda h: h.id)]
        if not episodes:
            raise NoCandidates("nothing to reflect on")
        facts = _reflection_facts(episodes, agent.backend, trig.template)
        record.planning.append({"kind": "reasoning", "id": "reflect", "target": "reflection",
                                "output": "\n".join(f["content"] for f in facts)})
        if not facts:
            raise NoCandidates("reflection produced no facts")
        agent.wm.set("reflection", [f["content"] for f in facts])
        return [ActionCandidate(LearningAction("write-fact", {"facts": facts}), source="enumerated")]
    if trig.action == "register-procedure":
        name, body = agent.wm.get(trig.name_key), agent.wm.get(trig.body_key)
        if not isinstance(name, str) or not isinstance(body, str):
            raise NoCandidates(f"working memory lacks {trig.name_key!r}/{trig.body_key!r} for the skill")
        payload = {"name": name, "body": body, "kind": trig.procedure_kind}
        return [ActionCandidate(LearningAction("register-procedure", payload), source="enumerated")]
    content = render(trig.content, _bindings(agent))
    return [ActionCandidate(LearningAction("append-episode", {"content": content, "kind": "outcome"}),
                            source="enumerated")]


# the cycle


def cycle(agent: Agent) -> CycleRecord:
    """One decision cycle. Errors are recorded, never raised."""
    idx = agent.wm.advance()
    record = CycleRecord(idx)
    policy = agent.policy
    try:
        with agent.memory.transaction():
            trig = agent.pending_trigger()
            choice = Reject
            if trig is not None:
                candidates = _plan_learning(agent, trig, record)
                record.rounds = 1
                choice = candidates[0]
                record.candidates = [c.to_dict() for c in candidates]
            else:
                for step in policy.retrieval:
                    _run_retrieval(agent, step, record)
                for step in policy.reasoning_templates:
                    _run_reasoning(agent, step, record)
                for round_ in range(policy.budget):
                    record.rounds = round_ + 1
                    if policy.proposal == "tree-search":
                        candidates = _plan_tree_search(agent, record)
                    else:
                        context = {"grammar": agent.grammar, "backend": agent.backend, "bindings": _bindings(agent)}
                        candidates = propose(policy, agent.wm, context, round_=round_,
                                             failures=record.parse_failures)
                    candidates = evaluate(
                        candidates,
                        policy.evaluation,
                        agent.wm,
                        backend=agent.backend,
                        template=policy.evaluation_template,
                        affordances=policy.affordances,
                        bindings=_bindings(agent),
                    )
                    record.candidates = [c.to_dict() for c in candidates]
                    choice = select(
                        candidates,
                        policy.selection,
                        _cycle_seed(agent.seed, idx, round_),
                        temperature=policy.softmax_temperature,
                        floor=policy.value_floor,
                    )
                    if choice is not Reject:
                        break
                if choice is Reject:
                    raise NoCandidates(f"every candidate fell below the value floor for {policy.budget} round(s)")
            if agent.on_planned is not None:
                agent.on_planned(agent, record)
            record.selected = choice.action.to_dict()
            record.result = execute(choice, agent)
            if trig is not None:
                agent.fired.add(policy.learning.index(trig))
    except (CoalaError, ValueError) as exc:
        record.selected = None
        record.result = None
        record.error = {"type": type(exc).__name__, "message": str(exc)}
    return record
