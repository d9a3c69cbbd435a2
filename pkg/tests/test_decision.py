import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coala.decision import (
    ActionCandidate,
    Agent,
    DecisionPolicy,
    LearningAction,
    ReasoningStep,
    Reject,
    ScriptedTree,
    cycle,
    evaluate,
    execute,
    propose,
    reason,
    reflect,
    select,
    tree_search,
)
from coala.errors import (
    BudgetExhausted,
    CapabilityError,
    DanglingSource,
    MissingBinding,
    NoCandidates,
    NoSolution,
    PolicyError,
)
from coala.grounding import AnswerEnvironment, GridTextWorld, GroundingAction, SkillWorld
from coala.lm import ActionGrammar, Capabilities, RemoteBackend, ScriptedBackend
from coala.memory import AgentMemory, WorkingMemory

TWO_ROOMS = {
    "type": "grid",
    "rooms": {"A": {"items": ["key"], "exits": {"east": "B"}}, "B": {"exits": {"west": "A"}}},
    "start": "A",
    "goal": {"room": "B", "holding": ["key"]},
}


class FixedScores:
    """Backend whose log-probabilities come straight from a table."""

    capabilities = Capabilities(can_score=True)

    def __init__(self, probs):
        self.probs = probs

    def sample(self, request):
        raise AssertionError("not used")

    def score(self, prompt, continuation):
        return math.log(self.probs[continuation])


def cands(*names, values=None):
    out = [ActionCandidate(GroundingAction(n)) for n in names]
    for c, v in zip(out, values or []):
        c.value = v
    return out


# reasoning


def test_reason_writes_scratchpad():
    wm = WorkingMemory({"observation": "door locked"})
    b = ScriptedBackend.from_mapping({"Obs: door locked\nThought:": [(" I should find a key", 1)]})
    reason(wm, "Obs: {observation}\nThought:", b)
    assert wm.get("scratchpad") == ["I should find a key"]


def test_reason_missing_binding():
    with pytest.raises(MissingBinding):
        reason(WorkingMemory(), "{observation}", ScriptedBackend([], fallback="x"))


def test_reason_twice_appends():
    wm = WorkingMemory({"observation": "o"})
    b = ScriptedBackend([], fallback="t")
    reason(wm, "{observation}", b)
    reason(wm, "{observation}", b)
    assert wm.get("scratchpad") == ["t", "t"]


def test_reason_named_target_overwrites():
    wm = WorkingMemory({"observation": "o"})
    reason(wm, ReasoningStep("{observation}", target="plan"), ScriptedBackend([], fallback="p1"))
    reason(wm, ReasoningStep("{observation}", target="plan"), ScriptedBackend([], fallback="p2"))
    assert wm.get("plan") == "p2"


# proposal


def skills_grammar():
    return ActionGrammar({"find apple": 0, "go to table": 0})


def test_enumerate_all():
    got = propose(DecisionPolicy("enumerate-all"), WorkingMemory(), {"grammar": skills_grammar()})
    assert [c.text for c in got] == ["find apple", "go to table"]
    assert all(c.source == "enumerated" for c in got)


def test_sample_n_dedup():
    policy = DecisionPolicy("sample-n", n=3, proposal_template="{observation}")
    ctx = {"grammar": ActionGrammar({"search": 1}), "backend": ScriptedBackend([], fallback="search[key]")}
    got = propose(policy, WorkingMemory({"observation": "o"}), ctx)
    assert [c.text for c in got] == ["search[key]"]


def test_majority_vote_keeps_duplicates():
    policy = DecisionPolicy("sample-n", n=3, selection="majority-vote", proposal_template="{observation}")
    ctx = {"grammar": ActionGrammar({"search": 1}), "backend": ScriptedBackend([], fallback="search[key]")}
    assert len(propose(policy, WorkingMemory({"observation": "o"}), ctx)) == 3


def test_all_unparseable():
    policy = DecisionPolicy("sample-n", n=2, proposal_template="{observation}")
    failures = []
    ctx = {"grammar": ActionGrammar({"search": 1}), "backend": ScriptedBackend([], fallback="lorem ipsum")}
    with pytest.raises(NoCandidates):
        propose(policy, WorkingMemory({"observation": "o"}), ctx, failures=failures)
    assert failures == ["lorem ipsum", "lorem ipsum"]


# evaluation


def test_affordance_product():
    b = FixedScores({"find apple": 0.6, "go to table": 0.5})
    out = evaluate(
        cands("find apple", "go to table"),
        "affordance-product",
        WorkingMemory(),
        backend=b,
        template="pick",
        affordances={"find apple": 0.9, "go to table": 0.2},
    )
    assert [c.value for c in out] == pytest.approx([0.54, 0.10])
    assert select(out, "argmax").text == "find apple"


def test_zero_affordance_annihilates():
    b = FixedScores({"a": 0.99})
    out = evaluate(cands("a"), "affordance-product", WorkingMemory(), backend=b, template="p", affordances={"a": 0.0})
    assert out[0].value == 0.0


def test_evaluator_none_leaves_values():
    assert evaluate(cands("a"), "none", WorkingMemory())[0].value is None
    with pytest.raises(PolicyError):
        DecisionPolicy("sample-n", evaluation="none", selection="argmax")


def test_backend_score_needs_capability():
    with pytest.raises(CapabilityError):
        evaluate(cands("a"), "backend-score", WorkingMemory(), backend=RemoteBackend("http://x"), template="p")


def test_reason_value():
    b = ScriptedBackend.from_mapping({"rate a": [("7", 1)], "rate b": [("0.2", 1)]})
    out = evaluate(cands("a", "b"), "reason-value", WorkingMemory(), backend=b, template="rate {action}")
    assert [c.value for c in out] == [0.7, 0.2]


# selection


def test_argmax_and_ties():
    assert select(cands("a", "b", values=[0.2, 0.7]), "argmax").text == "b"
    assert select(cands("a", "b", values=[0.5, 0.5]), "argmax").text == "a"


def test_majority_vote():
    assert select(cands("A", "B", "A"), "majority-vote").text == "A"
    assert select(cands("B", "A", "A", "B"), "majority-vote").text == "B"


def test_softmax_symmetry():
    c = cands("a", "b", values=[0.0, 0.0])
    n = 10_000
    picks = sum(select(c, "softmax", seed=s).text == "a" for s in range(n))
    assert abs(picks / n - 0.5) < 0.05


def test_floor_rejects():
    assert select(cands("a", values=[0.1]), "argmax", floor=0.5) is Reject


values_st = st.lists(st.integers(-1000, 1000), min_size=1, max_size=8)


@settings(max_examples=200, deadline=None)
@given(values_st)
def test_argmax_invariant_under_increasing_transform(vals):
    a = select(cands(*map(str, range(len(vals))), values=vals), "argmax")
    b = select(cands(*map(str, range(len(vals))), values=[v**3 + 5 * v - 2 for v in vals]), "argmax")
    assert a.text == b.text


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("ABC"), min_size=1, max_size=9), st.data())
def test_majority_vote_ignores_values(names, data):
    c1 = cands(*names)
    c2 = cands(*names, values=data.draw(st.lists(st.floats(0, 1), min_size=len(names), max_size=len(names))))
    assert select(c1, "majority-vote").text == select(c2, "majority-vote").text


# execution


def grid_agent(table=None, **policy):
    env = GridTextWorld(TWO_ROOMS)
    backend = ScriptedBackend.from_mapping(table or {}, fallback="look")
    agent = Agent(DecisionPolicy(**policy), backend, AgentMemory(), env)
    agent.start_episode()
    return agent


def test_execute_grounding():
    agent = grid_agent()
    execute(ActionCandidate(GroundingAction("take", ["key"])), agent)
    assert agent.wm.get("observation") == "You take the key."


def test_execute_write_fact():
    agent = grid_agent()
    delta = execute(ActionCandidate(LearningAction("write-fact", {"facts": [{"content": "x", "sources": []}]})), agent)
    assert delta["memory_delta"]["fact_ids"] == [1]


def test_learning_is_atomic():
    agent = grid_agent()
    action = LearningAction("write-fact", {"facts": [{"content": "ok", "sources": []}, {"content": "bad", "sources": [9]}]})
    with pytest.raises(DanglingSource):
        execute(ActionCandidate(action), agent)
    assert agent.memory.records("fact") == []


def test_step_after_done_is_recorded():
    agent = grid_agent({"Goal": [("go[east]", 1)]}, proposal_template="{observation}")
    agent.env.done = True
    rec = cycle(agent)
    assert rec.error["type"] == "EpisodeFinished" and rec.selected is None


# cycles


def test_react_shape():
    table = {
        "Obs: You are in room A. You see: key. Exits: east.\nThought:": [("get the key", 1)],
        "Thought: get the key\nAction:": [("take[key]", 1)],
    }
    agent = grid_agent(
        table,
        proposal="reason-then-sample",
        reasoning_templates=(ReasoningStep("Obs: {observation}\nThought:", target="thought"),),
        proposal_template="Thought: {thought}\nAction:",
    )
    rec = cycle(agent)
    assert [e["kind"] for e in rec.planning] == ["reasoning"]
    assert rec.selected == {"type": "grounding", "name": "take", "arguments": ["key"]}
    assert rec.cycle_index == 1


def test_saycan_shape():
    env = SkillWorld({"skills": {"find apple": {"done": True, "reward": 1}, "go to table": {}}})
    backend = ScriptedBackend.from_mapping({"I will": [("find apple", 6), ("go to table", 4)]})
    policy = DecisionPolicy(
        "enumerate-all",
        "affordance-product",
        "argmax",
        evaluation_template="I will",
        affordances={"find apple": 0.9, "go to table": 0.25},
    )
    agent = Agent(policy, backend, AgentMemory(), env)
    agent.start_episode()
    rec = cycle(agent)
    assert rec.planning == []
    assert rec.selected["name"] == "find apple"
    assert [c["value"] for c in rec.candidates] == pytest.approx([0.54, 0.10])


def test_reflective_failure_selects_write_fact():
    world = {"type": "grid", "rooms": {"K": {"items": []}}, "goal": {"holding": ["x"]}, "step_limit": 1}
    backend = ScriptedBackend.from_mapping({"You are in room K. You see: nothing. Exits: nothing.": [("look", 1)]},
                                           fallback="no help here")
    policy = DecisionPolicy.from_dict(
        {"proposal_template": "{observation}", "learning": [{"on": "failure", "action": "reflect"}]}
    )
    agent = Agent(policy, backend, AgentMemory(), GridTextWorld(world), record_episodes=True)
    agent.start_episode()
    first = cycle(agent)
    assert first.selected["name"] == "look" and agent.env.done
    second = cycle(agent)
    assert second.selected["kind"] == "write-fact"
    assert [f.content for f in agent.memory.records("fact")] == ["no help here"]
    assert agent.memory.records("fact")[0].sources == (1, 2)


def test_reject_loops_until_budget():
    agent = grid_agent(
        proposal="enumerate-all", evaluation="reason-value", selection="argmax", actions=("look",),
        evaluation_template="{observation}", value_floor=0.9, budget=3,
    )
    agent.backend = ScriptedBackend([], fallback="0.1")
    rec = cycle(agent)
    assert rec.rounds == 3 and rec.error["type"] == "NoCandidates"


def test_failed_cycle_keeps_memory_consistent():
    agent = grid_agent(proposal_template="{observation}")
    agent.backend = ScriptedBackend([], fallback="???")
    before = agent.memory.long_term_digest()
    rec = cycle(agent)
    assert rec.error["type"] == "NoCandidates" and rec.parse_failures == ["???"]
    assert agent.memory.long_term_digest() == before


# tree search


def hand_tree():
    return ScriptedTree(
        "root",
        children={"root": ["s1", "s2", "s3"]},
        values={"s1": 0.9, "s2": 0.5, "s3": 0.1},
        terminal={"s1", "s2", "s3"},
        success={"s1"},
    )


def test_bfs_hand_trace():
    t = hand_tree()
    res = tree_search(t, t.propose, t.evaluate, "BFS", breadth=2, depth=1)
    assert res.path == ["root", "s1"]
    assert set(res.frontiers[0]) == {"s1", "s2"}


def test_bfs_breadth_one_is_greedy():
    t = ScriptedTree(
        "r",
        children={"r": ["a", "b"], "a": ["a1"], "b": ["b1"]},
        values={"a": 0.8, "b": 0.2, "a1": 0.5, "b1": 1.0},
        terminal={"a1", "b1"},
        success={"b1"},
    )
    with pytest.raises(NoSolution):
        tree_search(t, t.propose, t.evaluate, "BFS", breadth=1, depth=2)
    assert tree_search(t, t.propose, t.evaluate, "BFS", breadth=2, depth=2).path == ["r", "b", "b1"]


def test_no_solution():
    t = hand_tree()
    t.success = set()
    for strategy in ("BFS", "DFS"):
        with pytest.raises(NoSolution):
            tree_search(t, t.propose, t.evaluate, strategy, breadth=3, depth=2)


def test_budget_exhausted():
    t = ScriptedTree("r", children={"r": ["a"], "a": ["b"], "b": ["c"]}, terminal={"c"}, success={"c"})
    with pytest.raises(BudgetExhausted):
        tree_search(t, t.propose, t.evaluate, "DFS", breadth=1, depth=3, budget=2)
    assert tree_search(t, t.propose, t.evaluate, "DFS", breadth=1, depth=3, budget=3).path == ["r", "a", "b", "c"]


def test_dfs_backtracks():
    t = ScriptedTree(
        "r",
        children={"r": ["a", "b"], "a": ["a1"], "b": ["b1"]},
        values={"a": 0.9, "b": 0.1},
        terminal={"a1", "b1"},
        success={"b1"},
    )
    assert tree_search(t, t.propose, t.evaluate, "DFS", breadth=2, depth=2).path == ["r", "b", "b1"]


def test_tree_search_agent_single_answer():
    world = AnswerEnvironment({"question": "Q?", "answer": "yes"})
    table = {
        "Q?\n\nNext thoughts:": [("Answer: yes\nAnswer: no", 1)],
        "Q?\nAnswer: yes\nValue:": [("1", 1)],
        "Q?\nAnswer: no\nValue:": [("0", 1)],
    }
    policy = DecisionPolicy.from_dict({"proposal": "tree-search", "tree_search": {"breadth": 2, "depth": 1}})
    agent = Agent(policy, ScriptedBackend.from_mapping(table), AgentMemory(), world)
    agent.start_episode()
    rec = cycle(agent)
    assert [e["kind"] for e in rec.planning] == ["tree-search"]
    assert rec.selected == {"type": "grounding", "name": "finish", "arguments": ["yes"]}
    assert agent.env.success


# reflection


def test_reflect_ski():
    mem = AgentMemory()
    ids = [mem.append_episode(t, "observation", i) for i, t in enumerate(["went skiing", "skied again", "skied all day"])]
    prompt = "went skiing\nskied again\nskied all day\nReflection:"
    b = ScriptedBackend.from_mapping({prompt: [("I like to ski now.", 1)]})
    fids = reflect(mem.records("episode"), b, mem)
    assert [mem.facts[f].content for f in fids] == ["I like to ski now."]
    assert mem.facts[fids[0]].sources == tuple(ids)


def test_reflect_empty_completion():
    mem = AgentMemory()
    mem.append_episode("e", "observation", 0)
    assert reflect(mem.records("episode"), ScriptedBackend([], fallback=""), mem) == []


def test_reflect_needs_episodes():
    with pytest.raises(ValueError):
        reflect([], ScriptedBackend([], fallback="x"), AgentMemory())
