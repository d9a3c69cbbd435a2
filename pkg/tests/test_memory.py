import json
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coala.errors import (
    DanglingSource,
    FormatError,
    MemoryPermissionError,
    TimestampRegression,
    UnknownProcedure,
)
from coala.memory import Absent, AgentMemory, Procedure, WorkingMemory, load, snapshot


def test_wm_read_after_write():
    wm = WorkingMemory()
    wm.set("goal", "find key")
    assert wm.get("goal") == "find key"


def test_wm_fresh_get_is_absent():
    assert WorkingMemory().get("goal") is Absent


def test_wm_last_writer_wins():
    wm = WorkingMemory().set("x", 1).set("x", 2)
    assert wm.get("x") == 2


def test_wm_rejects_bad_values_and_keys():
    wm = WorkingMemory()
    with pytest.raises(TypeError):
        wm.set("x", {"nested": 1})
    with pytest.raises(ValueError):
        wm.set("not a key", 1)


def test_wm_cycle_index_monotone():
    wm = WorkingMemory()
    wm.advance()
    wm.advance()
    with pytest.raises(ValueError):
        wm.set("cycle_index", 1)
    wm.reset()
    assert wm.cycle_index == 2


def test_wm_reset_keeps_goal():
    wm = WorkingMemory({"goal": "g", "scratchpad": ["a"]})
    wm.reset()
    assert wm.to_dict() == {"goal": "g"}


def test_wm_append():
    wm = WorkingMemory()
    wm.append("scratchpad", "one")
    wm.append("scratchpad", "two")
    assert wm.get("scratchpad") == ["one", "two"]


def test_append_episode_ids():
    m = AgentMemory()
    assert m.append_episode("saw door", "observation", 1) == 1
    assert m.append_episode("opened door", "action", 2) == 2
    assert len(m.records("episode")) == 2


def test_timestamp_regression():
    m = AgentMemory()
    m.append_episode("a", "observation", 5)
    with pytest.raises(TimestampRegression):
        m.append_episode("b", "observation", 0)


def test_episode_kind_checked():
    with pytest.raises(ValueError):
        AgentMemory().append_episode("x", "dream", 0)


def test_write_fact_and_duplicate_flag():
    m = AgentMemory()
    for t in range(3):
        m.append_episode(f"e{t}", "observation", t)
    r1 = m.write_fact("there is no dishwasher in kitchen", [3])
    r2 = m.write_fact("there is no dishwasher in kitchen", [3])
    assert not r1.exists and r2.exists and r2.id != r1.id


def test_dangling_source():
    with pytest.raises(DanglingSource):
        AgentMemory().write_fact("x", [999])


def test_procedure_versions():
    m = AgentMemory(allow_procedural_writes=True)
    assert m.register_procedure(Procedure("craftStoneSword", "code-skill", "v1")) == 1
    m.update_procedure("craftStoneSword", "v2")
    assert m.update_procedure("craftStoneSword", "v3") == 3
    p = m.procedure("craftStoneSword")
    assert p.history == ["v1", "v2"] and p.body == "v3"


def test_procedure_guards():
    m = AgentMemory(allow_procedural_writes=True)
    m.register_procedure(Procedure("fixed", "prompt-template", "b", mutable=False))
    with pytest.raises(PermissionError):
        m.update_procedure("fixed", "c")
    off = AgentMemory()
    off.register_procedure(Procedure("s", "prompt-template", "b"))
    with pytest.raises(MemoryPermissionError):
        off.update_procedure("s", "c")
    with pytest.raises(UnknownProcedure):
        off.update_procedure("missing", "c")


def test_forget_needs_flag():
    m = AgentMemory()
    m.append_episode("a", "observation", 0)
    with pytest.raises(PermissionError):
        m.forget("episode", 1)


def test_forget_delete_fact():
    from coala.retrieval import Query, ScorerConfig, retrieve

    m = AgentMemory(allow_unlearning=True)
    m.write_fact("red couch")
    m.write_fact("red table")
    m.forget("fact", 2)
    hits = retrieve(m, Query("red", k=5, scorer=ScorerConfig("bm25")), "fact")
    assert [h.id for h in hits] == [1]


def test_redact_cited_episode_keeps_provenance():
    m = AgentMemory(allow_unlearning=True)
    eid = m.append_episode("secret", "observation", 0)
    fid = m.write_fact("inferred", [eid]).id
    with pytest.raises(MemoryPermissionError):
        m.forget("episode", eid, "delete")
    m.forget("episode", eid, "redact")
    assert m.episodes[eid].content == "" and m.episodes[eid].redacted
    assert all(s in m.episodes for s in m.facts[fid].sources)


def test_transaction_rolls_back():
    m = AgentMemory()
    m.append_episode("a", "observation", 0)
    before = m.long_term_digest()
    with pytest.raises(DanglingSource):
        with m.transaction():
            m.write_fact("ok", [1])
            m.write_fact("bad", [42])
    assert m.long_term_digest() == before


def test_snapshot_roundtrip_three_episodes(tmp_path):
    m = AgentMemory()
    for t in range(3):
        m.append_episode(f"event {t}", "observation", t)
    m.working.set("goal", "g")
    path = tmp_path / "mem.jsonl"
    snapshot(m, path)
    assert load(path) == m


def test_load_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert load(p) == AgentMemory()


def test_load_malformed_line_number(tmp_path):
    m = AgentMemory()
    m.append_episode("a", "observation", 0)
    p = tmp_path / "m.jsonl"
    snapshot(m, p)
    lines = p.read_text().splitlines()
    lines.insert(2, "{not json")
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError) as exc:
        load(p)
    assert exc.value.line == 3


def test_load_bad_record_line_number(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text(json.dumps({"rec": "episode", "id": 1}) + "\n")
    with pytest.raises(FormatError) as exc:
        load(p)
    assert exc.value.line == 1


def test_tombstones_replay(tmp_path):
    m = AgentMemory(allow_unlearning=True)
    m.append_episode("a", "observation", 0)
    m.append_episode("b", "observation", 1)
    m.forget("episode", 1)
    m.forget("episode", 2, "redact")
    p = tmp_path / "m.jsonl"
    m.snapshot(p)
    again = load(p)
    assert again == m
    assert again.append_episode("c", "observation", 2) == 3


def test_concurrent_appends_get_unique_ids():
    m = AgentMemory()

    def worker():
        for _ in range(200):
            m.append_episode("x", "observation", 0)

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    ids = [e.id for e in m.records("episode")]
    assert ids == list(range(1, 801))


ops = st.lists(
    st.one_of(
        st.tuples(st.just("episode"), st.text(max_size=10)),
        st.tuples(st.just("fact"), st.text(max_size=10)),
    ),
    max_size=30,
)


@settings(max_examples=100, deadline=None)
@given(ops)
def test_episodes_append_only(seq):
    m = AgentMemory()
    seen = {}
    for t, (kind, text) in enumerate(seq):
        if kind == "episode":
            eid = m.append_episode(text, "observation", t)
            seen[eid] = text
        else:
            ids = sorted(seen)[:2]
            m.write_fact(text, ids)
        assert {e.id: e.content for e in m.records("episode")} == seen
        for f in m.records("fact"):
            assert all(s in m.episodes for s in f.sources)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=1, max_value=6))
def test_version_history_linear(n):
    m = AgentMemory(allow_procedural_writes=True)
    m.register_procedure(Procedure("p", "prompt-template", "0"))
    versions = [1] + [m.update_procedure("p", str(i)) for i in range(1, n)]
    assert versions == list(range(1, n + 1))
    assert len(m.procedure("p").history) == n - 1
