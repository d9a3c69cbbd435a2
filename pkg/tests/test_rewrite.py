import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coala.errors import StepLimitExceeded, UnboundVariable
from coala.rewrite import (
    DIVISION_RULES,
    THERMOSTAT_RULES,
    Condition,
    ConditionActionRule,
    NoMatch,
    RewriteRule,
    RuleSet,
    check_schema,
    fire,
    load_rules,
    run,
    step,
)


def decode(s: str) -> tuple[int, int]:
    q, r = s.split("*")
    assert set(q + r) <= {"|"}
    return len(q), len(r)


def test_division_eleven():
    out, trace = run(DIVISION_RULES, "|" * 11)
    assert out == "||*|"
    assert decode(out) == (2, 1)
    assert trace.halted
    assert [s.rule for s in trace.steps] == [2, 0, 0, 1]


@pytest.mark.parametrize("n", [0, 1, 4, 5, 6, 10, 99, 100])
def test_division_decodes(n):
    out, _ = run(DIVISION_RULES, "|" * n)
    assert decode(out) == divmod(n, 5)


def test_empty_pattern_matches_at_start():
    res = step(RuleSet([RewriteRule("", "x")]), "abc")
    assert res.output == "xabc" and res.position == 0


def test_priority_beats_position():
    rules = RuleSet([RewriteRule("c", "C"), RewriteRule("a", "A")])
    assert step(rules, "abc").output == "abC"


def test_leftmost_occurrence():
    assert step(RuleSet([RewriteRule("ab", "X")]), "abab").output == "Xab"


def test_no_match_is_falsy():
    res = step(RuleSet([RewriteRule("z", "y")]), "abc")
    assert res is NoMatch and not res


def test_run_without_match_returns_input():
    out, trace = run(RuleSet([RewriteRule("z", "y")]), "abc")
    assert out == "abc" and trace.steps == () and not trace.halted


def test_step_limit():
    with pytest.raises(StepLimitExceeded):
        run(RuleSet([RewriteRule("", "a")]), "", max_steps=50)


def test_empty_ruleset_rejected():
    with pytest.raises(ValueError):
        RuleSet([])


def test_rules_file_roundtrip(tmp_path):
    p = tmp_path / "rules.json"
    p.write_text(json.dumps(DIVISION_RULES.to_dict()))
    assert load_rules(p) == DIVISION_RULES


def test_thermostat_in_band():
    assert fire(THERMOSTAT_RULES, {"temperature": 71, "furnace": "on"}) == ["stop"]


def test_thermostat_freezing_fires_both_actions():
    assert fire(THERMOSTAT_RULES, {"temperature": 25, "furnace": "on"}) == [
        "call for repairs",
        "turn on electric heater",
    ]


def test_first_match_wins_over_later_rules():
    # 25 < 32 and 25 < 70 with furnace off: rule 2 precedes rule 3
    assert fire(THERMOSTAT_RULES, {"temperature": 25, "furnace": "off"})[0] == "call for repairs"


def test_no_rule_fires():
    assert fire(THERMOSTAT_RULES, {"temperature": 70, "furnace": "on"}) == []


def test_unbound_variable():
    with pytest.raises(UnboundVariable):
        fire(THERMOSTAT_RULES, {"furnace": "on"})


def test_schema_check():
    check_schema(THERMOSTAT_RULES, ["temperature", "furnace"])
    with pytest.raises(UnboundVariable):
        check_schema([ConditionActionRule([Condition("pressure", ">", 1)], ["vent"])], ["temperature"])


def _brute_step(rules, s):
    for i, r in enumerate(rules.rules):
        for pos in range(len(s) + 1):
            if s[pos:pos + len(r.pattern)] == r.pattern:
                return s[:pos] + r.replacement + s[pos + len(r.pattern):], i, pos
    return None


alphabet = st.text(alphabet="ab", max_size=3)


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.tuples(alphabet, alphabet, st.booleans()), min_size=1, max_size=4),
    st.text(alphabet="ab", max_size=8),
)
def test_step_matches_brute_force(raw, s):
    rules = RuleSet([RewriteRule(p, r, t) for p, r, t in raw])
    expected = _brute_step(rules, s)
    res = step(rules, s)
    if expected is None:
        assert res is NoMatch
    else:
        assert (res.output, res.rule, res.position) == expected
        assert res.halt == rules[res.rule].terminal


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=400))
def test_division_property(n):
    assert decode(run(DIVISION_RULES, "|" * n)[0]) == divmod(n, 5)
