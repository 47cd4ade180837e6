import pytest
from hypothesis import given, strategies as st

from confab.constraints import BusinessScenario, Constraint, evaluate, evaluate_constraint, parse
from confab.errors import ConstraintSyntaxError, EvaluationError, StructuralError
from confab.model import DeviceState


def st_(device="d1", values=None, services=None, **kw):
    return DeviceState(device, values or {}, services or {}, **kw)


class TestSpecExamples:
    def test_count_with_provider(self):
        states = {"d1": st_("d1", services={"temp-sensing": 3}), "d2": st_("d2")}
        assert evaluate_constraint("count(temp-sensing ≥ 1) ≥ 1", states)

    def test_count_after_provider_drops(self):
        states = {"d1": st_("d1"), "d2": st_("d2")}
        assert not evaluate_constraint("count(temp-sensing ≥ 1) ≥ 1", states)

    def test_not_and_online(self):
        states = {"d1": st_(values={"polling_rate": 50}, online=True)}
        assert evaluate_constraint("NOT(polling_rate > 100) AND online", states)


class TestEvaluation:
    def test_unqualified_means_every_member(self):
        states = {"a": st_("a", {"p": 5}), "b": st_("b", {"p": 50})}
        assert not evaluate_constraint("p <= 10", states)
        assert evaluate_constraint("p <= 50", states)

    def test_qualified_reference(self):
        states = {"a": st_("a", {"p": 5}), "b": st_("b", {"p": 50})}
        assert evaluate_constraint("a::p = 5 AND b::p != 5", states)

    def test_count_default_level(self):
        states = {"a": st_("a", services={"s": 1}), "b": st_("b", services={"s": 4})}
        assert evaluate_constraint("count(s) = 2", states)
        assert evaluate_constraint("count(s >= 2) = 1", states)

    def test_string_and_bool_literals(self):
        states = {"a": st_("a", {"mode": "eco", "t": True})}
        assert evaluate_constraint("mode = eco AND mode = 'eco' AND t = true", states)
        assert not evaluate_constraint('mode = "perf"', states)

    def test_missing_field_is_an_error(self):
        with pytest.raises(EvaluationError):
            evaluate_constraint("nothing > 1", {"a": st_("a")})

    def test_or_does_not_short_circuit_errors(self):
        with pytest.raises(EvaluationError):
            evaluate_constraint("online OR nothing > 1", {"a": st_("a")})

    def test_unknown_device(self):
        with pytest.raises(EvaluationError):
            evaluate_constraint("ghost::online", {"a": st_("a")})

    def test_type_mismatch_is_an_error(self):
        with pytest.raises(EvaluationError):
            evaluate_constraint("mode > 3", {"a": st_("a", {"mode": "eco"})})

    def test_state_fields(self):
        states = {"a": st_("a", charge_pct=30, last_updated=4)}
        assert evaluate_constraint("charge_pct >= 20 AND last_updated < 5", states)


class TestSyntax:
    @pytest.mark.parametrize("text", ["", "p >", "(p > 1", "count(s) >", "p > 1 AND", "p ~ 1", "count(s >= x) = 1"])
    def test_rejects(self, text):
        with pytest.raises(ConstraintSyntaxError):
            parse(text)

    def test_keywords_case_insensitive(self):
        assert str(parse("not a and b or c")) == str(parse("NOT a AND b OR c"))

    def test_and_binds_tighter_than_or(self):
        states = {"x": st_("x", {"a": True, "b": False, "c": True})}
        assert evaluate_constraint("a OR b AND c", states) == (True or (False and True))
        assert evaluate_constraint("(a OR b) AND c", states)


names = st.sampled_from(["p", "q", "d1::p", "sensing/polling_rate"])
ops = st.sampled_from(["=", "!=", "<", "<=", ">", ">="])
literals = st.one_of(st.integers(-100, 100), st.sampled_from(["true", "false", "eco", "'two words'"]))


@st.composite
def expressions(draw, depth=0):
    if depth >= 3 or draw(st.booleans()):
        kind = draw(st.integers(0, 2))
        if kind == 0:
            return f"{draw(names)} {draw(ops)} {draw(literals)}"
        if kind == 1:
            return f"count(svc >= {draw(st.integers(0, 10))}) {draw(ops)} {draw(st.integers(0, 5))}"
        return draw(names)
    op = draw(st.sampled_from(["AND", "OR", "NOT"]))
    if op == "NOT":
        return f"NOT ({draw(expressions(depth + 1))})"
    return f"({draw(expressions(depth + 1))}) {op} ({draw(expressions(depth + 1))})"


@given(expressions())
def test_printing_round_trips(text):
    ast = parse(text)
    assert parse(str(ast)) == ast


@given(st.booleans(), st.booleans())
def test_de_morgan(a, b):
    states = {"x": st_("x", {"a": a, "b": b})}
    assert evaluate_constraint("NOT (a AND b)", states) == evaluate_constraint("NOT a OR NOT b", states)
    assert evaluate_constraint("NOT (a OR b)", states) == evaluate_constraint("NOT a AND NOT b", states)


@given(st.lists(st.integers(0, 10), min_size=1, max_size=6), st.integers(0, 10), st.integers(0, 6))
def test_count_matches_direct_tally(levels, level, n):
    states = {f"d{i}": st_(f"d{i}", services={"s": lv} if lv else {}) for i, lv in enumerate(levels)}
    expected = sum(1 for lv in levels if lv >= level and lv > 0) if level > 0 else len(levels)
    assert evaluate_constraint(f"count(s >= {level}) >= {n}", states) == (expected >= n)


class TestScenario:
    def test_violated_lists_failed_ids(self):
        s = BusinessScenario.from_dict({"scenario_id": "S1", "members": ["a", "b"],
                                        "constraints": ["p < 10", {"id": "quorum", "expression": "count(s) >= 1"}]})
        states = {"a": st_("a", {"p": 20}), "b": st_("b", {"p": 1})}
        assert s.violated(states) == ["S1/c0", "quorum"]

    def test_constraint_on_non_member_rejected(self):
        with pytest.raises(StructuralError):
            BusinessScenario.from_dict({"scenario_id": "S", "members": ["a"], "constraints": ["b::online"]})

    def test_empty_members_rejected(self):
        with pytest.raises(StructuralError):
            BusinessScenario.from_dict({"scenario_id": "S", "members": []})

    def test_evaluate_only_sees_members(self):
        s = BusinessScenario.from_dict({"scenario_id": "S", "members": ["a"], "constraints": ["p < 10"]})
        assert s.violated({"a": st_("a", {"p": 1}), "z": st_("z", {"p": 99})}) == []

    def test_constraint_ast_cached(self):
        c = Constraint("p > 1", "c")
        assert c.ast is c.ast
        assert evaluate(c.ast, {"a": st_("a", {"p": 2})})
