import pytest
from hypothesis import given, settings, strategies as st

from btweave.errors import ConditionSyntaxError, TypeMismatch, UnknownVariable
from btweave.worldmodel import (
    TRUE, Condition, Literal, VarRef, VarSpec, WorldState, eval_condition, format_value, implies,
    parse_condition, satisfiable,
)
from oracles import brute_implies


def test_eval_examples():
    assert eval_condition(parse_condition("pos == 10"), WorldState.from_dict({"pos": 10}))
    w = WorldState.from_dict({"pos": 10, "power": False})
    assert not eval_condition(parse_condition("pos == 10 AND power == true"), w)
    with pytest.raises(UnknownVariable) as exc:
        eval_condition(parse_condition("pos == 10"), WorldState())
    assert exc.value.name == "pos"


def test_eval_type_mismatch_is_an_error():
    w = WorldState.from_dict({"power": True})
    with pytest.raises(TypeMismatch) as exc:
        eval_condition(parse_condition("power > 3"), w)
    assert exc.value.variable == "power"


def test_real_equality_uses_tolerance():
    w = WorldState.from_dict({"pos": 0.1 + 0.2})
    assert eval_condition(parse_condition("pos == 0.3"), w)
    assert not eval_condition(parse_condition("pos != 0.3"), w)
    assert not eval_condition(parse_condition("pos == 0.3001"), w)


def test_variable_reference_on_right_hand_side():
    w = WorldState.from_dict({"pos": 4.0, "target": 4.0})
    c = parse_condition("pos == target")
    assert c.literals[0].value == VarRef("target")
    assert eval_condition(c, w)
    w["target"] = 5.0
    assert not eval_condition(c, w)


def test_true_is_the_empty_condition():
    assert parse_condition("true") == TRUE
    assert TRUE.is_true()
    assert eval_condition(TRUE, WorldState())


def test_implies_examples():
    assert implies(parse_condition("pos == 10"), parse_condition("pos >= 5"))
    assert not implies(parse_condition("pos >= 5"), parse_condition("pos == 10"))
    assert implies(parse_condition("x > 3 AND x < 5"), parse_condition("x > 2"))
    # x > 3 AND x < 5 over integers is exactly x == 4
    assert implies(parse_condition("x > 3 AND x < 5"), parse_condition("x == 4"), {"x": "int"})


def test_implies_rejects_incomparable_types():
    with pytest.raises(TypeMismatch):
        implies(parse_condition("x == true"), parse_condition("x > 2"))


def test_unsatisfiable_antecedent_implies_anything():
    assert not satisfiable(parse_condition("x > 3 AND x < 2"))
    assert implies(parse_condition("x > 3 AND x < 2"), parse_condition("y == 1"))


@pytest.mark.parametrize("text,offset", [("pos ==", 7), ("== 3", 1), ("pos == 3 AND", 13), ("pos ~ 3", 5)])
def test_syntax_error_offsets(text, offset):
    with pytest.raises(ConditionSyntaxError) as exc:
        parse_condition(text)
    assert exc.value.offset == offset


def test_parse_preserves_literal_order():
    c = parse_condition("pos >= 0 AND error == false")
    assert [lit.var for lit in c.literals] == ["pos", "error"]
    assert len(parse_condition("pos == 10").literals) == 1


def test_world_rejects_mismatched_writes_and_tracks_clock():
    w = WorldState(dt=0.5, t0=1.0)
    w.declare("pos", VarSpec("real", "mm"), 0)
    assert isinstance(w["pos"], float)
    with pytest.raises(TypeMismatch):
        w["pos"] = "far"
    with pytest.raises(UnknownVariable):
        w["nope"] = 1
    for _ in range(4):
        w.advance()
    assert w.clock == pytest.approx(3.0)


def test_update_is_all_or_nothing():
    w = WorldState.from_dict({"a": 1, "b": True})
    with pytest.raises(TypeMismatch):
        w.update({"a": 2, "b": "no"})
    assert w["a"] == 1


def test_enum_choices():
    w = WorldState()
    w.declare("mode", VarSpec("enum", choices=("auto", "manual")), "auto")
    with pytest.raises(TypeMismatch):
        w["mode"] = "other"


# ---------------------------------------------------------------------------
# Properties

small_ints = st.integers(-4, 4)
ops = st.sampled_from(["==", "!=", "<", "<=", ">", ">="])
literals = st.tuples(st.sampled_from(["x", "y"]), ops, small_ints)
conjunctions = st.lists(literals, min_size=1, max_size=3)


def _cond(lits):
    return Condition([Literal(v, op, c) for v, op, c in lits])


@settings(max_examples=300)
@given(conjunctions, conjunctions)
def test_implies_sound_and_complete_against_brute_force(a, b):
    # a wide enough grid that every literal boundary has room on both sides
    domains = {"x": range(-12, 13), "y": range(-12, 13)}
    got = implies(_cond(a), _cond(b), {"x": "int", "y": "int"})
    assert got == brute_implies(a, b, domains)


@given(conjunctions)
def test_round_trip_through_text(lits):
    c = _cond(lits)
    assert parse_condition(str(c)) == c


values = st.one_of(
    st.booleans(), st.integers(-10**6, 10**6),
    st.floats(allow_nan=False, allow_infinity=False, width=64),
    st.text(st.characters(blacklist_categories=("Cs",)), max_size=8),
)


@given(values)
def test_format_value_round_trips(v):
    c = parse_condition(f"x == {format_value(v)}")
    got = c.literals[0].value
    assert got == v and type(got) is type(v)


@given(st.dictionaries(st.sampled_from(["a", "b", "c"]), small_ints, min_size=3), conjunctions)
def test_evaluation_is_pure(values, lits):
    w = WorldState.from_dict({"x": values["a"], "y": values["b"]})
    before = w.snapshot()
    c = _cond(lits)
    results = {eval_condition(c, w) for _ in range(1000)}
    assert len(results) == 1
    assert w.snapshot() == before
