import random

import pytest
from hypothesis import given, settings, strategies as st

from btweave.bt import (
    FAILURE, RUNNING, SUCCESS, ActionImpl, ActionNode, ActionRegistry, ConditionNode, Fallback, Sequence,
    SequenceMem, TickContext, TickTrace, tick,
)
from btweave.errors import DuplicateSkill, MissingParam, UnboundAction, UnsatisfiablePost
from btweave.skills import (
    Param, Skill, SkillInterface, SkillRegistry, expand_skill, find_achievers, skill_parts,
)
from btweave.worldmodel import VarRef, WorldState
from oracles import (
    conj_text, random_skill_case, satisfying, skill_case_action, skill_case_world, violating,
)


def case_skill(case):
    return Skill("work", conj_text(case.pre), conj_text(case.inv), conj_text(case.post))


def run(tree, w, actions, ticks, before=None):
    ctx = TickContext(w, ActionRegistry(actions), TickTrace())
    out = []
    for k in range(ticks):
        if before:
            before(k, w)
        out.append(tick(tree, w, ctx=ctx))
    return out, ctx.trace


def test_expansion_shape_and_ids():
    tree = expand_skill(Skill("move", "a == true", "b == true", "c == true"))
    assert isinstance(tree, Fallback) and tree.id == "move"
    post, mem = tree.children
    assert isinstance(post, ConditionNode) and post.id == "move.post"
    assert isinstance(mem, SequenceMem) and mem.id == "move.mem"
    pre, run_ = mem.children
    assert pre.id == "move.pre" and isinstance(run_, Sequence)
    inv, act = run_.children
    assert inv.id == "move.inv" and isinstance(act, ActionNode) and act.id == "move.act"
    assert [n.id for n in skill_parts(tree).values()] == ["move",
        "move.post", "move.mem", "move.pre", "move.run", "move.inv", "move.act"]


def test_missing_and_unbound():
    iface = SkillInterface([Param("target", "real")])
    with pytest.raises(MissingParam):
        expand_skill(Skill("m", post="x == 1"), iface=iface)
    expand_skill(Skill("m", post="x == 1"), {"target": 3.0}, iface=iface)
    with pytest.raises(UnboundAction):
        expand_skill(Skill("m", post="x == 1"), actions=ActionRegistry())


def test_registration():
    reg = SkillRegistry()
    reg.register(Skill("a", post="x == 1"))
    assert len(reg) == 1
    with pytest.raises(DuplicateSkill):
        reg.register(Skill("a", post="x == 2"))
    with pytest.raises(UnsatisfiablePost):
        reg.register(Skill("b", post="x > 5 AND x < 3"))
    assert reg.by_post(Skill("a", post="x == 1").post) == ["a"]


def test_find_achievers_order():
    reg = SkillRegistry()
    reg.register(Skill("low", post="pos == 10", priority=1))
    reg.register(Skill("other", post="speed == 1"))
    reg.register(Skill("high", post="pos == 10 AND power == true", priority=5))
    reg.register(Skill("tie", post="pos == 10", priority=1))
    assert [s.name for s in find_achievers("pos == 10", reg)] == ["high", "low", "tie"]
    assert find_achievers("pos == 11", reg) == []


def test_interface_mapping_rules():
    with pytest.raises(ValueError):
        SkillInterface([Param("a", "int")], {"b": "x"})
    with pytest.raises(ValueError):
        SkillInterface([Param("a", "int"), Param("b", "int")], {"a": "x", "b": "x"})
    with pytest.raises(ValueError):
        SkillInterface(role="something.else")


def test_mapping_copies_in_params_before_first_step():
    seen = []

    def step(world, params):
        seen.append(world["goal"])
        return SUCCESS, {"result": params["target"] * 2}

    iface = SkillInterface([Param("target", "real"), Param("result", "real", "out")],
                           {"target": "goal", "result": "doubled"})
    skill = Skill("dbl", post="doubled == 8.0", bindings={"target": VarRef("src")})
    tree = expand_skill(skill, iface=iface)
    w = WorldState.from_dict({"src": 4.0, "goal": 0.0, "doubled": 0.0})
    assert tick(tree, w, [ActionImpl("dbl", step)]) is SUCCESS
    assert seen == [4.0] and w["doubled"] == 8.0


def test_inv_violation_example():
    # pre true at the first tick, invariant violated at the third
    case = random_skill_case(random.Random(7))
    case.duration = 10
    w = skill_case_world(case, {**satisfying(case.pre), **satisfying(case.inv), **violating(case.post)})
    log = []
    flip = violating(case.inv)
    statuses, _ = run(expand_skill(case_skill(case)), w, [skill_case_action(case, log)], 3,
                      before=lambda k, w: w.update(flip) if k == 2 else None)
    assert statuses == [RUNNING, RUNNING, FAILURE]
    assert len(log) == 2


# ---------------------------------------------------------------------------
# Properties over random skills


seeds = st.integers(0, 10**9)


def check_post_satisfied(case):
    log = []
    w = skill_case_world(case, satisfying(case.post))
    statuses, trace = run(expand_skill(case_skill(case)), w, [skill_case_action(case, log)], 3)
    assert statuses == [SUCCESS] * 3 and log == []
    assert not trace.for_node("work.act")


def check_pre_false(case):
    log = []
    w = skill_case_world(case, {**violating(case.pre), **violating(case.post)})
    statuses, _ = run(expand_skill(case_skill(case)), w, [skill_case_action(case, log)], 1)
    assert statuses == [FAILURE] and log == []


def check_inv_flip(case, k):
    log = []
    w = skill_case_world(case, {**satisfying(case.pre), **satisfying(case.inv), **violating(case.post)})
    flip = violating(case.inv)
    statuses, trace = run(expand_skill(case_skill(case)), w, [skill_case_action(case, log)], k + 1,
                          before=lambda i, w: w.update(flip) if i == k else None)
    assert statuses == [RUNNING] * k + [FAILURE]
    assert len(log) == k
    # no action tick while the invariant is false
    assert all(r.k < k for r in trace.for_node("work.act"))


def check_memory(case):
    log = []
    w = skill_case_world(case, {**satisfying(case.pre), **satisfying(case.inv), **violating(case.post)})
    flip = violating(case.pre)
    statuses, _ = run(expand_skill(case_skill(case)), w, [skill_case_action(case, log)], case.duration,
                      before=lambda i, w: w.update(flip) if i == 1 else None)
    assert statuses == [RUNNING] * (case.duration - 1) + [SUCCESS]
    assert len(log) == case.duration


@settings(max_examples=100)
@given(seeds)
def test_post_satisfied_means_success_without_action(seed):
    check_post_satisfied(random_skill_case(random.Random(seed)))


@settings(max_examples=100)
@given(seeds)
def test_pre_false_means_failure(seed):
    check_pre_false(random_skill_case(random.Random(seed)))


@settings(max_examples=100)
@given(seeds, st.integers(0, 4))
def test_invariant_flip_fails_that_tick(seed, k):
    case = random_skill_case(random.Random(seed))
    check_inv_flip(case, min(k, case.duration - 1))


@settings(max_examples=100)
@given(seeds)
def test_precondition_checked_once(seed):
    check_memory(random_skill_case(random.Random(seed)))


@settings(max_examples=50)
@given(seeds)
def test_success_is_stable(seed):
    case = random_skill_case(random.Random(seed))
    w = skill_case_world(case, {**satisfying(case.pre), **satisfying(case.inv), **violating(case.post)})
    statuses, _ = run(expand_skill(case_skill(case)), w, [skill_case_action(case, [])], case.duration + 5)
    first = statuses.index(SUCCESS)
    assert all(s is SUCCESS for s in statuses[first:])
