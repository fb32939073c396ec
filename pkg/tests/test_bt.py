import random

import pytest
from hypothesis import given, settings, strategies as st

from btweave.bt import (
    FAILURE, RUNNING, SUCCESS, ActionImpl, ActionNode, ActionRegistry, ConditionNode, Executor, Fallback,
    LookupDecorator, Sequence, SequenceMem, TickContext, TickTrace, TraceRecord, check_fts, halt, tick,
    validate_tree,
)
from btweave.errors import StateSpaceTooLarge, UnboundAction
from btweave.worldmodel import WorldState
from oracles import LETTER, VARS, RefEvaluator, bool_world, build_engine_tree, disturbances, random_tree


class Counting:
    """Action double that returns scripted statuses and counts ticks and halts."""

    def __init__(self, name, script, updates=None):
        self.name, self.script, self.updates = name, list(script), updates or {}
        self.ticks = 0
        self.halts = 0

    def impl(self):
        def step(world, params):
            s = self.script[min(self.ticks, len(self.script) - 1)]
            self.ticks += 1
            return s, dict(self.updates)

        def on_halt(params):
            self.halts += 1

        return ActionImpl(self.name, step, on_halt)


def world(**values):
    return WorldState.from_dict(values)


def test_sequence_runs_until_running_child():
    a = Counting("a", [RUNNING])
    root = Sequence("s", [ConditionNode("c", "x == true"), ActionNode("a", "a")])
    assert tick(root, world(x=True), [a.impl()]) is RUNNING
    assert a.ticks == 1


def test_sequence_fails_fast():
    a = Counting("a", [SUCCESS])
    root = Sequence("s", [ConditionNode("c", "x == true"), ActionNode("a", "a")])
    assert tick(root, world(x=False), [a.impl()]) is FAILURE
    assert a.ticks == 0


def test_fallback_tries_alternatives():
    a = Counting("a", [SUCCESS])
    root = Fallback("f", [ConditionNode("c", "x == true"), ActionNode("a", "a")])
    assert tick(root, world(x=False), [a.impl()]) is SUCCESS


def test_sequence_mem_skips_succeeded_children():
    a = Counting("a", [RUNNING, RUNNING, SUCCESS])
    w = world(x=True)
    root = SequenceMem("m", [ConditionNode("c", "x == true"), ActionNode("a", "a")])
    acts = [a.impl()]
    assert tick(root, w, acts) is RUNNING
    w["x"] = False
    assert tick(root, w, acts) is RUNNING
    assert tick(root, w, acts) is SUCCESS
    assert root.memory == 0
    # the next activation starts from the first child again
    assert tick(root, w, acts) is FAILURE


def test_sequence_mem_failure_clears_memory():
    a = Counting("a", [RUNNING, FAILURE])
    root = SequenceMem("m", [ConditionNode("c", "x == true"), ActionNode("a", "a")])
    w = world(x=True)
    tick(root, w, [a.impl()])
    assert root.memory == 1
    assert tick(root, w, [a.impl()]) is FAILURE
    assert root.memory == 0


def test_preempted_running_branch_is_halted():
    a = Counting("a", [RUNNING])
    w = world(x=False)
    root = Fallback("f", [ConditionNode("c", "x == true"), ActionNode("a", "a")])
    acts = ActionRegistry([a.impl()])
    tick(root, w, acts)
    w["x"] = True
    ctx = TickContext(w, acts)
    assert tick(root, w, ctx=ctx) is SUCCESS
    assert a.halts == 1


def test_halt_semantics():
    a = Counting("a", [RUNNING])
    acts = ActionRegistry([a.impl()])
    w = world(x=True)
    root = SequenceMem("m", [ConditionNode("c", "x == true"), ActionNode("a", "a")])
    halt(root, w, acts)
    assert a.halts == 0
    tick(root, w, acts)
    halt(root, w, acts)
    assert a.halts == 1 and root.memory == 0
    halt(root, w, acts)
    assert a.halts == 1


def test_halt_then_tick_matches_fresh_tree():
    def build():
        return SequenceMem("m", [ConditionNode("c", "x == true"), ActionNode("a", "a")])

    used, fresh = build(), build()
    a = Counting("a", [RUNNING])
    acts = ActionRegistry([a.impl()])
    w1, w2 = world(x=True), world(x=True)
    tick(used, w1, acts)
    halt(used, w1, acts)
    w1["x"] = False
    w2["x"] = False
    t1, t2 = TickTrace(), TickTrace()
    tick(used, w1, acts, trace=t1)
    tick(fresh, w2, acts, trace=t2)
    assert [(r.node, r.status) for r in t1] == [(r.node, r.status) for r in t2]


def test_unbound_action():
    with pytest.raises(UnboundAction):
        tick(ActionNode("a", "missing"), WorldState())


def test_lookup_decorator_without_child_or_resolver_fails():
    assert tick(LookupDecorator("l", "x == true"), world(x=False)) is FAILURE


def test_tree_shape_is_validated():
    with pytest.raises(ValueError):
        validate_tree(Sequence("s", [ConditionNode("c", "x == true"), ConditionNode("c", "x == true")]))
    shared = ConditionNode("c", "x == true")
    with pytest.raises(ValueError):
        validate_tree(Sequence("s", [shared, Fallback("f", [shared])]))
    deco = LookupDecorator("l", "x == true", ConditionNode("c", "x == true"))
    deco.children.append(ConditionNode("d", "x == true"))
    with pytest.raises(ValueError):
        validate_tree(deco)


def test_clock_law_and_trace_format():
    w = WorldState(dt=0.25, t0=2.0)
    w.declare("x", "bool", True)
    ex = Executor(ConditionNode("c", "x == true"), w)
    ex.run(4, until_done=False)
    assert w.clock == pytest.approx(3.0)
    lines = ex.trace.format().splitlines()
    assert lines[0] == "k=0 node=c status=S t=2.0"
    assert lines[3] == "k=3 node=c status=S t=2.75"
    assert TickTrace.parse(ex.trace.format()) == ex.trace


def test_host_prefixed_trace_lines_round_trip():
    trace = TickTrace([TraceRecord(3, "axis.act", RUNNING, 0.1 + 0.2, "axis")])
    text = trace.format()
    assert text == "k=3 node=axis:axis.act status=R t=0.30000000000000004\n"
    assert TickTrace.parse(text) == trace


def test_check_fts_examples():
    def set_x(world, params):
        return SUCCESS, {"x": 1}

    root = Fallback("f", [ConditionNode("c", "x == 1"), ActionNode("a", "set_x")])
    states = [world(x=0), world(x=1)]
    report = check_fts(root, states, 3, [ActionImpl("set_x", set_x)])
    assert report.holds and report.violations == []
    assert report.ticks_to_success == [1, 1]

    never = ActionNode("a", "never")
    impl = ActionImpl("never", lambda w, p: (RUNNING, {}))
    report = check_fts(never, states, 5, [impl])
    assert not report.holds and report.violations == states

    with pytest.raises(ValueError):
        check_fts(root, states, 0, [ActionImpl("set_x", set_x)])


def test_check_fts_state_limit():
    states = [world(x=0)] * 100_001
    with pytest.raises(StateSpaceTooLarge):
        check_fts(ConditionNode("c", "x == 0"), states, 1)


# ---------------------------------------------------------------------------
# Properties against the reference evaluator


def _run_pair(seed, ticks=50):
    rng = random.Random(seed)
    tree = random_tree(rng)
    init = {v: rng.random() < 0.5 for v in VARS}
    dist = disturbances(rng, ticks)
    ref, ref_world = RefEvaluator(tree), dict(init)
    halted, acts = [], ActionRegistry()
    root = build_engine_tree(tree, halted, acts)
    w = bool_world(init)
    trace = TickTrace()
    ctx = TickContext(w, acts, trace)
    for k in range(ticks):
        ref_world.update(dist[k])
        w.update(dist[k])
        expected = ref.tick(ref_world)
        got = LETTER[tick(root, w, ctx=ctx)]
        assert got == expected, f"seed {seed} tick {k}"
        assert halted == ref.halted
        assert w.as_dict() == ref_world
    return root, trace


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**9))
def test_engine_matches_reference(seed):
    _run_pair(seed)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**9))
def test_trace_invariants(seed):
    root, trace = _run_pair(seed, ticks=20)
    kinds = {n.id: n.kind for n in root.walk()}
    by_tick = {}
    for r in trace:
        by_tick.setdefault(r.k, []).append(r)
    for k, records in by_tick.items():
        # conditions never run; at most one action is left running per tick, and nothing runs after it
        assert all(r.status is not RUNNING for r in records if kinds[r.node] == "cond")
        leaves = [r for r in records if kinds[r.node] in ("cond", "action")]
        running = [i for i, r in enumerate(leaves) if r.status is RUNNING]
        assert len(running) <= 1
        if running:
            assert running[0] == len(leaves) - 1
        ids = [r.node for r in records]
        assert len(ids) == len(set(ids))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**9))
def test_determinism(seed):
    assert _run_pair(seed, 20)[1] == _run_pair(seed, 20)[1]
