"""Behavior tree nodes and tick semantics.

Nodes keep their own execution state (last status, Sequence* memory), so a
tree instance must be driven by one executor at a time. ``tick`` performs one
pass from the root and advances the world clock by ``dt``::

    root = Fallback("goal", [ConditionNode("done", "x == 1"), ActionNode("set", "set_x")])
    status = tick(root, world, actions)
"""

from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Mapping

from .errors import StateSpaceTooLarge, UnboundAction
from .worldmodel import Condition, VarRef, WorldState, condition_from, eval_condition


class Status(enum.Enum):
    RUNNING = "R"
    SUCCESS = "S"
    FAILURE = "F"

    @property
    def letter(self) -> str:
        return self.value

    @classmethod
    def from_letter(cls, letter: str) -> "Status":
        return cls(letter)


RUNNING, SUCCESS, FAILURE = Status.RUNNING, Status.SUCCESS, Status.FAILURE

StepResult = tuple  # (Status, Mapping[str, Any] | None)


@dataclass
class ActionImpl:
    """Executable behaviour behind an ``ActionNode``.

    ``step(world, params)`` runs once per tick and returns ``(status, updates)``;
    the engine applies ``updates`` to the world. ``on_halt(params)`` is called
    when a running activation is preempted.
    """

    name: str
    step: Callable[[WorldState, dict], StepResult]
    on_halt: Callable[[dict], None] | None = None


class ActionRegistry:
    def __init__(self, impls: Iterable[ActionImpl] = ()):
        self._impls: dict[str, ActionImpl] = {}
        for impl in impls:
            self.add(impl)

    def add(self, impl: ActionImpl) -> None:
        if impl.name in self._impls:
            raise ValueError(f"action {impl.name!r} already registered")
        self._impls[impl.name] = impl

    def get(self, name: str) -> ActionImpl:
        try:
            return self._impls[name]
        except KeyError:
            raise UnboundAction(name) from None

    def __contains__(self, name: object) -> bool:
        return name in self._impls

    def __iter__(self) -> Iterator[ActionImpl]:
        return iter(self._impls.values())

    def __len__(self) -> int:
        return len(self._impls)

    def names(self) -> list[str]:
        return list(self._impls)


# ---------------------------------------------------------------------------
# Traces


@dataclass(frozen=True)
class TraceRecord:
    k: int
    node: str
    status: Status
    t: float
    host: str | None = None

    def format(self) -> str:
        node = f"{self.host}:{self.node}" if self.host else self.node
        return f"k={self.k} node={node} status={self.status.letter} t={self.t!r}"


class TickTrace:
    def __init__(self, records: Iterable[TraceRecord] = ()):
        self.records: list[TraceRecord] = list(records)

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TickTrace) and self.records == other.records

    def for_node(self, node: str, host: str | None = None) -> list[TraceRecord]:
        return [r for r in self.records if r.node == node and (host is None or r.host == host)]

    def format(self) -> str:
        return "".join(r.format() + "\n" for r in self.records)

    @classmethod
    def parse(cls, text: str) -> "TickTrace":
        records = []
        for line in text.splitlines():
            if not line.strip():
                continue
            fields = dict(part.split("=", 1) for part in line.split())
            node = fields["node"]
            host = None
            if ":" in node:
                host, node = node.split(":", 1)
            records.append(
                TraceRecord(int(fields["k"]), node, Status(fields["status"]), float(fields["t"]), host)
            )
        return cls(records)


# ---------------------------------------------------------------------------
# Tick context


@dataclass
class TickContext:
    world: WorldState
    actions: ActionRegistry = field(default_factory=ActionRegistry)
    trace: TickTrace | None = None
    resolver: Callable[[Condition], "Node | None"] | None = None
    host: str | None = None
    k: int | None = None
    t: float | None = None
    observer: Callable[["Node", Status], None] | None = None

    def record(self, node: "Node", status: Status) -> None:
        if self.observer is not None:
            self.observer(node, status)
        if self.trace is not None:
            k = self.world.ticks if self.k is None else self.k
            t = self.world.clock if self.t is None else self.t
            self.trace.append(TraceRecord(k, node.id, status, t, self.host))


# ---------------------------------------------------------------------------
# Nodes


class Node:
    kind = "node"
    max_children: int | None = None

    def __init__(self, id: str, children: Iterable["Node"] = ()):
        self.id = id
        self.children: list[Node] = list(children)
        if self.max_children is not None and len(self.children) > self.max_children:
            raise ValueError(f"{self.kind} node {id!r} takes at most {self.max_children} children")
        self.status: Status | None = None

    def tick(self, ctx: TickContext) -> Status:
        status = self._tick(ctx)
        self.status = status
        ctx.record(self, status)
        return status

    def _tick(self, ctx: TickContext) -> Status:
        raise NotImplementedError

    def halt(self, ctx: TickContext | None = None) -> None:
        """Stop a running activation; idle nodes are left alone."""
        if self.status is RUNNING:
            self._halt(ctx)
            for child in self.children:
                child.halt(ctx)
        self.status = None

    def _halt(self, ctx: TickContext | None) -> None:
        pass

    def _halt_from(self, index: int, ctx: TickContext) -> None:
        for child in self.children[index:]:
            if child.status is RUNNING:
                child.halt(ctx)

    def walk(self) -> Iterator["Node"]:
        yield self
        for child in self.children:
            yield from child.walk()

    def find(self, node_id: str) -> "Node":
        for node in self.walk():
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    def structure(self) -> tuple:
        """Hashable description of the static tree, used for equality checks."""
        return (self.kind, self.id, self._attrs(), tuple(c.structure() for c in self.children))

    def _attrs(self) -> tuple:
        return ()

    def state(self) -> tuple:
        return tuple((n.status, getattr(n, "memory", 0)) for n in self.walk())

    def restore(self, state: tuple) -> None:
        for node, (status, memory) in zip(self.walk(), state):
            node.status = status
            if hasattr(node, "memory"):
                node.memory = memory

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.id!r})"


class Sequence(Node):
    kind = "sequence"

    def _tick(self, ctx):
        for i, child in enumerate(self.children):
            status = child.tick(ctx)
            if status is not SUCCESS:
                self._halt_from(i + 1, ctx)
                return status
        return SUCCESS


class Fallback(Node):
    kind = "fallback"

    def _tick(self, ctx):
        for i, child in enumerate(self.children):
            status = child.tick(ctx)
            if status is not FAILURE:
                self._halt_from(i + 1, ctx)
                return status
        return FAILURE


class SequenceMem(Node):
    """Sequence that skips children which already succeeded in this activation."""

    kind = "sequence_mem"

    def __init__(self, id, children=()):
        super().__init__(id, children)
        self.memory = 0

    def _tick(self, ctx):
        for i in range(self.memory, len(self.children)):
            status = self.children[i].tick(ctx)
            if status is SUCCESS:
                continue
            self._halt_from(i + 1, ctx)
            self.memory = i if status is RUNNING else 0
            return status
        self.memory = 0
        return SUCCESS

    def _halt(self, ctx):
        self.memory = 0

    def halt(self, ctx=None):
        super().halt(ctx)
        self.memory = 0


class ConditionNode(Node):
    kind = "cond"
    max_children = 0

    def __init__(self, id: str, condition: Condition | str):
        super().__init__(id)
        self.condition = condition_from(condition)

    def _tick(self, ctx):
        return SUCCESS if eval_condition(self.condition, ctx.world) else FAILURE

    def _attrs(self):
        return (self.condition,)


class ActionNode(Node):
    """Leaf bound to a registered action.

    ``bindings`` maps parameter names to constants or ``VarRef``s read at tick
    time. ``mapping`` copies parameters into world variables when an
    activation starts, and renames out-parameter updates to their variables.
    """

    kind = "action"
    max_children = 0

    def __init__(self, id: str, action: str, bindings: Mapping[str, Any] | None = None,
                 mapping: Mapping[str, str] | None = None):
        super().__init__(id)
        self.action = action
        self.bindings = dict(bindings or {})
        self.mapping = dict(mapping or {})

    def params(self, world: WorldState) -> dict:
        return {
            name: world.get(v.name) if isinstance(v, VarRef) else v
            for name, v in self.bindings.items()
        }

    def _tick(self, ctx):
        impl = ctx.actions.get(self.action)
        params = self.params(ctx.world)
        if self.status is not RUNNING:
            starting = {self.mapping[p]: v for p, v in params.items() if p in self.mapping}
            if starting:
                ctx.world.update(starting)
        status, updates = impl.step(ctx.world, params)
        if updates:
            ctx.world.update({self.mapping.get(name, name): v for name, v in updates.items()})
        return status

    def _halt(self, ctx):
        if ctx is None:
            return
        impl = ctx.actions.get(self.action)
        if impl.on_halt is not None:
            impl.on_halt(self.params(ctx.world) if ctx.world is not None else {})

    def _attrs(self):
        return (self.action, tuple(sorted(self.bindings.items(), key=lambda kv: kv[0])),
                tuple(sorted(self.mapping.items())))


class LookupDecorator(Node):
    """Single-child decorator that binds an achiever for ``wanted``.

    A child given at construction is the plan-time binding. Otherwise the
    context's resolver is asked on the first tick; if nothing is found the
    decorator fails.
    """

    kind = "lookup"
    max_children = 1

    def __init__(self, id: str, wanted: Condition | str, child: Node | None = None):
        super().__init__(id, [child] if child is not None else [])
        self.wanted = condition_from(wanted)

    @property
    def child(self) -> Node | None:
        return self.children[0] if self.children else None

    def _tick(self, ctx):
        if not self.children and ctx.resolver is not None:
            found = ctx.resolver(self.wanted)
            if found is not None:
                self.children = [found]
        if not self.children:
            return FAILURE
        return self.children[0].tick(ctx)

    def _attrs(self):
        return (self.wanted,)


# ---------------------------------------------------------------------------
# Driving a tree


def validate_tree(root: Node) -> None:
    seen: set[str] = set()
    ids: set[int] = set()
    for node in root.walk():
        if id(node) in ids:
            raise ValueError(f"node {node.id!r} appears twice: the node graph must be a tree")
        ids.add(id(node))
        if node.id in seen:
            raise ValueError(f"duplicate node id {node.id!r}")
        seen.add(node.id)
        if node.max_children is not None and len(node.children) > node.max_children:
            raise ValueError(f"{node.kind} node {node.id!r} has too many children")


def tick(root: Node, world: WorldState, actions: ActionRegistry | Iterable[ActionImpl] | None = None,
         *, trace: TickTrace | None = None, resolver=None, ctx: TickContext | None = None) -> Status:
    """Tick ``root`` once against ``world`` and advance its clock by one step."""
    if ctx is None:
        ctx = TickContext(world, _registry(actions), trace, resolver)
    status = root.tick(ctx)
    world.advance()
    return status


def halt(root: Node, world: WorldState | None = None, actions=None) -> None:
    root.halt(TickContext(world, _registry(actions)) if world is not None else None)


def _registry(actions) -> ActionRegistry:
    if actions is None:
        return ActionRegistry()
    if isinstance(actions, ActionRegistry):
        return actions
    return ActionRegistry(actions)


class Executor:
    """Convenience wrapper that owns the world, actions and trace of one tree."""

    def __init__(self, root: Node, world: WorldState, actions=None, *, resolver=None,
                 trace: TickTrace | None = None, host: str | None = None):
        validate_tree(root)
        self.root = root
        self.ctx = TickContext(world, _registry(actions), trace if trace is not None else TickTrace(),
                               resolver, host)

    @property
    def world(self) -> WorldState:
        return self.ctx.world

    @property
    def trace(self) -> TickTrace:
        return self.ctx.trace

    def tick(self) -> Status:
        return tick(self.root, self.world, ctx=self.ctx)

    def halt(self) -> None:
        self.root.halt(self.ctx)

    def run(self, max_ticks: int, until_done: bool = True) -> list[Status]:
        statuses = []
        for _ in range(max_ticks):
            status = self.tick()
            statuses.append(status)
            if until_done and status is not RUNNING:
                break
        return statuses


# ---------------------------------------------------------------------------
# Empirical finite-time-success check

MAX_FTS_STATES = 100_000


@dataclass
class FtsReport:
    holds: bool
    bound: int
    checked: int
    violations: list[WorldState]
    ticks_to_success: list[int | None]

    def summary(self) -> str:
        verdict = "FTS holds" if self.holds else "FTS violated"
        return f"{verdict}: {self.checked} states, bound {self.bound}, {len(self.violations)} violating"


def check_fts(root: Node, states: Iterable[WorldState], bound: int, actions=None, *,
              resolver=None, plant: Callable[[WorldState, int], None] | None = None) -> FtsReport:
    """Run the closed loop from every initial state and demand Success within ``bound`` ticks.

    ``plant(world, k)`` is applied before the k-th tick (0-based) and stands in
    for dynamics that are not driven by the tree's own actions.
    """
    if bound < 1:
        raise ValueError("bound must be at least 1")
    states = list(states)
    if len(states) > MAX_FTS_STATES:
        raise StateSpaceTooLarge(f"{len(states)} states exceed the limit of {MAX_FTS_STATES}")
    registry = _registry(actions)
    violations, steps = [], []
    for initial in states:
        tree = copy.deepcopy(root)
        world = initial.copy()
        ctx = TickContext(world, registry, None, resolver)
        reached = None
        for k in range(bound):
            if plant is not None:
                plant(world, k)
            if tick(tree, world, ctx=ctx) is SUCCESS:
                reached = k + 1
                break
        tree.halt(ctx)
        steps.append(reached)
        if reached is None:
            violations.append(initial)
    return FtsReport(not violations, bound, len(states), violations, steps)
