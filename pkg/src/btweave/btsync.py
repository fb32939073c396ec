"""Tick-synchronisation protocol between a parent tree and a remote subtree.

Both sides are IO-automata ("roles"). Their product with one-slot channels in
each direction is explored exhaustively; the protocol is consistent when no
reachable state is stuck outside acceptance (deadlock), no reachable cycle is
cut off from acceptance (livelock), and no role writes into a full channel.

Message names: ``TICK`` and ``HALT`` go parent -> child; ``STATUS_R``,
``STATUS_S`` and ``STATUS_F`` go child -> parent. A halted child acknowledges
with ``STATUS_F``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .bt import FAILURE, RUNNING, SUCCESS, ConditionNode, Node, TickContext
from .errors import AlphabetMismatch, BtweaveError, ProtocolViolation, RoleReuse, StateSpaceTooLarge

TICK, HALT = "TICK", "HALT"
STATUS_R, STATUS_S, STATUS_F = "STATUS_R", "STATUS_S", "STATUS_F"
STATUS_MESSAGES = {"R": STATUS_R, "S": STATUS_S, "F": STATUS_F}
PARENT, CHILD = "parent", "child"
MAX_PRODUCT_STATES = 100_000


@dataclass(frozen=True)
class Transition:
    src: str
    kind: str  # "in", "out" or "internal"
    msg: str | None
    dst: str


@dataclass
class RoleAutomaton:
    name: str
    role: str
    initial: str
    accepting: frozenset[str]
    transitions: list[Transition] = field(default_factory=list)
    states: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.role not in (PARENT, CHILD):
            raise ValueError(f"role must be {PARENT!r} or {CHILD!r}")
        self.accepting = frozenset(self.accepting)
        known = list(self.states)
        for t in self.transitions:
            for s in (t.src, t.dst):
                if s not in known:
                    known.append(s)
        for s in [self.initial, *sorted(self.accepting)]:
            if s not in known:
                known.append(s)
        self.states = known
        seen = set()
        for t in self.transitions:
            if t.kind == "in":
                key = (t.src, t.msg)
                if key in seen:
                    raise ValueError(f"{self.name}: two transitions on input {t.msg} from {t.src}")
                seen.add(key)

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other

    def inputs(self) -> set[str]:
        return {t.msg for t in self.transitions if t.kind == "in"}

    def outputs(self) -> set[str]:
        return {t.msg for t in self.transitions if t.kind == "out"}

    def on(self, state: str, msg: str) -> str | None:
        for t in self.transitions:
            if t.src == state and t.kind == "in" and t.msg == msg:
                return t.dst
        return None

    def emits(self, state: str) -> list[Transition]:
        return [t for t in self.transitions if t.src == state and t.kind == "out"]

    def internal(self, state: str) -> list[Transition]:
        return [t for t in self.transitions if t.src == state and t.kind == "internal"]

    def format(self) -> str:
        lines = [f"role {self.role} {self.name}"]
        for s in self.states:
            flags = (" accept" if s in self.accepting else "") + (" initial" if s == self.initial else "")
            lines.append(f"state {s}{flags}")
            for t in self.transitions:
                if t.src != s:
                    continue
                if t.kind == "in":
                    lines.append(f"  on {t.msg} -> {t.dst}")
                elif t.kind == "out":
                    lines.append(f"  emit {t.msg} -> {t.dst}")
                else:
                    lines.append(f"  internal -> {t.dst}")
        return "\n".join(lines) + "\n"


def _role(name, role, initial, accepting, spec: Iterable[tuple[str, str, str | None, str]]) -> RoleAutomaton:
    return RoleAutomaton(name, role, initial, frozenset(accepting), [Transition(*t) for t in spec])


def builtin_roles() -> tuple[RoleAutomaton, RoleAutomaton]:
    """The shipped parent/child role pair."""
    parent = _role("btsync.parent", PARENT, "Idle", {"Idle", "Done"}, [
        ("Idle", "out", TICK, "AwaitStatus"),
        ("AwaitStatus", "in", STATUS_R, "Running"),
        ("AwaitStatus", "in", STATUS_S, "Done"),
        ("AwaitStatus", "in", STATUS_F, "Done"),
        ("Running", "out", TICK, "AwaitStatus"),
        ("Running", "out", HALT, "AwaitHaltAck"),
        ("AwaitHaltAck", "in", STATUS_F, "Idle"),
        ("Done", "out", TICK, "AwaitStatus"),
    ])
    child = _role("btsync.child", CHILD, "Idle", {"Idle", "Done"}, [
        ("Idle", "in", TICK, "Ticking"),
        ("Ticking", "out", STATUS_R, "Running"),
        ("Ticking", "out", STATUS_S, "Done"),
        ("Ticking", "out", STATUS_F, "Done"),
        ("Running", "in", TICK, "Ticking"),
        ("Running", "in", HALT, "Halting"),
        ("Halting", "out", STATUS_F, "Idle"),
        ("Done", "in", TICK, "Ticking"),
    ])
    return parent, child


# ---------------------------------------------------------------------------
# Text format


class RoleFormatError(BtweaveError):
    def __init__(self, line: int, message: str):
        super().__init__(line, message)
        self.line = line
        self.message = message

    def __str__(self):
        return f"line {self.line}: {self.message}"


def parse_roles(text: str) -> list[RoleAutomaton]:
    """Read ``role <parent|child> <name>`` blocks of state/on/emit lines."""
    roles = []
    current = None
    state = None

    def finish():
        if current is None:
            return
        name, role, states, accepting, initial, transitions, line = current
        if initial is None:
            raise RoleFormatError(line, f"role {name} has no initial state")
        roles.append(RoleAutomaton(name, role, initial, frozenset(accepting), transitions, states))

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        head = words[0]
        if head == "role":
            finish()
            if len(words) != 3 or words[1] not in (PARENT, CHILD):
                raise RoleFormatError(lineno, "expected: role <parent|child> <name>")
            current = (words[2], words[1], [], set(), None, [], lineno)
            state = None
            continue
        if current is None:
            raise RoleFormatError(lineno, "expected a role header first")
        if head == "state":
            if len(words) < 2 or any(w not in ("accept", "initial") for w in words[2:]):
                raise RoleFormatError(lineno, "expected: state <name> [accept] [initial]")
            state = words[1]
            current[2].append(state)
            if "accept" in words[2:]:
                current[3].add(state)
            if "initial" in words[2:]:
                if current[4] is not None:
                    raise RoleFormatError(lineno, "second initial state")
                current = current[:4] + (state,) + current[5:]
            continue
        if state is None:
            raise RoleFormatError(lineno, "transition outside a state block")
        if head in ("on", "emit") and len(words) == 4 and words[2] == "->":
            current[5].append(Transition(state, "in" if head == "on" else "out", words[1], words[3]))
        elif head == "internal" and len(words) == 3 and words[1] == "->":
            current[5].append(Transition(state, "internal", None, words[2]))
        else:
            raise RoleFormatError(lineno, "expected: on <msg> -> <state> | emit <msg> -> <state>")
    finish()
    return roles


def load_role_pair(text: str) -> tuple[RoleAutomaton, RoleAutomaton]:
    roles = parse_roles(text)
    parents = [r for r in roles if r.role == PARENT]
    children = [r for r in roles if r.role == CHILD]
    if len(parents) != 1 or len(children) != 1:
        raise RoleFormatError(1, "a roles file must define exactly one parent and one child role")
    return parents[0], children[0]


# ---------------------------------------------------------------------------
# Product construction


class PState(NamedTuple):
    parent: str
    child: str
    to_child: str | None
    to_parent: str | None

    def __str__(self):
        return f"({self.parent}, {self.child}, ->{self.to_child or '-'}, <-{self.to_parent or '-'})"


class Step(NamedTuple):
    actor: str  # PARENT or CHILD
    kind: str  # "emit", "recv" or "internal"
    msg: str | None

    def __str__(self):
        return f"{self.actor} {self.kind} {self.msg or ''}".rstrip()


@dataclass
class Finding:
    kind: str  # "deadlock", "livelock", "overflow" or "acceptance"
    state: object
    witness: list
    cycle: list = field(default_factory=list)
    detail: str = ""

    def describe(self) -> str:
        trace = " ; ".join(str(s) for s in self.witness) or "<initial>"
        text = f"{self.kind} at {self.state}: {trace}"
        if self.cycle:
            text += " ; cycle: " + " ; ".join(str(s) for s in self.cycle)
        if self.detail:
            text += f" ({self.detail})"
        return text


@dataclass
class ProtocolAutomaton:
    parent: RoleAutomaton
    child: RoleAutomaton
    initial: PState
    edges: dict[PState, list[tuple[Step, PState]]]
    overflows: list[Finding]

    @property
    def states(self) -> list[PState]:
        return list(self.edges)

    def accepting(self, s: PState) -> bool:
        return (s.parent in self.parent.accepting and s.child in self.child.accepting
                and s.to_child is None and s.to_parent is None)

    @property
    def transition_count(self) -> int:
        return sum(len(v) for v in self.edges.values())


def check_alphabets(parent: RoleAutomaton, child: RoleAutomaton) -> None:
    if parent.role != PARENT or child.role != CHILD:
        raise AlphabetMismatch("compose expects a parent role and a child role")
    missing = (parent.outputs() - child.inputs()) | (child.outputs() - parent.inputs())
    if missing:
        raise AlphabetMismatch(f"messages without a receiver: {sorted(missing)}")


def moves(parent: RoleAutomaton, child: RoleAutomaton, s: PState):
    """Yield ``(step, next_state)`` for enabled moves and ``(step, None)`` for overflowing emits."""
    for t in parent.emits(s.parent):
        step = Step(PARENT, "emit", t.msg)
        if s.to_child is None:
            yield step, s._replace(parent=t.dst, to_child=t.msg)
        else:
            yield step, None
    for t in parent.internal(s.parent):
        yield Step(PARENT, "internal", None), s._replace(parent=t.dst)
    if s.to_parent is not None:
        dst = parent.on(s.parent, s.to_parent)
        if dst is not None:
            yield Step(PARENT, "recv", s.to_parent), s._replace(parent=dst, to_parent=None)
    for t in child.emits(s.child):
        step = Step(CHILD, "emit", t.msg)
        if s.to_parent is None:
            yield step, s._replace(child=t.dst, to_parent=t.msg)
        else:
            yield step, None
    for t in child.internal(s.child):
        yield Step(CHILD, "internal", None), s._replace(child=t.dst)
    if s.to_child is not None:
        dst = child.on(s.child, s.to_child)
        if dst is not None:
            yield Step(CHILD, "recv", s.to_child), s._replace(child=dst, to_child=None)


def compose(parent: RoleAutomaton, child: RoleAutomaton) -> ProtocolAutomaton:
    """Exhaustive product of the two roles with one-slot channels."""
    check_alphabets(parent, child)
    init = PState(parent.initial, child.initial, None, None)
    edges: dict[PState, list] = {}
    pred: dict[PState, tuple] = {init: None}
    overflows = []
    queue = deque([init])
    while queue:
        s = queue.popleft()
        out = []
        for step, nxt in moves(parent, child, s):
            if nxt is None:
                overflows.append(Finding("overflow", s, _path(pred, s) + [step],
                                         detail=f"{step.actor} emits {step.msg} into a full channel"))
                continue
            out.append((step, nxt))
            if nxt not in pred:
                pred[nxt] = (s, step)
                queue.append(nxt)
        edges[s] = out
        if len(edges) > MAX_PRODUCT_STATES:
            raise StateSpaceTooLarge(f"protocol product exceeds {MAX_PRODUCT_STATES} states")
    return ProtocolAutomaton(parent, child, init, edges, overflows)


def _path(pred: dict, target) -> list:
    steps = []
    node = target
    while pred[node] is not None:
        node, step = pred[node]
        steps.append(step)
    steps.reverse()
    return steps


# ---------------------------------------------------------------------------
# Consistency


@dataclass
class ConsistencyReport:
    states: int
    transitions: int
    deadlocks: list[Finding] = field(default_factory=list)
    livelocks: list[Finding] = field(default_factory=list)
    overflows: list[Finding] = field(default_factory=list)
    other: list[Finding] = field(default_factory=list)
    bounded: bool = False

    @property
    def findings(self) -> list[Finding]:
        return self.deadlocks + self.livelocks + self.overflows + self.other

    @property
    def consistent(self) -> bool:
        return not self.findings

    def format(self) -> str:
        lines = [
            "consistent" if self.consistent else "inconsistent",
            f"states: {self.states}",
            f"transitions: {self.transitions}",
            f"deadlocks: {len(self.deadlocks)}",
            f"livelocks: {len(self.livelocks)}",
            f"overflows: {len(self.overflows)}",
        ]
        if self.other:
            lines.append(f"other findings: {len(self.other)}")
        if self.bounded:
            lines.append("note: bounded exploration, not a proof")
        lines.extend("  " + f.describe() for f in self.findings)
        return "\n".join(lines) + "\n"


def strongly_connected_components(nodes: Iterable, succ) -> list[list]:
    """Iterative Tarjan; ``succ(v)`` yields successor nodes."""
    index: dict = {}
    low: dict = {}
    on_stack: set = set()
    stack: list = []
    components = []
    counter = 0
    for root in nodes:
        if root in index:
            continue
        work = [(root, iter(succ(root)))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ(w))))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                components.append(comp)
    return components


def _shortest_paths(initial, edges) -> dict:
    pred = {initial: None}
    queue = deque([initial])
    while queue:
        s = queue.popleft()
        for step, nxt in edges[s]:
            if nxt not in pred:
                pred[nxt] = (s, step)
                queue.append(nxt)
    return pred


def _coreachable(edges: dict, accepting) -> set:
    reverse: dict = {s: [] for s in edges}
    for s, out in edges.items():
        for _, nxt in out:
            reverse[nxt].append(s)
    good = {s for s in edges if accepting(s)}
    queue = deque(good)
    while queue:
        s = queue.popleft()
        for p in reverse[s]:
            if p not in good:
                good.add(p)
                queue.append(p)
    return good


def _cycle_through(start, members: set, edges) -> list:
    """Shortest non-empty step sequence from ``start`` back to itself inside ``members``."""
    pred = {}
    queue = deque()
    for step, nxt in edges[start]:
        if nxt in members and nxt not in pred:
            pred[nxt] = (start, step)
            queue.append(nxt)
    while queue:
        s = queue.popleft()
        if s == start:
            break
        for step, nxt in edges[s]:
            if nxt in members and nxt not in pred:
                pred[nxt] = (s, step)
                queue.append(nxt)
    steps = []
    node = start
    while True:
        node, step = pred[node]
        steps.append(step)
        if node == start:
            break
    steps.reverse()
    return steps


def analyse_graph(initial, edges: dict, accepting) -> tuple[list[Finding], list[Finding]]:
    """Deadlocks and livelocks of an explicit transition graph."""
    pred = _shortest_paths(initial, edges)
    good = _coreachable(edges, accepting)
    deadlocks = [
        Finding("deadlock", s, _path(pred, s))
        for s in edges if not edges[s] and not accepting(s)
    ]
    livelocks = []
    for comp in strongly_connected_components(list(edges), lambda s: [n for _, n in edges[s]]):
        members = set(comp)
        cyclic = len(comp) > 1 or any(n == comp[0] for _, n in edges[comp[0]])
        if not cyclic or members & good:
            continue
        entry = min(comp, key=lambda s: len(_path(pred, s)))
        livelocks.append(Finding("livelock", entry, _path(pred, entry), _cycle_through(entry, members, edges)))
    return deadlocks, livelocks


def check_consistency(p: ProtocolAutomaton) -> ConsistencyReport:
    deadlocks, livelocks = analyse_graph(p.initial, p.edges, p.accepting)
    return ConsistencyReport(len(p.edges), p.transition_count, deadlocks, livelocks, list(p.overflows))


def replay(parent: RoleAutomaton, child: RoleAutomaton, steps: Iterable[Step]) -> PState:
    """Re-run a witness on the role automata alone; raises if a step is not enabled."""
    s = PState(parent.initial, child.initial, None, None)
    for step in steps:
        role = parent if step.actor == PARENT else child
        mine = s.parent if step.actor == PARENT else s.child
        outbox = "to_child" if step.actor == PARENT else "to_parent"
        inbox = "to_parent" if step.actor == PARENT else "to_child"
        actor_field = "parent" if step.actor == PARENT else "child"
        if step.kind == "emit":
            options = [t for t in role.emits(mine) if t.msg == step.msg]
            if not options:
                raise ValueError(f"{step} not enabled in {s}")
            if getattr(s, outbox) is not None:
                return s  # the witness ends with the overflowing emit
            s = s._replace(**{actor_field: options[0].dst, outbox: step.msg})
        elif step.kind == "recv":
            if getattr(s, inbox) != step.msg:
                raise ValueError(f"{step}: channel holds {getattr(s, inbox)}")
            dst = role.on(mine, step.msg)
            if dst is None:
                raise ValueError(f"{step} not accepted in {s}")
            s = s._replace(**{actor_field: dst, inbox: None})
        else:
            options = role.internal(mine)
            if not options:
                raise ValueError(f"{step} not enabled in {s}")
            s = s._replace(**{actor_field: options[0].dst})
    return s


def check_protocol(parent: RoleAutomaton | None = None, child: RoleAutomaton | None = None) -> ConsistencyReport:
    if parent is None or child is None:
        parent, child = builtin_roles()
    return check_consistency(compose(parent, child))


# ---------------------------------------------------------------------------
# Mutants used to exercise the checker


def mutant_roles() -> dict[str, tuple[RoleAutomaton, RoleAutomaton, str]]:
    """Deliberately broken role pairs with the finding kind each one must produce."""
    parent, child = builtin_roles()

    def edit(role: RoleAutomaton, name: str, drop=(), add=()):
        keep = [t for t in role.transitions if (t.src, t.kind, t.msg, t.dst) not in set(drop)]
        return RoleAutomaton(name, role.role, role.initial, role.accepting,
                             keep + [Transition(*t) for t in add])

    return {
        "silent_child": (
            parent,
            edit(child, "mutant.silent_child",
                 drop=[("Running", "in", TICK, "Ticking")], add=[("Running", "in", TICK, "Stuck")]),
            "deadlock",
        ),
        "double_tick": (
            edit(parent, "mutant.double_tick", add=[("AwaitStatus", "out", TICK, "AwaitStatus")]),
            child,
            "overflow",
        ),
        "endless_running": (
            edit(parent, "mutant.endless_parent",
                 drop=[("AwaitStatus", "in", STATUS_S, "Done"), ("AwaitStatus", "in", STATUS_F, "Done"),
                       ("Running", "out", HALT, "AwaitHaltAck")]),
            edit(child, "mutant.endless_child",
                 drop=[("Ticking", "out", STATUS_S, "Done"), ("Ticking", "out", STATUS_F, "Done")]),
            "livelock",
        ),
        "no_halt_ack": (
            parent,
            edit(child, "mutant.no_halt_ack", drop=[("Halting", "out", STATUS_F, "Idle")]),
            "deadlock",
        ),
        "swallows_halt": (
            parent,
            edit(child, "mutant.swallows_halt",
                 drop=[("Running", "in", HALT, "Halting")], add=[("Running", "in", HALT, "Running")]),
            "deadlock",
        ),
        "halt_while_waiting": (
            edit(parent, "mutant.halt_while_waiting", add=[("AwaitStatus", "out", HALT, "AwaitHaltAck")]),
            child,
            "overflow",
        ),
        "wrong_ack": (
            parent,
            edit(child, "mutant.wrong_ack",
                 drop=[("Halting", "out", STATUS_F, "Idle")], add=[("Halting", "out", STATUS_S, "Idle")]),
            "deadlock",
        ),
    }


# ---------------------------------------------------------------------------
# Link stepping shared by the runtime monitor and the internal-composition check


class Stuck(BtweaveError):
    """A role cannot take the step the coordinator asks for."""


@dataclass(frozen=True)
class LinkState:
    parent: str
    child: str

    def accepting(self, parent: RoleAutomaton, child: RoleAutomaton) -> bool:
        return self.parent in parent.accepting and self.child in child.accepting


class ProtocolMonitor:
    """Replays the messages observed on one control link against a role pair.

    The runtime calls ``sent``/``received`` for each endpoint; a message that
    the corresponding role cannot take raises ``ProtocolViolation``.
    """

    def __init__(self, parent: RoleAutomaton | None = None, child: RoleAutomaton | None = None):
        if parent is None or child is None:
            parent, child = builtin_roles()
        self.parent_role, self.child_role = parent, child
        self.parent = parent.initial
        self.child = child.initial
        self.log: list[Step] = []

    def _advance(self, actor: str, kind: str, msg: str) -> None:
        role = self.parent_role if actor == PARENT else self.child_role
        state = self.parent if actor == PARENT else self.child
        if kind == "emit":
            options = [t.dst for t in role.emits(state) if t.msg == msg]
            dst = options[0] if options else None
        else:
            dst = role.on(state, msg)
        if dst is None:
            raise ProtocolViolation(f"{role.name} in state {state} cannot {kind} {msg}")
        if actor == PARENT:
            self.parent = dst
        else:
            self.child = dst
        self.log.append(Step(actor, kind, msg))

    def parent_sent(self, msg: str) -> None:
        self._advance(PARENT, "emit", msg)

    def parent_received(self, msg: str) -> None:
        self._advance(PARENT, "recv", msg)

    def child_sent(self, msg: str) -> None:
        self._advance(CHILD, "emit", msg)

    def child_received(self, msg: str) -> None:
        self._advance(CHILD, "recv", msg)

    def can_parent_send(self, msg: str) -> bool:
        return any(t.msg == msg for t in self.parent_role.emits(self.parent))

    @property
    def accepting(self) -> bool:
        return self.parent in self.parent_role.accepting and self.child in self.child_role.accepting


def link_exchange(parent: RoleAutomaton, child: RoleAutomaton, state: LinkState, request: str
                  ) -> list[tuple[str, LinkState]]:
    """All outcomes of one request/reply exchange: ``[(reply, next_state), ...]``.

    Raises ``Stuck`` when the parent may not send ``request``, the child
    does not accept it, or the child has no reply.
    """
    p_next = [t.dst for t in parent.emits(state.parent) if t.msg == request]
    if not p_next:
        raise Stuck(f"{parent.name} cannot send {request} in {state.parent}")
    c_state = child.on(state.child, request)
    if c_state is None:
        raise Stuck(f"{child.name} does not accept {request} in {state.child}")
    outcomes = []
    frontier = [c_state]
    seen = set()
    while frontier:
        cs = frontier.pop()
        if cs in seen:
            continue
        seen.add(cs)
        for t in child.internal(cs):
            frontier.append(t.dst)
        for t in child.emits(cs):
            p_dst = parent.on(p_next[0], t.msg)
            if p_dst is None:
                raise Stuck(f"{parent.name} does not accept {t.msg} in {p_next[0]}")
            outcomes.append((t.msg, LinkState(p_dst, t.dst)))
    if not outcomes:
        raise Stuck(f"{child.name} never replies to {request}")
    return outcomes


# ---------------------------------------------------------------------------
# Internal composition: a coordinator tree driving several child links


@dataclass
class _Chooser:
    prefix: list[int]
    made: list[tuple[int, int]] = field(default_factory=list)

    def choose(self, n: int) -> int:
        i = len(self.made)
        pick = self.prefix[i] if i < len(self.prefix) else 0
        self.made.append((pick, n))
        return pick


def check_internal_composition(node_roles: list[RoleAutomaton], coordinator, *, parent_role=None,
                               max_states: int = 100_000) -> ConsistencyReport:
    """Bounded model check of a coordinator tree driving one link per child role.

    ``coordinator`` is a tree whose ``RoleProxy`` leaves stand for the links
    (one per entry of ``node_roles``, matched by ``RoleProxy.link``). Every
    other leaf is free: a condition may succeed or fail, any other leaf may
    also keep running. Every pairwise protocol must be consistent on its own.
    The check then explores
    coordinator ticks and reports stuck links (deadlock), links left outside
    acceptance when the root finishes an activation, global states from which
    acceptance of all links is unreachable, and states from which the root can
    no longer succeed.
    """
    seen_ids = set()
    for role in node_roles:
        if id(role) in seen_ids:
            raise RoleReuse(f"role {role.name} passed more than once")
        seen_ids.add(id(role))
    parent_role = parent_role or builtin_roles()[0]
    proxies = [n for n in coordinator.walk() if isinstance(n, RoleProxy)]
    indices = sorted(p.link for p in proxies)
    if indices != list(range(len(node_roles))):
        raise RoleReuse("coordinator must reference each child role exactly once")

    report = ConsistencyReport(0, 0, bounded=True)
    for role in node_roles:
        pair = check_protocol(parent_role, role)
        for f in pair.findings:
            f.detail = f"pairwise protocol with {role.name}: {f.detail}".rstrip(": ")
            report.other.append(f)
    if report.other:
        return report

    # free leaves have no effects of their own, so halting them does nothing
    free = [n for n in coordinator.walk() if not n.children and not isinstance(n, RoleProxy)]

    def initial_state():
        coordinator.restore(tuple((None, 0) for _ in coordinator.walk()))
        return (coordinator.state(), tuple(LinkState(parent_role.initial, r.initial) for r in node_roles))

    def accepting(g):
        return all(ls.accepting(parent_role, r) for ls, r in zip(g[1], node_roles))

    def run_tick(g, chooser):
        tree_state, links = g
        coordinator.restore(tree_state)
        links = list(links)
        ctx = TickContext(world=None)
        for p in proxies:
            p.bind(parent_role, node_roles[p.link], links, chooser)
        for n in free:
            options = (SUCCESS, FAILURE) if isinstance(n, ConditionNode) else (SUCCESS, FAILURE, RUNNING)
            n._tick = lambda _ctx, _c=chooser, _o=options: _o[_c.choose(len(_o))]
            n._halt = lambda _ctx: None
        try:
            status = coordinator.tick(ctx)
        finally:
            for n in free:
                n.__dict__.pop("_tick", None)
                n.__dict__.pop("_halt", None)
        return status, (coordinator.state(), tuple(links))

    init = initial_state()
    edges: dict = {}
    pred = {init: None}
    queue = deque([init])
    completions: dict = {}
    stuck_seen = set()
    try:
        while queue:
            g = queue.popleft()
            out = []
            stack = [[]]
            while stack:
                prefix = stack.pop()
                chooser = _Chooser(prefix)
                try:
                    status, nxt = run_tick(g, chooser)
                except Stuck as exc:
                    key = (g, str(exc))
                    if key not in stuck_seen:
                        stuck_seen.add(key)
                        report.deadlocks.append(Finding("deadlock", g, _path(pred, g), detail=str(exc)))
                    status = nxt = None
                for j in range(len(prefix), len(chooser.made)):
                    pick, n = chooser.made[j]
                    base = [c for c, _ in chooser.made[:j]]
                    for alt in range(pick + 1, n):
                        stack.append(base + [alt])
                if nxt is None:
                    continue
                label = f"tick choices={[c for c, _ in chooser.made]} -> {status.letter}"
                out.append((label, nxt))
                if status is not RUNNING:
                    completions.setdefault(nxt, (g, label, status))
                if nxt not in pred:
                    pred[nxt] = (g, label)
                    queue.append(nxt)
                    if len(pred) > max_states:
                        raise StateSpaceTooLarge(f"more than {max_states} global states")
            edges[g] = out
    finally:
        for p in proxies:
            p.unbind()
        coordinator.restore(tuple((None, 0) for _ in coordinator.walk()))

    report.states = len(edges)
    report.transitions = sum(len(v) for v in edges.values())
    for g, (src, label, status) in completions.items():
        if not accepting(g):
            open_links = [node_roles[i].name for i, (ls, r) in enumerate(zip(g[1], node_roles))
                          if not ls.accepting(parent_role, r)]
            report.other.append(Finding("acceptance", g, _path(pred, g),
                                        detail=f"root finished with {status.letter} while links "
                                               f"{open_links} are outside acceptance"))
    _, livelocks = analyse_graph(init, edges, accepting)
    report.livelocks.extend(livelocks)
    success_states = {nxt for out in edges.values() for label, nxt in out if label.endswith("-> S")}
    can_succeed = _coreachable(edges, lambda s: s in success_states)
    blocked = [g for g in edges if g not in can_succeed]
    if blocked:
        g = min(blocked, key=lambda s: len(_path(pred, s)))
        report.other.append(Finding("not-fts", g, _path(pred, g),
                                    detail="root Success unreachable from this coordinator state"))
    return report


_REPLY_STATUS = {STATUS_R: RUNNING, STATUS_S: SUCCESS, STATUS_F: FAILURE}


class RoleProxy(Node):
    """Coordinator leaf standing for one child link during internal-composition checks.

    ``forward_halt=False`` models a coordinator that forgets to halt this
    child when it is preempted.
    """

    kind = "role_proxy"
    max_children = 0

    def __init__(self, id: str, link: int, forward_halt: bool = True):
        super().__init__(id)
        self.link = link
        self.forward_halt = forward_halt
        self._bound = None

    def bind(self, parent, child, links, chooser):
        self._bound = (parent, child, links, chooser)

    def unbind(self):
        self._bound = None

    def _exchange(self, request):
        parent, child, links, chooser = self._bound
        outcomes = link_exchange(parent, child, links[self.link], request)
        reply, nxt = outcomes[chooser.choose(len(outcomes)) if len(outcomes) > 1 else 0]
        links[self.link] = nxt
        return reply

    def _tick(self, ctx):
        return _REPLY_STATUS[self._exchange(TICK)]

    def _halt(self, ctx):
        if self.forward_halt and self._bound is not None:
            self._exchange(HALT)

    def _attrs(self):
        return (self.link, self.forward_halt)
