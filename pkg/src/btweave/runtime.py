"""Distributed execution of behavior trees across node hosts.

A deployment is a set of hosts, each with its own world and trees. A
``RemoteProxy`` leaf in one host's tree stands for a tree on another host; the
two sides talk over a control link with the tick-synchronisation protocol.
Typed data ports connect leaves of different hosts and carry values only.

Two drivers exist. ``lockstep`` delivers every message before the next global
tick and reproduces local execution exactly. ``async`` delays messages: a
proxy answers with the last status it heard and gives up after a timeout. The
async driver runs on a simulated network by default or on TCP sockets.
"""

from __future__ import annotations

import os
import queue
import random
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .bt import (
    FAILURE, RUNNING, ActionNode, ActionRegistry, ConditionNode, Fallback, LookupDecorator, Node, Sequence,
    SequenceMem, Status, TickContext, TickTrace,
)
from .btsync import (
    HALT, STATUS_MESSAGES, TICK, ConsistencyReport, ProtocolMonitor, RoleProxy, builtin_roles,
    check_internal_composition,
)
from .errors import (
    BtweaveError, ControlCycleError, TransportFailure, TypeMismatch, UnlinkedPort,
)
from .wire import Message, wire_decode, wire_encode
from .worldmodel import VarSpec, WorldState

DEFAULT_TIMEOUT = 10
LISTEN_ENV = "BTWEAVE_LISTEN"
_UNSET = object()


class RemoteProxy(Node):
    """Leaf that ticks ``tree`` on host ``host`` over a control link."""

    kind = "remote"
    max_children = 0

    def __init__(self, id: str, host: str, tree: str):
        super().__init__(id)
        self.host = host
        self.tree = tree
        self.driver = None

    @property
    def target(self) -> str:
        return f"{self.host}.{self.tree}"

    def _tick(self, ctx):
        if self.driver is None:
            raise BtweaveError(f"remote node {self.id!r} is not part of a running deployment")
        return self.driver.tick_remote(self, ctx)

    def _halt(self, ctx):
        if self.driver is not None:
            self.driver.halt_remote(self, ctx)

    def _attrs(self):
        return (self.host, self.tree)


@dataclass
class DataPort:
    name: str
    type: str
    direction: str  # "in" or "out"
    node: str
    var: str
    cache: Any = _UNSET

    def __post_init__(self):
        if self.direction not in ("in", "out"):
            raise ValueError("port direction must be 'in' or 'out'")
        VarSpec(self.type)

    def read(self):
        if self.cache is _UNSET:
            raise LookupError(f"port {self.name!r} has not received a value")
        return self.cache


@dataclass
class NodeHost:
    id: str
    trees: dict[str, Node]
    world: WorldState = field(default_factory=WorldState)
    actions: ActionRegistry = field(default_factory=ActionRegistry)
    ports: dict[str, DataPort] = field(default_factory=dict)
    resolver: Callable | None = None

    def proxies(self) -> list[tuple[str, RemoteProxy]]:
        return [(name, n) for name, tree in self.trees.items() for n in tree.walk()
                if isinstance(n, RemoteProxy)]

    def find_node(self, node_id: str) -> Node | None:
        for tree in self.trees.values():
            for n in tree.walk():
                if n.id == node_id:
                    return n
        return None


@dataclass(frozen=True)
class DataLink:
    src: str  # "host.port", an out-port
    dst: str  # "host.port", an in-port


@dataclass
class ControlLink:
    parent: str
    proxy: RemoteProxy
    child: str
    tree: str

    @property
    def name(self) -> str:
        return f"{self.parent}:{self.proxy.id}->{self.child}.{self.tree}"


@dataclass
class Deployment:
    name: str
    hosts: dict[str, NodeHost]
    root: str  # "host.tree"
    data_links: list[DataLink] = field(default_factory=list)
    timeouts: dict[str, int] = field(default_factory=dict)  # keyed by child host

    @property
    def root_host(self) -> str:
        return self.root.split(".", 1)[0]

    @property
    def root_tree(self) -> str:
        return self.root.split(".", 1)[1]

    def control_links(self) -> list[ControlLink]:
        return [ControlLink(h.id, proxy, proxy.host, proxy.tree)
                for h in self.hosts.values() for _, proxy in h.proxies()]

    def port(self, ref: str) -> DataPort:
        host, _, name = ref.partition(".")
        try:
            return self.hosts[host].ports[name]
        except KeyError:
            raise UnlinkedPort(f"no port {ref!r}") from None

    def peers(self, ref: str) -> list[str]:
        return [l.dst for l in self.data_links if l.src == ref]


# ---------------------------------------------------------------------------
# Topology validation


@dataclass
class Violation:
    kind: str
    message: str
    where: tuple = ()

    def __str__(self):
        return f"{self.kind}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def format(self) -> str:
        if self.ok:
            return "topology ok\n"
        return "".join(f"{v}\n" for v in self.violations)


def _find_cycle(graph: dict[str, list[str]]) -> list[str] | None:
    colour = {v: 0 for v in graph}
    for start in graph:
        if colour[start]:
            continue
        path = [start]
        stack = [iter(graph[start])]
        colour[start] = 1
        while stack:
            for w in stack[-1]:
                if colour.get(w, 0) == 1:
                    return path[path.index(w):] + [w]
                if colour.get(w, 0) == 0 and w in graph:
                    colour[w] = 1
                    path.append(w)
                    stack.append(iter(graph[w]))
                    break
            else:
                colour[path.pop()] = 2
                stack.pop()
    return None


def validate_topology(d: Deployment) -> ValidationReport:
    """Check that control links form a rooted tree and data links join typed leaves."""
    report = ValidationReport()
    add = report.violations.append
    if d.root_host not in d.hosts or d.root_tree not in d.hosts[d.root_host].trees:
        add(Violation("root", f"root tree {d.root!r} does not exist"))

    graph: dict[str, list[str]] = {h: [] for h in d.hosts}
    parents: dict[str, list[str]] = {h: [] for h in d.hosts}
    for link in d.control_links():
        child = d.hosts.get(link.child)
        if child is None or link.tree not in child.trees:
            add(Violation("unknown-target", f"{link.parent}:{link.proxy.id} refers to missing tree "
                                            f"{link.proxy.target!r}", (link.parent, link.proxy.id)))
            continue
        graph[link.parent].append(link.child)
        parents[link.child].append(f"{link.parent}:{link.proxy.id}")

    cycle = _find_cycle(graph)
    if cycle:
        add(Violation("cycle", "control links form a cycle: " + " -> ".join(cycle), tuple(cycle)))
    for host, ps in parents.items():
        if len(ps) > 1:
            add(Violation("multiple-parents", f"host {host!r} has {len(ps)} parent endpoints: {', '.join(ps)}",
                          (host,)))
    roots = [h for h, ps in parents.items() if not ps]
    if d.root_host in d.hosts and parents[d.root_host]:
        add(Violation("root", f"root host {d.root_host!r} has a parent"))
    extra = [h for h in roots if h != d.root_host]
    if extra:
        add(Violation("root", f"hosts without a parent besides the root: {sorted(extra)}", tuple(extra)))
    if d.root_host in d.hosts:
        seen = {d.root_host}
        todo = [d.root_host]
        while todo:
            for w in graph[todo.pop()]:
                if w not in seen:
                    seen.add(w)
                    todo.append(w)
        unreachable = sorted(set(d.hosts) - seen)
        if unreachable:
            add(Violation("unreachable", f"hosts not reachable from the root: {unreachable}",
                          tuple(unreachable)))

    linked: dict[str, int] = {}
    for link in d.data_links:
        ends = []
        for ref, want in ((link.src, "out"), (link.dst, "in")):
            host, _, name = ref.partition(".")
            port = d.hosts[host].ports.get(name) if host in d.hosts else None
            if port is None:
                add(Violation("unknown-port", f"data link endpoint {ref!r} does not exist", (ref,)))
                continue
            if port.direction != want:
                add(Violation("direction", f"{ref!r} is an {port.direction}-port, expected {want}", (ref,)))
            node = d.hosts[host].find_node(port.node)
            if node is None:
                add(Violation("unknown-node", f"port {ref!r} is attached to missing node {port.node!r}", (ref,)))
            elif node.children:
                add(Violation("inner-node", f"port {ref!r} is attached to inner {node.kind} node "
                                            f"{port.node!r}; data links join leaves only", (ref, port.node)))
            linked[ref] = linked.get(ref, 0) + 1
            ends.append((host, port))
        if len(ends) == 2:
            (h1, p1), (h2, p2) = ends
            if h1 == h2:
                add(Violation("same-host", f"data link {link.src} -> {link.dst} stays on one host"))
            if p1.type != p2.type:
                add(Violation("type", f"data link {link.src} ({p1.type}) -> {link.dst} ({p2.type})"))
    for ref, n in linked.items():
        if n > 1:
            add(Violation("multiple-links", f"port {ref!r} takes part in {n} data links", (ref,)))
    return report


def transfer_data(d: Deployment, port_out: str, value) -> list[str]:
    """Push ``value`` from out-port ``port_out`` to its peers' caches and worlds.

    Returns the receiving port references. Control status is never touched.
    """
    port = d.port(port_out)
    spec = VarSpec(port.type)
    if not spec.accepts(value):
        raise TypeMismatch(port_out, port.type, type(value).__name__)
    value = spec.coerce(port_out, value)
    peers = d.peers(port_out)
    if not peers:
        raise UnlinkedPort(port_out)
    port.cache = value
    for ref in peers:
        _deliver_data(d, ref, value)
    return peers


def _deliver_data(d: Deployment, ref: str, value) -> None:
    peer = d.port(ref)
    peer.cache = value
    host = d.hosts[ref.partition(".")[0]]
    if peer.var in host.world:
        host.world[peer.var] = value
    else:
        host.world.declare(peer.var, peer.type, value)


def coordinator_of(tree: Node) -> tuple[Node, int]:
    """Abstract a host tree for ``check_internal_composition``.

    Remote proxies become role proxies and a lookup with a bound child becomes
    a one-child sequence. A subtree without remote proxies collapses into one
    free leaf: a condition stays a condition, anything else may return any
    status. Returns the copy and the number of links.
    """
    counter = [0]

    def copy(n: Node) -> Node:
        if not any(isinstance(m, RemoteProxy) for m in n.walk()):
            if isinstance(n, ConditionNode):
                return ConditionNode(n.id, n.condition)
            return ActionNode(n.id, "free")
        if isinstance(n, RemoteProxy):
            counter[0] += 1
            return RoleProxy(n.id, counter[0] - 1)
        if isinstance(n, LookupDecorator):
            return Sequence(n.id, [copy(n.children[0])])
        if isinstance(n, (Sequence, Fallback, SequenceMem)):
            return type(n)(n.id, [copy(c) for c in n.children])
        raise TypeError(f"cannot abstract {n!r}")

    return copy(tree), counter[0]


def check_host_composition(d: Deployment) -> dict[str, ConsistencyReport]:
    """Internal-composition report for every host tree that drives remote trees."""
    reports = {}
    for host in d.hosts.values():
        for name, tree in host.trees.items():
            coord, links = coordinator_of(tree)
            if not links:
                continue
            roles = [builtin_roles()[1] for _ in range(links)]
            reports[f"{host.id}.{name}"] = check_internal_composition(roles, coord)
    return reports


# ---------------------------------------------------------------------------
# Running a deployment


@dataclass
class RunResult:
    status: Status
    statuses: list[Status]
    trace: TickTrace
    failures: list[TransportFailure] = field(default_factory=list)
    messages: int = 0

    @property
    def ticks(self) -> int:
        return len(self.statuses)


Hook = Callable[[int, Deployment], None]


class _Driver:
    def __init__(self, d: Deployment, trace: TickTrace | None, hooks: Iterable[Hook]):
        self.d = d
        self.trace = trace if trace is not None else TickTrace()
        self.hooks = list(hooks)
        self.links = {id(l.proxy): l for l in d.control_links()}
        self.monitors = {id(l.proxy): ProtocolMonitor() for l in self.links.values()}
        self.seq = 0
        self.k = 0
        self.t = 0.0
        self.messages = 0
        self.failures: list[TransportFailure] = []
        self.last_out: dict[str, Any] = {}
        for host in d.hosts.values():
            for name, port in host.ports.items():
                if port.direction == "out" and port.var in host.world:
                    self.last_out[f"{host.id}.{name}"] = host.world[port.var]

    def bind(self):
        for link in self.links.values():
            link.proxy.driver = self

    def unbind(self):
        for link in self.links.values():
            link.proxy.driver = None

    def wire(self, kind: str, node: str, status: str | None = None) -> Message:
        """Round-trip a control message through the wire codec, as a transport would."""
        self.seq += 1
        self.messages += 1
        return wire_decode(wire_encode(Message(self.seq, kind, node, status=status)))

    def ctx(self, host: NodeHost) -> TickContext:
        return TickContext(host.world, host.actions, self.trace, host.resolver, host.id, self.k, self.t)

    def publish(self, host: NodeHost) -> None:
        for name, port in host.ports.items():
            if port.direction != "out" or port.var not in host.world:
                continue
            ref = f"{host.id}.{name}"
            value = host.world[port.var]
            if self.last_out.get(ref, _UNSET) != value and self.d.peers(ref):
                self.last_out[ref] = value
                self.send_data(ref, value)

    def send_data(self, ref: str, value) -> None:
        transfer_data(self.d, ref, value)

    def run(self, max_ticks: int) -> RunResult:
        root = self.d.hosts[self.d.root_host]
        tree = root.trees[self.d.root_tree]
        statuses = []
        self.bind()
        try:
            for k in range(max_ticks):
                self.k = k
                self.t = root.world.clock
                for hook in self.hooks:
                    hook(k, self.d)
                self.before_tick()
                status = self.tick_host(root, tree)
                statuses.append(status)
                if status is not RUNNING:
                    break
        finally:
            self.shutdown()
            self.unbind()
        return RunResult(statuses[-1] if statuses else RUNNING, statuses, self.trace,
                         self.failures, self.messages)

    def before_tick(self):
        pass

    def shutdown(self):
        pass

    def tick_host(self, host: NodeHost, tree: Node) -> Status:
        ctx = self.ctx(host)
        status = tree.tick(ctx)
        host.world.advance()
        self.publish(host)
        return status


class LockstepDriver(_Driver):
    """Every TICK is answered before the parent's tick continues."""

    def __init__(self, d, trace=None, hooks=()):
        super().__init__(d, trace, hooks)
        self.active: list[str] = []

    def tick_host(self, host, tree):
        if host.id in self.active:
            raise ControlCycleError(f"host {host.id!r} ticked while its own tick is outstanding: "
                                    + " -> ".join(self.active + [host.id]))
        self.active.append(host.id)
        try:
            return super().tick_host(host, tree)
        finally:
            self.active.pop()

    def tick_remote(self, proxy, ctx):
        link = self.links[id(proxy)]
        mon = self.monitors[id(proxy)]
        msg = self.wire("TICK", proxy.target)
        mon.parent_sent(TICK)
        mon.child_received(msg.kind)
        child = self.d.hosts[link.child]
        status = self.tick_host(child, child.trees[link.tree])
        reply = self.wire("STATUS", proxy.target, status.letter)
        mon.child_sent(STATUS_MESSAGES[reply.status])
        mon.parent_received(STATUS_MESSAGES[reply.status])
        return Status.from_letter(reply.status)

    def halt_remote(self, proxy, ctx):
        link = self.links[id(proxy)]
        mon = self.monitors[id(proxy)]
        msg = self.wire("HALT", proxy.target)
        mon.parent_sent(HALT)
        mon.child_received(msg.kind)
        child = self.d.hosts[link.child]
        child.trees[link.tree].halt(self.ctx(child))
        reply = self.wire("STATUS", proxy.target, "F")
        mon.child_sent(STATUS_MESSAGES[reply.status])
        mon.parent_received(STATUS_MESSAGES[reply.status])


# -- asynchronous execution ---------------------------------------------------


@dataclass
class _ProxyState:
    outstanding: bool = False  # a TICK is waiting for its STATUS
    awaiting_ack: bool = False  # a HALT is waiting for its STATUS_F
    halt_pending: bool = False  # halt requested while a TICK was outstanding
    fresh: str | None = None  # a reply not yet seen by the proxy
    last: str | None = None  # last status reported to the parent tree
    sent_at: int = 0
    failed: bool = False


class _SimChannel:
    def __init__(self, delay: int, jitter: int = 0, rng: random.Random | None = None):
        self.delay = delay
        self.jitter = jitter
        self.rng = rng or random.Random(0)
        self.items: deque = deque()

    def latency(self) -> int:
        return self.delay + (self.rng.randint(0, self.jitter) if self.jitter else 0)

    def send(self, data: bytes, now: int) -> None:
        # at most one message is in flight per direction, so order is kept
        self.items.append((now + self.latency(), data))

    def ready(self, now: int) -> list[bytes]:
        out = []
        while self.items and self.items[0][0] <= now:
            out.append(self.items.popleft()[1])
        return out

    def clear(self):
        self.items.clear()


class AsyncDriver(_Driver):
    """Delayed delivery on a simulated network; proxies never wait.

    A message sent during global tick k arrives at the start of tick
    ``k + delay + U(0, jitter)``; ``seed`` fixes the jitter. A proxy reports
    the last status it heard (Running before the first reply) and keeps its
    child ticking in the background. ``crashed`` hosts drop every message.
    """

    def __init__(self, d, trace=None, hooks=(), *, delay: int = 1, jitter: int = 0, seed: int = 0,
                 crashed: Iterable[str] = ()):
        super().__init__(d, trace, hooks)
        if delay < 1 or jitter < 0:
            raise ValueError("async delay must be at least one tick and jitter non-negative")
        self.delay = delay
        self.crashed = set(crashed)
        rng = random.Random(seed)
        self.state = {key: _ProxyState() for key in self.links}
        self.down = {key: _SimChannel(delay, jitter, rng) for key in self.links}
        self.up = {key: _SimChannel(delay, jitter, rng) for key in self.links}
        self.net = _SimChannel(delay, jitter, rng)
        self.data: list = []
        self.order = self._top_down()

    def _top_down(self) -> list[int]:
        depth = {self.d.root_host: 0}
        todo = [self.d.root_host]
        while todo:
            h = todo.pop(0)
            for key, l in self.links.items():
                if l.parent == h and l.child not in depth:
                    depth[l.child] = depth[h] + 1
                    todo.append(l.child)
        return sorted(self.links, key=lambda key: depth.get(self.links[key].parent, 1 << 20))

    def timeout(self, link: ControlLink) -> int:
        return self.d.timeouts.get(link.child, DEFAULT_TIMEOUT)

    # channel plumbing
    def send_down(self, key, kind):
        data = wire_encode(self._message(kind, self.links[key].proxy.target))
        self.monitors[key].parent_sent(kind)
        self.down[key].send(data, self.k)

    def send_up(self, key, letter):
        data = wire_encode(self._message("STATUS", self.links[key].proxy.target, letter))
        self.monitors[key].child_sent(STATUS_MESSAGES[letter])
        self.up[key].send(data, self.k)

    def _message(self, kind, node, status=None):
        self.seq += 1
        self.messages += 1
        return Message(self.seq, kind, node, status=status)

    def send_data(self, ref, value):
        host = ref.partition(".")[0]
        if host in self.crashed:
            return
        port = self.d.port(ref)
        if not VarSpec(port.type).accepts(value):
            raise TypeMismatch(ref, port.type, type(value).__name__)
        port.cache = value
        for peer in self.d.peers(ref):
            self.data.append((self.k + self.net.latency(), len(self.data), peer, value))

    def before_tick(self):
        self.data.sort()
        due = [item for item in self.data if item[0] <= self.k]
        self.data = [item for item in self.data if item[0] > self.k]
        for _, _, ref, value in due:
            if ref.partition(".")[0] not in self.crashed:
                _deliver_data(self.d, ref, value)
        for key in self.order:
            self.service_child(key)
            self.service_parent(key)

    def service_child(self, key):
        link = self.links[key]
        msgs = self.down[key].ready(self.k)
        if link.child in self.crashed:
            return
        child = self.d.hosts[link.child]
        tree = child.trees[link.tree]
        for data in msgs:
            msg = wire_decode(data)
            self.monitors[key].child_received(msg.kind)
            if msg.kind == "TICK":
                status = self.tick_host(child, tree)
                self.send_up(key, status.letter)
            elif msg.kind == "HALT":
                tree.halt(self.ctx(child))
                self.send_up(key, "F")

    def service_parent(self, key):
        st = self.state[key]
        for data in self.up[key].ready(self.k):
            if st.failed:
                continue
            letter = wire_decode(data).status
            self.monitors[key].parent_received(STATUS_MESSAGES[letter])
            if st.awaiting_ack:
                st.awaiting_ack = False
            elif st.halt_pending:
                st.outstanding = st.halt_pending = False
                if letter == "R":
                    self.send_down(key, HALT)
                    st.awaiting_ack = True
                    st.sent_at = self.k
            else:
                st.outstanding = False
                st.fresh = letter

    def tick_remote(self, proxy, ctx):
        key = id(proxy)
        st = self.state[key]
        if st.failed:
            return FAILURE
        if st.fresh is not None:
            st.last, st.fresh = st.fresh, None
        if not (st.outstanding or st.awaiting_ack):
            self.send_down(key, TICK)
            st.outstanding = True
            st.sent_at = self.k
        elif self.k - st.sent_at >= self.timeout(self.links[key]):
            st.failed = True
            st.outstanding = st.awaiting_ack = st.halt_pending = False
            self._drop(key)
            self.failures.append(TransportFailure(self.links[key].name))
            return FAILURE
        return Status.from_letter(st.last) if st.last else RUNNING

    def _drop(self, key):
        self.down[key].clear()
        self.up[key].clear()

    def halt_remote(self, proxy, ctx):
        key = id(proxy)
        st = self.state[key]
        if st.failed:
            return
        running = st.fresh == "R" if st.fresh is not None else st.last == "R"
        st.last = st.fresh = None
        if st.awaiting_ack:
            return
        if st.outstanding:
            st.halt_pending = True
        elif running:
            # the child's last word was Running, so the parent role may halt it
            self.send_down(key, HALT)
            st.awaiting_ack = True
            st.sent_at = self.k


# -- socket transport -----------------------------------------------------------


def listen_address(index: int = 0, env: dict | None = None) -> tuple[str, int]:
    """Address for the ``index``-th child host server, from ``BTWEAVE_LISTEN``.

    ``BTWEAVE_LISTEN=host:port`` assigns ``port + index``; port 0 means an
    ephemeral port for every server. The default is ``127.0.0.1:0``.
    """
    value = (env if env is not None else os.environ).get(LISTEN_ENV, "127.0.0.1:0")
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"{LISTEN_ENV} must look like host:port, got {value!r}")
    base = int(port)
    return host, (base + index if base else 0)


class _LineSocket:
    """Newline-framed messages over a connected stream socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.inbox: queue.Queue = queue.Queue()
        self.lock = threading.Lock()
        self.reader = threading.Thread(target=self._read, daemon=True)
        self.reader.start()

    def _read(self):
        buf = b""
        try:
            while True:
                chunk = self.sock.recv(4096)
                if not chunk:
                    break
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    self.inbox.put(wire_decode(line + b"\n"))
        except OSError:
            pass

    def send(self, msg: Message) -> None:
        with self.lock:
            try:
                self.sock.sendall(wire_encode(msg))
            except OSError:
                pass

    def drain(self) -> list[Message]:
        out = []
        while True:
            try:
                out.append(self.inbox.get_nowait())
            except queue.Empty:
                return out

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class SocketDriver(AsyncDriver):
    """Async execution where each child host runs in its own thread behind a TCP server.

    The root host ticks every ``period`` seconds. Child hosts tick only when a
    TICK arrives. Trace records of a child host carry that host's own tick
    count, since hosts share no clock.
    """

    def __init__(self, d, trace=None, hooks=(), *, period: float = 0.005, crashed=(), env=None):
        _Driver.__init__(self, d, trace, hooks)
        self.delay = 1
        self.crashed = set(crashed)
        self.period = period
        self.state = {key: _ProxyState() for key in self.links}
        self.order = self._top_down()
        self.stop = threading.Event()
        self.lock = threading.RLock()
        self.parent_end: dict[int, _LineSocket] = {}
        self.servers: list[socket.socket] = []
        self.threads: list[threading.Thread] = []
        self.host_k = {h: 0 for h in d.hosts}
        self.env = env

    def before_tick(self):
        if not self.parent_end:
            self._start()
        with self.lock:
            for key, l in self.links.items():
                if l.parent == self.d.root_host:
                    self.service_parent(key)
        time.sleep(self.period)

    def _start(self):
        for i, (key, link) in enumerate(self.links.items()):
            server = socket.create_server(listen_address(i, self.env))
            self.servers.append(server)
            thread = threading.Thread(target=self._serve, args=(key, server), daemon=True)
            thread.start()
            self.threads.append(thread)
            conn = socket.create_connection(server.getsockname()[:2])
            self.parent_end[key] = _LineSocket(conn)

    def _serve(self, key, server):
        server.settimeout(0.5)
        try:
            conn, _ = server.accept()
        except OSError:
            return
        end = _LineSocket(conn)
        link = self.links[key]
        child = self.d.hosts[link.child]
        tree = child.trees[link.tree]
        while not self.stop.is_set():
            try:
                msg = end.inbox.get(timeout=0.01)
            except queue.Empty:
                with self.lock:
                    self._service_children_of(child.id)
                continue
            if link.child in self.crashed:
                continue
            with self.lock:
                self.monitors[key].child_received(msg.kind)
                self._service_children_of(child.id)
                if msg.kind == "TICK":
                    status = self._tick_child(child, tree)
                    letter = status.letter
                else:
                    tree.halt(TickContext(child.world, child.actions, self.trace, child.resolver, child.id,
                                          self.host_k[child.id], child.world.clock))
                    letter = "F"
                self.monitors[key].child_sent(STATUS_MESSAGES[letter])
            end.send(self._message("STATUS", link.proxy.target, letter))
        end.close()

    def _tick_child(self, host, tree):
        ctx = TickContext(host.world, host.actions, self.trace, host.resolver, host.id,
                          self.host_k[host.id], host.world.clock)
        self.host_k[host.id] += 1
        status = tree.tick(ctx)
        host.world.advance()
        self.publish(host)
        return status

    def _service_children_of(self, host_id):
        for key, l in self.links.items():
            if l.parent == host_id:
                self.service_parent(key)

    def send_down(self, key, kind):
        self.monitors[key].parent_sent(kind)
        self.parent_end[key].send(self._message(kind, self.links[key].proxy.target))

    def service_parent(self, key):
        st = self.state[key]
        end = self.parent_end.get(key)
        if end is None:
            return
        for msg in end.drain():
            if st.failed:
                continue
            self.monitors[key].parent_received(STATUS_MESSAGES[msg.status])
            if st.awaiting_ack:
                st.awaiting_ack = False
            elif st.halt_pending:
                st.outstanding = st.halt_pending = False
                if msg.status == "R":
                    self.send_down(key, HALT)
                    st.awaiting_ack = True
                    st.sent_at = self._k_of(key)
            else:
                st.outstanding = False
                st.fresh = msg.status

    def _k_of(self, key):
        parent = self.links[key].parent
        return self.k if parent == self.d.root_host else self.host_k[parent]

    def tick_remote(self, proxy, ctx):
        with self.lock:
            saved = self.k
            self.k = self._k_of(id(proxy))
            try:
                return super().tick_remote(proxy, ctx)
            finally:
                self.k = saved

    def _drop(self, key):
        end = self.parent_end.get(key)
        if end is not None:
            end.drain()

    def halt_remote(self, proxy, ctx):
        with self.lock:
            super().halt_remote(proxy, ctx)

    def send_data(self, ref, value):
        with self.lock:
            transfer_data(self.d, ref, value)

    def tick_host(self, host, tree):
        with self.lock:
            return super().tick_host(host, tree)

    def shutdown(self):
        self.stop.set()
        for end in self.parent_end.values():
            end.close()
        for server in self.servers:
            server.close()
        for thread in self.threads:
            thread.join(timeout=1.0)


def run_deployment(d: Deployment, mode: str = "lockstep", max_ticks: int = 100, *,
                   trace: TickTrace | None = None, hooks: Iterable[Hook] = (), delay: int = 1,
                   jitter: int = 0, seed: int = 0, crashed: Iterable[str] = (), transport: str = "sim",
                   validate: bool = True, period: float = 0.005) -> RunResult:
    """Execute ``d`` from its root tree until the root finishes or ``max_ticks`` pass.

    ``hooks`` run before every global tick with ``(k, deployment)`` and are the
    place for plant dynamics and fault injection.
    """
    if validate:
        report = validate_topology(d)
        if not report.ok:
            raise BtweaveError("invalid topology:\n" + report.format())
    if mode == "lockstep":
        driver: _Driver = LockstepDriver(d, trace, hooks)
    elif mode == "async" and transport == "sim":
        driver = AsyncDriver(d, trace, hooks, delay=delay, jitter=jitter, seed=seed, crashed=crashed)
    elif mode == "async" and transport == "socket":
        driver = SocketDriver(d, trace, hooks, period=period, crashed=crashed)
    else:
        raise ValueError(f"unknown mode/transport {mode!r}/{transport!r}")
    return driver.run(max_ticks)


def monitors_accepting(driver: _Driver) -> bool:
    return all(m.accepting for m in driver.monitors.values())
