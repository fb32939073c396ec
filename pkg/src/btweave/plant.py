"""Simulated axis plant and the four-device demo built on it.

The BASE device holds the safety condition and a task sequence that moves the
AXIS and then the ROBOT. The axis skill's precondition (a target position) is
looked up from an operator prompt on the HMI device. Its invariant (no error,
power on) is backchained into power-on and reset skills, so an axis error is
recovered automatically. The robot is modelled as a second one-dimensional axis.
"""

from __future__ import annotations

import itertools
import queue
import sys
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .backchain import backchain, refine_precondition
from .bt import FAILURE, RUNNING, SUCCESS, ActionImpl, ActionRegistry, ConditionNode, Node, Sequence
from .runtime import DataLink, DataPort, Deployment, NodeHost, RemoteProxy
from .skills import Param, Skill, SkillInterface, SkillRegistry, expand_skill
from .worldmodel import VarRef, VarSpec, WorldState, parse_condition

POS_EPS = 1e-6
DEFAULT_SPEED = 10.0
RESET_TICKS = 2

AXIS_GOAL = "pos == target AND target_set == true"
ROBOT_PLACE = 50.0


@dataclass
class AxisPlant:
    """Parameters of one axis; its state lives in the host world.

    ``schedule`` lists ``(k, error)`` pairs applied before global tick ``k``
    (0-based, matching trace numbering).
    """

    speed: float = DEFAULT_SPEED
    schedule: list[tuple[int, bool]] = field(default_factory=list)

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError("speed must be positive")

    @staticmethod
    def declare(world: WorldState, pos: float = 0.0, target: float | None = None,
                power: bool = False, error: bool = False) -> WorldState:
        world.declare("pos", VarSpec("real", "mm"), pos)
        world.declare("target", VarSpec("real", "mm"), 0.0 if target is None else target)
        world.declare("target_set", "bool", target is not None)
        world.declare("power", "bool", power)
        world.declare("error", "bool", error)
        return world

    def step_towards(self, pos: float, target: float) -> float:
        delta = target - pos
        if abs(delta) <= self.speed:
            return target
        return pos + (self.speed if delta > 0 else -self.speed)

    def hook(self, host: str):
        """Runtime hook applying the error schedule to ``host``'s world."""
        events = {}
        for k, err in self.schedule:
            events[k] = err

        def apply(k, d):
            if k in events:
                d.hosts[host].world["error"] = events[k]

        return apply

    def local_hook(self):
        """Same schedule as a ``check_fts``-style ``plant(world, k)`` callback."""
        events = dict(self.schedule)

        def apply(world, k):
            if k in events:
                world["error"] = events[k]

        return apply


def move_absolute(plant: AxisPlant | None = None) -> ActionImpl:
    plant = plant or AxisPlant()

    def step(world, params):
        if not world["power"] or world["error"]:
            return FAILURE, None
        target = float(params["target"])
        pos = world["pos"]
        if abs(pos - target) <= POS_EPS:
            return SUCCESS, None
        new = plant.step_towards(pos, target)
        return (SUCCESS if abs(new - target) <= POS_EPS else RUNNING), {"pos": new}

    return ActionImpl("move_absolute", step)


def reset_axis(ticks: int = RESET_TICKS) -> ActionImpl:
    """Clears the error and drops power; takes ``ticks`` ticks."""
    progress: dict[int, int] = {}

    def step(world, params):
        n = progress.get(id(world), 0) + 1
        if n < ticks:
            progress[id(world)] = n
            return RUNNING, None
        progress.pop(id(world), None)
        return SUCCESS, {"error": False, "power": False}

    def on_halt(params):
        progress.clear()

    return ActionImpl("reset_axis", step, on_halt)


def power_on() -> ActionImpl:
    def step(world, params):
        if world["error"]:
            return FAILURE, None
        return SUCCESS, {"power": True}

    return ActionImpl("power_on", step)


class OperatorPrompt:
    """Asks for a target position, either from scripted answers or a terminal.

    Scripted answers are consumed in order. In terminal mode a reader thread
    collects the line so the tick never blocks; the action keeps returning
    Running until the answer is there.
    """

    def __init__(self, text: str = "target position [mm]? ", answers: Iterable | None = None,
                 stream=None, out=None):
        self.text = text
        self.scripted = answers is not None
        self.answers = deque(str(a).strip() for a in (answers or ()))
        self.stream = stream if stream is not None else sys.stdin
        self.out = out if out is not None else sys.stderr
        self.pending = False
        self.asked = 0
        self._inbox: queue.Queue = queue.Queue()

    def ask(self) -> None:
        self.pending = True
        self.asked += 1
        if self.scripted:
            if self.answers:
                self._inbox.put(self.answers.popleft())
            return
        self.out.write(self.text)
        self.out.flush()
        threading.Thread(target=lambda: self._inbox.put(self.stream.readline().strip()),
                         daemon=True).start()

    def poll(self) -> str | None:
        try:
            answer = self._inbox.get_nowait()
        except queue.Empty:
            return None
        self.pending = False
        return answer

    def cancel(self) -> None:
        if not self.pending:
            return
        self.pending = False
        try:
            answer = self._inbox.get_nowait()
        except queue.Empty:
            return
        if self.scripted:
            self.answers.appendleft(answer)


def get_axis_position(prompt: OperatorPrompt) -> ActionImpl:
    def step(world, params):
        if not prompt.pending:
            prompt.ask()
            return RUNNING, None
        answer = prompt.poll()
        if answer is None:
            return RUNNING, None
        try:
            value = float(answer)
        except ValueError:
            return FAILURE, None
        return SUCCESS, {"target": value, "target_set": True}

    return ActionImpl("get_axis_position", step, lambda params: prompt.cancel())


def demo_actions(prompt: OperatorPrompt | None = None, plant: AxisPlant | None = None) -> ActionRegistry:
    prompt = prompt or OperatorPrompt(answers=[])
    return ActionRegistry([move_absolute(plant), reset_axis(), power_on(), get_axis_position(prompt)])


# ---------------------------------------------------------------------------
# Skills


MOVE_IFACE = SkillInterface([Param("target", "real", "in")])


def axis_skills() -> list[tuple[Skill, SkillInterface]]:
    return [
        (Skill("move_axis_to_pos", pre="target_set == true", inv="error == false AND power == true",
               post=AXIS_GOAL, action="move_absolute", bindings={"target": VarRef("target")}), MOVE_IFACE),
        (Skill("power_on", pre="error == false", post="power == true AND error == false"), SkillInterface()),
        (Skill("reset_axis", post="error == false"), SkillInterface()),
    ]


def hmi_skill() -> tuple[Skill, SkillInterface]:
    return Skill("get_axis_position", post="target_set == true"), SkillInterface()


def robot_skill() -> tuple[Skill, SkillInterface]:
    return (Skill("move_robot", inv="error == false AND power == true", post=f"pos == {ROBOT_PLACE!r}",
                  action="move_absolute", bindings={"target": ROBOT_PLACE}), MOVE_IFACE)


def demo_registry() -> SkillRegistry:
    reg = SkillRegistry()
    for skill, iface in [*axis_skills(), hmi_skill(), robot_skill()]:
        reg.register(skill, iface)
    return reg


def axis_tree(reg: SkillRegistry | None = None, *, with_lookup: bool = True) -> Node:
    """Backchained axis tree; the target lookup is bound to the HMI device."""
    axis_reg = SkillRegistry()
    for skill, iface in axis_skills():
        axis_reg.register(skill, iface)
    plan = backchain([AXIS_GOAL], axis_reg, refine_invariants=True, prefix="axis")
    if with_lookup:
        hmi_reg = SkillRegistry()
        hmi_reg.register(*hmi_skill())
        move = plan.root.find("move_axis_to_pos")
        refine_precondition(move, hmi_reg, bind=lambda s: RemoteProxy("hmi.get_position", "hmi", "get_position"))
    return plan.root


def demo_skillset(answers: Iterable | None = None, *, target: float | None = None,
                  plant: AxisPlant | None = None, prompt: OperatorPrompt | None = None
                  ) -> tuple[SkillRegistry, Deployment]:
    """Registry and four-host deployment (BASE, AXIS, ROBOT, HMI) of the demo.

    ``target`` presets the axis target, so no operator input is needed.
    """
    reg = demo_registry()
    prompt = prompt or OperatorPrompt(answers=answers if answers is not None else [])
    actions = demo_actions(prompt, plant)

    base_root = Sequence("base", [
        ConditionNode("safety", "estop == false"),
        Sequence("task", [RemoteProxy("axis", "axis", "main"), RemoteProxy("robot", "robot", "main")]),
    ])
    base = NodeHost("base", {"main": base_root}, WorldState.from_dict({"estop": False}), actions)

    axis = NodeHost("axis", {"main": axis_tree()}, AxisPlant.declare(WorldState(), target=target), actions,
                    {"target": DataPort("target", "real", "in", "hmi.get_position", "target"),
                     "target_set": DataPort("target_set", "bool", "in", "hmi.get_position", "target_set")})

    robot_world = AxisPlant.declare(WorldState(), power=True)
    robot_tree = expand_skill(reg.get("move_robot"), iface=reg.interface("move_robot"))
    robot = NodeHost("robot", {"main": robot_tree}, robot_world, actions)

    hmi_world = WorldState()
    hmi_world.declare("target", VarSpec("real", "mm"), 0.0)
    hmi_world.declare("target_set", "bool", False)
    hmi_tree = expand_skill(reg.get("get_axis_position"))
    hmi = NodeHost("hmi", {"get_position": hmi_tree}, hmi_world, actions,
                   {"target": DataPort("target", "real", "out", "get_axis_position.act", "target"),
                    "target_set": DataPort("target_set", "bool", "out", "get_axis_position.act", "target_set")})

    d = Deployment("demo_axis", {"base": base, "axis": axis, "robot": robot, "hmi": hmi}, "base.main",
                   [DataLink("hmi.target", "axis.target"), DataLink("hmi.target_set", "axis.target_set")])
    return reg, d


def demo_document(reg: SkillRegistry | None = None, d: Deployment | None = None):
    """The demo as a text-format document (what ``demos/demo_axis.btw`` holds)."""
    from .dsl import (
        ActionDecl, DeploymentDecl, Document, GoalDecl, HostDecl, LinkDecl, ParamDecl, PortDecl, TreeDecl, VarDecl,
        node_decl, skill_decl,
    )

    if reg is None or d is None:
        reg, d = demo_skillset()
    doc = Document()
    doc.actions = [
        ActionDecl("move_absolute", [ParamDecl("target", "real", "mm", "in")]),
        ActionDecl("reset_axis"),
        ActionDecl("power_on"),
        ActionDecl("get_axis_position"),
    ]
    doc.skills = [skill_decl(s, reg.interface(s.name)) for s in reg]
    doc.goals = [GoalDecl("axis_at_target", [parse_condition(AXIS_GOAL)], refine_invariants=True)]
    hosts = []
    for h in d.hosts.values():
        vars_ = [VarDecl(name, spec.type, spec.unit, h.world[name]) for name, spec in h.world.specs.items()]
        trees = [TreeDecl(name, node_decl(tree)) for name, tree in h.trees.items()]
        ports = [PortDecl(p.direction, p.name, p.type, None, p.node, p.var) for p in h.ports.values()]
        hosts.append(HostDecl(h.id, None, vars_, trees, ports))
    doc.deployments = [DeploymentDecl(d.name, hosts, [LinkDecl(l.src, l.dst) for l in d.data_links], d.root)]
    return doc


# ---------------------------------------------------------------------------
# Finite-time-success state space


def axis_states(positions: Iterable[float] = range(0, 21), target: float = 10.0) -> list[WorldState]:
    """Every combination of position, power and error with a preset target."""
    out = []
    for pos, power, error in itertools.product(positions, (False, True), (False, True)):
        out.append(AxisPlant.declare(WorldState(), pos=float(pos), target=target, power=power, error=error))
    return out


def local_axis_tree(*, blocked: bool = False) -> Node:
    """Axis tree without the HMI lookup; ``blocked`` drops the reset skill."""
    reg = SkillRegistry()
    for skill, iface in axis_skills():
        if blocked and skill.name == "reset_axis":
            continue
        reg.register(skill, iface)
    return backchain([AXIS_GOAL], reg, refine_invariants=True, prefix="axis").root


def axis_actions(plant: AxisPlant | None = None) -> ActionRegistry:
    return ActionRegistry([move_absolute(plant), reset_axis(), power_on()])
