"""Automatic skill composition by backchaining.

Starting from ``Sequence(C1, ..., Cn)``, every condition that some registered
skill can achieve is replaced by ``Fallback(C, Skill1_BT, Skill2_BT, ...)``;
the precondition leaf of each inserted skill tree is refined the same way.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

from .bt import ConditionNode, Fallback, LookupDecorator, Node, Sequence
from .errors import DepthExceeded
from .skills import Skill, SkillRegistry, expand_skill, find_achievers, skill_parts
from .worldmodel import Condition, condition_from, implies

DEFAULT_MAX_DEPTH = 8
MAX_PLAN_NODES = 200_000


@dataclass(frozen=True)
class Replacement:
    condition: Condition
    skill: str


@dataclass
class PlanTree:
    root: Node
    provenance: dict[str, Replacement] = field(default_factory=dict)
    unrefined: dict[str, Condition] = field(default_factory=dict)
    depth: int = 0
    goals: list[str] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.unrefined

    @property
    def unrefined_goals(self) -> list[str]:
        """Goal conditions that no registered skill achieves."""
        return [g for g in self.goals if g in self.unrefined]

    def check_soundness(self) -> list[str]:
        """Return ids of replacements whose skill post does not imply the condition."""
        nodes = {n.id: n for n in self.root.walk()}
        bad = []
        for node_id, rep in self.provenance.items():
            skill_post = self._post_of(nodes.get(node_id))
            if skill_post is None or not implies(skill_post, rep.condition):
                bad.append(node_id)
        return bad

    @staticmethod
    def _post_of(node: Node | None) -> Condition | None:
        if node is None:
            return None
        try:
            return skill_parts(node)["post"].condition
        except (KeyError, ValueError):
            return None

    def report(self) -> str:
        lines = [f"expansion depth: {self.depth}"]
        for node_id, rep in self.provenance.items():
            lines.append(f"refined {node_id}: {rep.skill} achieves \"{rep.condition}\"")
        for node_id, cond in self.unrefined.items():
            lines.append(f"unrefined {node_id}: \"{cond}\"")
        return "\n".join(lines) + "\n"


class _Planner:
    def __init__(self, reg: SkillRegistry, max_depth: int, refine_invariants: bool):
        self.reg = reg
        self.max_depth = max_depth
        self.refine_invariants = refine_invariants
        self.plan = None
        self.used: dict[str, int] = {}
        self.nodes = 0

    def ident(self, base: str) -> str:
        n = self.used.get(base, 0) + 1
        self.used[base] = n
        return base if n == 1 else f"{base}@{n}"

    def refine(self, leaf: ConditionNode, depth: int, ancestors: frozenset) -> Node:
        cond = leaf.condition
        achievers = [s for s in find_achievers(cond, self.reg) if s.name not in ancestors]
        if not achievers or depth > self.max_depth:
            self.plan.unrefined[leaf.id] = cond
            return leaf
        self.plan.depth = max(self.plan.depth, depth)
        children: list[Node] = [leaf]
        for skill in achievers:
            children.append(self.expand(skill, cond, depth, ancestors | {skill.name}))
        return Fallback(f"{leaf.id}.any", children)

    def expand(self, skill: Skill, cond: Condition, depth: int, ancestors: frozenset) -> Node:
        self.nodes += 7
        if self.nodes > MAX_PLAN_NODES:
            raise DepthExceeded(f"plan tree grew beyond {MAX_PLAN_NODES} nodes")
        tree = expand_skill(skill, iface=self.reg.interface(skill.name), ident=self.ident(skill.name))
        self.plan.provenance[tree.id] = Replacement(cond, skill.name)
        parts = skill_parts(tree)
        mem, run = parts["mem"], parts["run"]
        if not skill.pre.is_true():
            mem.children[0] = self.refine(parts["pre"], depth + 1, ancestors)
        if self.refine_invariants and not skill.inv.is_true():
            run.children[0] = self.refine(parts["inv"], depth + 1, ancestors)
        return tree


def backchain(goal: Iterable[Condition | str], reg: SkillRegistry, max_depth: int = DEFAULT_MAX_DEPTH,
              *, refine_invariants: bool = False, prefix: str = "goal") -> PlanTree:
    """Compose registered skills into a tree that works towards ``goal``.

    ``goal`` lists conditions from highest to lowest priority. A skill is
    never inserted below another copy of itself: the inner copy would need the
    same precondition as the outer one, so it cannot help, and leaving it out
    keeps the expansion finite. Unachievable conditions
    stay as bare condition nodes and are listed in ``PlanTree.unrefined``.
    """
    goal = [condition_from(c) for c in goal]
    if not goal:
        raise ValueError("goal must contain at least one condition")
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    planner = _Planner(reg.copy(), max_depth, refine_invariants)
    root = Sequence(prefix, [])
    planner.plan = PlanTree(root)
    for i, cond in enumerate(goal):
        leaf = ConditionNode(f"{prefix}{i}", cond)
        planner.plan.goals.append(leaf.id)
        root.children.append(planner.refine(leaf, 1, frozenset()))
    return planner.plan


def refine_precondition(skill_tree: Node, reg: SkillRegistry,
                        bind: Callable[[Skill], Node] | None = None, *, static: bool = True) -> Node:
    """Replace the precondition leaf with ``Fallback(pre, Lookup(wanted=pre))``.

    With ``static`` the lookup's child is chosen now from ``reg`` (``bind``
    turns a skill into a subtree, e.g. a remote proxy); an unresolved lookup
    is left for the tick-time resolver and fails if that finds nothing.
    """
    parts = skill_parts(skill_tree)
    pre = parts["pre"]
    if not isinstance(pre, ConditionNode):
        raise ValueError(f"precondition of {skill_tree.id!r} is already refined")
    child = None
    if static:
        found = find_achievers(pre.condition, reg)
        if found:
            skill = found[0]
            child = bind(skill) if bind is not None else expand_skill(
                skill, iface=reg.interface(skill.name), ident=f"{skill.name}@{skill_tree.id}")
    lookup = LookupDecorator(f"{pre.id}.lookup", pre.condition, child)
    parts["mem"].children[0] = Fallback(f"{pre.id}.any", [pre, lookup])
    return skill_tree
