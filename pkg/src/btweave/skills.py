"""Skills, their interfaces, and the canonical skill-to-tree expansion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from .bt import ActionNode, ActionRegistry, ConditionNode, Fallback, Node, Sequence, SequenceMem
from .errors import DuplicateSkill, MissingParam, UnboundAction, UnsatisfiablePost
from .worldmodel import TRUE, Condition, condition_from, implies, satisfiable

CHILD_ROLE = "btsync.child"


@dataclass(frozen=True)
class Skill:
    name: str
    pre: Condition = TRUE
    inv: Condition = TRUE
    post: Condition = TRUE
    action: str = ""
    priority: int = 0
    bindings: Mapping[str, Any] = field(default_factory=dict, hash=False)

    def __post_init__(self):
        for attr in ("pre", "inv", "post"):
            object.__setattr__(self, attr, condition_from(getattr(self, attr)))
        object.__setattr__(self, "bindings", dict(self.bindings))
        if not self.action:
            object.__setattr__(self, "action", self.name)


@dataclass(frozen=True)
class Param:
    name: str
    type: str
    direction: str = "in"

    def __post_init__(self):
        if self.direction not in ("in", "out"):
            raise ValueError(f"parameter direction must be 'in' or 'out', got {self.direction!r}")


@dataclass
class SkillInterface:
    """Parameters, their mapping onto world variables, and the protocol role.

    Every skill speaks the same tick-synchronisation protocol as a child, so
    ``role`` is fixed.
    """

    params: list[Param] = field(default_factory=list)
    mapping: dict[str, str] = field(default_factory=dict)
    role: str = CHILD_ROLE

    def __post_init__(self):
        names = {p.name for p in self.params}
        unknown = set(self.mapping) - names
        if unknown:
            raise ValueError(f"mapping names unknown parameters: {sorted(unknown)}")
        targets = list(self.mapping.values())
        if len(set(targets)) != len(targets):
            raise ValueError("parameter mapping must be injective")
        if self.role != CHILD_ROLE:
            raise ValueError("skills only support the btsync child role")

    def in_params(self) -> list[Param]:
        return [p for p in self.params if p.direction == "in"]


class SkillRegistry:
    def __init__(self):
        self._skills: dict[str, tuple[Skill, SkillInterface]] = {}
        self._by_post: dict[Condition, list[str]] = {}

    def register(self, skill: Skill, iface: SkillInterface | None = None) -> None:
        register_skill(skill, iface or SkillInterface(), self)

    def __len__(self) -> int:
        return len(self._skills)

    def __contains__(self, name: object) -> bool:
        return name in self._skills

    def __iter__(self):
        return (s for s, _ in self._skills.values())

    def get(self, name: str) -> Skill:
        return self._skills[name][0]

    def interface(self, name: str) -> SkillInterface:
        return self._skills[name][1]

    def by_post(self, post: Condition) -> list[str]:
        return list(self._by_post.get(post, ()))

    def copy(self) -> "SkillRegistry":
        other = SkillRegistry()
        other._skills = dict(self._skills)
        other._by_post = {k: list(v) for k, v in self._by_post.items()}
        return other

    def resolver(self, actions: ActionRegistry | None = None,
                 bind: Callable[[Skill], Node] | None = None) -> Callable[[Condition], Node | None]:
        """Tick-time lookup used by ``LookupDecorator`` nodes without a static child."""
        counter = iter(range(1, 1 << 30))

        def resolve(wanted: Condition) -> Node | None:
            found = find_achievers(wanted, self)
            if not found:
                return None
            skill = found[0]
            if bind is not None:
                return bind(skill)
            return expand_skill(skill, iface=self.interface(skill.name), actions=actions,
                                ident=f"{skill.name}@lookup{next(counter)}")

        return resolve


def register_skill(skill: Skill, iface: SkillInterface, reg: SkillRegistry) -> None:
    if skill.name in reg._skills:
        raise DuplicateSkill(skill.name)
    if not satisfiable(skill.post):
        raise UnsatisfiablePost(f"{skill.name}: {skill.post}")
    reg._skills[skill.name] = (skill, iface)
    reg._by_post.setdefault(skill.post, []).append(skill.name)


def find_achievers(goal: Condition | str, reg: SkillRegistry) -> list[Skill]:
    """Skills whose postcondition implies ``goal``; higher priority first, then registration order."""
    goal = condition_from(goal)
    found = [s for s in reg if implies(s.post, goal)]
    # sorted() is stable, so ties keep registration order
    return sorted(found, key=lambda s: -s.priority)


def expand_skill(skill: Skill, bindings: Mapping[str, Any] | None = None, *,
                 iface: SkillInterface | None = None, actions: ActionRegistry | None = None,
                 ident: str | None = None) -> Fallback:
    """Build ``Fallback(post, Sequence*(pre, Sequence(inv, action)))`` for ``skill``.

    Node ids are ``ident`` (default: the skill name) with the suffixes
    ``.post .mem .pre .run .inv .act``.
    """
    ident = ident or skill.name
    merged = dict(skill.bindings)
    merged.update(bindings or {})
    iface = iface or SkillInterface()
    for p in iface.in_params():
        if p.name not in merged:
            raise MissingParam(p.name)
    if actions is not None and skill.action not in actions:
        raise UnboundAction(skill.action)
    act = ActionNode(f"{ident}.act", skill.action, merged, iface.mapping)
    return Fallback(ident, [
        ConditionNode(f"{ident}.post", skill.post),
        SequenceMem(f"{ident}.mem", [
            ConditionNode(f"{ident}.pre", skill.pre),
            Sequence(f"{ident}.run", [ConditionNode(f"{ident}.inv", skill.inv), act]),
        ]),
    ])


def skill_parts(tree: Node) -> dict[str, Node]:
    """Locate the slots of an expanded skill tree by shape, not by id."""
    if not isinstance(tree, Fallback) or len(tree.children) != 2:
        raise ValueError(f"{tree.id!r} is not an expanded skill tree")
    post, mem = tree.children
    if not isinstance(mem, SequenceMem) or len(mem.children) != 2:
        raise ValueError(f"{tree.id!r} is not an expanded skill tree")
    pre, run = mem.children
    if not isinstance(run, Sequence) or len(run.children) != 2:
        raise ValueError(f"{tree.id!r} is not an expanded skill tree")
    inv, act = run.children
    return {"root": tree, "post": post, "mem": mem, "pre": pre, "run": run, "inv": inv, "act": act}


def registry_of(skills: Iterable[Skill]) -> SkillRegistry:
    reg = SkillRegistry()
    for s in skills:
        reg.register(s)
    return reg
