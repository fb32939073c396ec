"""Behavior trees with skill backchaining and distributed tick synchronisation."""

from .bt import (
    FAILURE, RUNNING, SUCCESS, ActionImpl, ActionNode, ActionRegistry, ConditionNode, Executor,
    Fallback, LookupDecorator, Node, Sequence, SequenceMem, Status, TickTrace, check_fts, halt, tick,
)
from .backchain import PlanTree, backchain, refine_precondition
from .skills import Param, Skill, SkillInterface, SkillRegistry, expand_skill, find_achievers
from .worldmodel import (
    TRUE, Condition, Literal, VarRef, WorldState, eval_condition, implies, parse_condition, satisfiable,
)

__all__ = [
    "FAILURE", "RUNNING", "SUCCESS", "ActionImpl", "ActionNode", "ActionRegistry", "ConditionNode", "Executor",
    "Fallback", "LookupDecorator", "Node", "Sequence", "SequenceMem", "Status", "TickTrace", "check_fts",
    "halt", "tick", "PlanTree", "backchain", "refine_precondition", "Param", "Skill", "SkillInterface",
    "SkillRegistry", "expand_skill", "find_achievers", "TRUE", "Condition", "Literal", "VarRef", "WorldState",
    "eval_condition", "implies", "parse_condition", "satisfiable",
]

__version__ = "0.1.0"
