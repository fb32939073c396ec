"""The ``.btw`` text format for actions, skills, trees, goals and deployments.

Example::

    action move_absolute(target: real in)

    skill move {
      pre: "power == true"
      inv: "error == false"
      post: "pos == target"
      action: move_absolute(target=target)
    }

    tree demo {
      fallback {
        cond "pos == target"
        skill move()
      }
    }

Grammar (whitespace and ``#`` comments are insignificant between tokens)::

    document   = { action | skill | tree | goal | deployment }
    action     = "action" NAME "(" [ param { "," param } ] ")" [ "{" "effects" ":" STRING "}" ]
    param      = NAME ":" type [ "in" | "out" ]
    type       = ( "bool" | "int" | "real" | "str" ) [ "[" NAME "]" ]
    skill      = "skill" NAME "{" { field } "}"
    field      = ( "pre" | "inv" | "post" ) ":" STRING
               | "action" ":" NAME [ "(" bindings ")" ]
               | "priority" ":" INT
               | "map" ":" NAME "->" NAME { "," NAME "->" NAME }
    tree       = "tree" NAME "{" node "}"
    node       = ( "sequence" | "fallback" | "sequence_mem" ) [ "as" NAME ] "{" { node } "}"
               | "cond" STRING [ "as" NAME ]
               | "action" NAME "(" bindings ")" [ "map" "(" maps ")" ] [ "as" NAME ]
               | "skill" NAME "(" bindings ")" [ "as" NAME ]
               | "lookup" "post" "=" STRING [ "as" NAME ] [ "{" node "}" ]
               | "remote" NAME "." NAME [ "as" NAME ]
    bindings   = [ NAME "=" value { "," NAME "=" value } ]
    value      = NUMBER | STRING | "true" | "false" | NAME
    goal       = "goal" NAME "{" { STRING } [ "max_depth" ":" INT ] [ "refine_invariants" ":" BOOL ] "}"
    deployment = "deployment" NAME "{" { host | link | "root" NAME "." NAME | "timeout" NAME INT } "}"
    host       = "host" NAME "{" { "dt" ":" NUMBER | "var" NAME ":" type "=" value | tree | port } "}"
    port       = "port" ( "in" | "out" ) NAME ":" type "at" NAME "var" NAME
    link       = "link" NAME "." NAME "->" NAME "." NAME

A bare ``NAME`` value is a reference to a world variable. Nodes without ``as``
get an id derived from their kind or target.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Iterable

from .bt import (
    ActionImpl, ActionNode, ActionRegistry, ConditionNode, Fallback, LookupDecorator, Node, Sequence,
    SequenceMem, SUCCESS, validate_tree,
)
from .errors import (
    ConditionSyntaxError, DslSyntaxError, MissingParam, ResolutionError, UnsatisfiablePost, DuplicateSkill,
)
from .runtime import DataLink, DataPort, Deployment, NodeHost, RemoteProxy
from .skills import Param, Skill, SkillInterface, SkillRegistry, expand_skill
from .worldmodel import (
    TRUE, Condition, VarRef, VarSpec, WorldState, format_value, parse_condition,
)

VALUE_TYPES = ("bool", "int", "real", "str")
COMPOSITES = {"sequence": Sequence, "fallback": Fallback, "sequence_mem": SequenceMem}


def _pos():
    return field(default=(0, 0), compare=False, repr=False)


# ---------------------------------------------------------------------------
# AST


@dataclass
class ParamDecl:
    name: str
    type: str
    unit: str | None = None
    direction: str = "in"


@dataclass
class ActionDecl:
    name: str
    params: list[ParamDecl] = field(default_factory=list)
    effects: Condition | None = None
    pos: tuple[int, int] = _pos()


@dataclass
class SkillDecl:
    name: str
    pre: Condition = TRUE
    inv: Condition = TRUE
    post: Condition = TRUE
    action: str = ""
    bindings: list[tuple[str, Any]] = field(default_factory=list)
    priority: int = 0
    mapping: list[tuple[str, str]] = field(default_factory=list)
    pos: tuple[int, int] = _pos()
    action_pos: tuple[int, int] = _pos()


@dataclass
class NodeDecl:
    """One tree node. ``kind`` selects which of the other fields matter."""

    kind: str
    id: str
    children: list["NodeDecl"] = field(default_factory=list)
    condition: Condition | None = None  # cond, lookup
    target: str = ""  # action/skill name, or "host.tree" for remote
    bindings: list[tuple[str, Any]] = field(default_factory=list)
    mapping: list[tuple[str, str]] = field(default_factory=list)
    pos: tuple[int, int] = _pos()
    target_pos: tuple[int, int] = _pos()

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()


@dataclass
class TreeDecl:
    name: str
    root: NodeDecl
    pos: tuple[int, int] = _pos()


@dataclass
class GoalDecl:
    name: str
    conditions: list[Condition] = field(default_factory=list)
    max_depth: int | None = None
    refine_invariants: bool = False
    pos: tuple[int, int] = _pos()


@dataclass
class VarDecl:
    name: str
    type: str
    unit: str | None
    value: Any
    pos: tuple[int, int] = _pos()


@dataclass
class PortDecl:
    direction: str
    name: str
    type: str
    unit: str | None
    node: str
    var: str
    pos: tuple[int, int] = _pos()
    node_pos: tuple[int, int] = _pos()


@dataclass
class HostDecl:
    name: str
    dt: float | None = None
    vars: list[VarDecl] = field(default_factory=list)
    trees: list[TreeDecl] = field(default_factory=list)
    ports: list[PortDecl] = field(default_factory=list)
    pos: tuple[int, int] = _pos()


@dataclass
class LinkDecl:
    src: str
    dst: str
    pos: tuple[int, int] = _pos()
    src_pos: tuple[int, int] = _pos()
    dst_pos: tuple[int, int] = _pos()


@dataclass
class DeploymentDecl:
    name: str
    hosts: list[HostDecl] = field(default_factory=list)
    links: list[LinkDecl] = field(default_factory=list)
    root: str = ""
    timeouts: list[tuple[str, int]] = field(default_factory=list)
    pos: tuple[int, int] = _pos()
    root_pos: tuple[int, int] = _pos()


@dataclass
class Document:
    actions: list[ActionDecl] = field(default_factory=list)
    skills: list[SkillDecl] = field(default_factory=list)
    trees: list[TreeDecl] = field(default_factory=list)
    goals: list[GoalDecl] = field(default_factory=list)
    deployments: list[DeploymentDecl] = field(default_factory=list)

    def action(self, name: str) -> ActionDecl | None:
        return next((a for a in self.actions if a.name == name), None)

    def skill(self, name: str) -> SkillDecl | None:
        return next((s for s in self.skills if s.name == name), None)

    def tree(self, name: str) -> TreeDecl | None:
        return next((t for t in self.trees if t.name == name), None)

    def goal(self, name: str) -> GoalDecl | None:
        return next((g for g in self.goals if g.name == name), None)

    def deployment(self, name: str | None = None) -> DeploymentDecl | None:
        if name is None:
            return self.deployments[0] if self.deployments else None
        return next((d for d in self.deployments if d.name == name), None)


# ---------------------------------------------------------------------------
# Lexer


@dataclass(frozen=True)
class Token:
    kind: str  # name, number, string, punct, eof
    text: str
    value: Any
    line: int
    col: int


_LEX = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<arrow>->)
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_@]*(?:\.[A-Za-z_][A-Za-z0-9_@]*)*)
  | (?P<punct>[{}()\[\]:,=])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _LEX.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            if text[pos] == '"':
                raise DslSyntaxError(line, col, "closing quote", "unterminated string")
            raise DslSyntaxError(line, col, "a token", text[pos])
        kind, raw = m.lastgroup, m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "string":
            tokens.append(Token("string", raw, re.sub(r"\\(.)", r"\1", raw[1:-1]), line, col))
        elif kind == "number":
            value = float(raw) if any(c in raw for c in ".eE") else int(raw)
            tokens.append(Token("number", raw, value, line, col))
        elif kind in ("name", "arrow", "punct"):
            tokens.append(Token("punct" if kind == "arrow" else kind, raw, raw, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", None, line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def fail(self, expected: str, tok: Token | None = None):
        tok = tok or self.tok
        raise DslSyntaxError(tok.line, tok.col, expected, tok.text or "end of file")

    def at(self, text: str) -> bool:
        return self.tok.kind in ("name", "punct") and self.tok.text == text

    def take(self, text: str) -> Token:
        if not self.at(text):
            self.fail(repr(text))
        tok = self.tok
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def name(self, what: str = "a name", dotted: bool = False) -> Token:
        tok = self.tok
        if tok.kind != "name" or ("." in tok.text and not dotted) or tok.text in ("true", "false"):
            self.fail(what)
        self.i += 1
        return tok

    def qualified(self, what: str) -> Token:
        tok = self.tok
        if tok.kind != "name" or tok.text.count(".") != 1:
            self.fail(what)
        self.i += 1
        return tok

    def string(self, what: str = "a quoted string") -> Token:
        if self.tok.kind != "string":
            self.fail(what)
        tok = self.tok
        self.i += 1
        return tok

    def integer(self, what: str = "an integer") -> int:
        tok = self.tok
        if tok.kind != "number" or not isinstance(tok.value, int):
            self.fail(what)
        self.i += 1
        return tok.value

    def number(self) -> float:
        tok = self.tok
        if tok.kind != "number":
            self.fail("a number")
        self.i += 1
        return float(tok.value)

    def boolean(self) -> bool:
        if self.accept("true"):
            return True
        if self.accept("false"):
            return False
        self.fail("true or false")

    def condition(self, tok: Token) -> Condition:
        try:
            return parse_condition(tok.value)
        except ConditionSyntaxError as exc:
            # offset is 1-based inside the string; +1 for the opening quote
            col = tok.col + min(exc.offset, len(tok.value) + 1)
            raise DslSyntaxError(tok.line, col, f"{exc.expected} in condition", tok.text) from None

    def value(self):
        tok = self.tok
        if tok.kind == "number":
            self.i += 1
            return tok.value
        if tok.kind == "string":
            self.i += 1
            return tok.value
        if tok.kind == "name" and "." not in tok.text:
            self.i += 1
            if tok.text in ("true", "false"):
                return tok.text == "true"
            return VarRef(tok.text)
        self.fail("a value")

    def vtype(self) -> tuple[str, str | None]:
        tok = self.name("a type")
        if tok.text not in VALUE_TYPES:
            self.fail("bool, int, real or str", tok)
        unit = None
        if self.accept("["):
            unit = self.name("a unit").text
            self.take("]")
        return tok.text, unit

    def bindings(self) -> list[tuple[str, Any]]:
        out = []
        self.take("(")
        if not self.accept(")"):
            while True:
                key = self.name("a parameter name").text
                self.take("=")
                out.append((key, self.value()))
                if self.accept(")"):
                    break
                self.take(",")
        return out

    def maps(self, closing: str | None) -> list[tuple[str, str]]:
        out = []
        while True:
            p = self.name("a parameter name").text
            self.take("->")
            v = self.name("a variable name").text
            out.append((p, v))
            if closing is not None and self.accept(closing):
                return out
            if not self.accept(","):
                if closing is not None:
                    self.fail(f"',' or {closing!r}")
                return out

    # -- top level
    def document(self) -> Document:
        doc = Document()
        while self.tok.kind != "eof":
            if self.at("action"):
                doc.actions.append(self.action_decl())
            elif self.at("skill"):
                doc.skills.append(self.skill_decl())
            elif self.at("tree"):
                doc.trees.append(self.tree_decl())
            elif self.at("goal"):
                doc.goals.append(self.goal_decl())
            elif self.at("deployment"):
                doc.deployments.append(self.deployment_decl())
            else:
                self.fail("action, skill, tree, goal or deployment")
        return doc

    def action_decl(self) -> ActionDecl:
        start = self.take("action")
        decl = ActionDecl(self.name("an action name").text, pos=(start.line, start.col))
        self.take("(")
        if not self.accept(")"):
            while True:
                pname = self.name("a parameter name").text
                self.take(":")
                ptype, unit = self.vtype()
                direction = "in"
                if self.at("in") or self.at("out"):
                    direction = self.tok.text
                    self.i += 1
                decl.params.append(ParamDecl(pname, ptype, unit, direction))
                if self.accept(")"):
                    break
                self.take(",")
        if self.accept("{"):
            self.take("effects")
            self.take(":")
            decl.effects = self.condition(self.string("an effects condition"))
            self.take("}")
        return decl

    def skill_decl(self) -> SkillDecl:
        start = self.take("skill")
        decl = SkillDecl(self.name("a skill name").text, pos=(start.line, start.col))
        self.take("{")
        seen = set()
        while not self.accept("}"):
            key = self.tok
            if key.text in seen:
                self.fail("a field not given before")
            if key.text in ("pre", "inv", "post"):
                self.i += 1
                self.take(":")
                setattr(decl, key.text, self.condition(self.string("a condition string")))
            elif key.text == "action":
                self.i += 1
                self.take(":")
                tok = self.name("an action name")
                decl.action, decl.action_pos = tok.text, (tok.line, tok.col)
                if self.at("("):
                    decl.bindings = self.bindings()
            elif key.text == "priority":
                self.i += 1
                self.take(":")
                decl.priority = self.integer()
            elif key.text == "map":
                self.i += 1
                self.take(":")
                decl.mapping = self.maps(None)
            else:
                self.fail("pre, inv, post, action, priority, map or '}'")
            seen.add(key.text)
        if not decl.action:
            self.fail("an 'action' field", self.tokens[self.i - 1])
        return decl

    def tree_decl(self) -> TreeDecl:
        start = self.take("tree")
        name = self.name("a tree name").text
        self.take("{")
        ids = _Ids()
        root = self.node(ids)
        self.take("}")
        return TreeDecl(name, root, (start.line, start.col))

    def ident(self, ids: "_Ids", base: str) -> str:
        if self.accept("as"):
            return ids.claim(self.name("a node id", dotted=True).text)
        return ids.auto(base)

    def node(self, ids: "_Ids") -> NodeDecl:
        tok = self.tok
        pos = (tok.line, tok.col)
        if tok.kind != "name":
            self.fail("a node")
        kw = tok.text
        if kw in COMPOSITES:
            self.i += 1
            node = NodeDecl(kw, self.ident(ids, kw), pos=pos)
            self.take("{")
            while not self.accept("}"):
                node.children.append(self.node(ids))
            return node
        if kw == "cond":
            self.i += 1
            cond = self.condition(self.string("a condition string"))
            return NodeDecl("cond", self.ident(ids, "cond"), condition=cond, pos=pos)
        if kw in ("action", "skill"):
            self.i += 1
            ttok = self.name(f"an {kw} name" if kw == "action" else "a skill name")
            target = ttok.text
            bindings = self.bindings()
            mapping = []
            if kw == "action" and self.accept("map"):
                self.take("(")
                mapping = self.maps(")")
            return NodeDecl(kw, self.ident(ids, target), target=target, bindings=bindings,
                            mapping=mapping, pos=pos, target_pos=(ttok.line, ttok.col))
        if kw == "lookup":
            self.i += 1
            self.take("post")
            self.take("=")
            cond = self.condition(self.string("a condition string"))
            node = NodeDecl("lookup", self.ident(ids, "lookup"), condition=cond, pos=pos)
            if self.accept("{"):
                node.children.append(self.node(ids))
                self.take("}")
            return node
        if kw == "remote":
            self.i += 1
            ttok = self.qualified("host.tree")
            return NodeDecl("remote", self.ident(ids, ttok.text), target=ttok.text, pos=pos,
                            target_pos=(ttok.line, ttok.col))
        self.fail("sequence, fallback, sequence_mem, cond, action, skill, lookup or remote")

    def goal_decl(self) -> GoalDecl:
        start = self.take("goal")
        decl = GoalDecl(self.name("a goal name").text, pos=(start.line, start.col))
        self.take("{")
        while self.tok.kind == "string":
            decl.conditions.append(self.condition(self.string()))
        if self.accept("max_depth"):
            self.take(":")
            decl.max_depth = self.integer()
        if self.accept("refine_invariants"):
            self.take(":")
            decl.refine_invariants = self.boolean()
        self.take("}")
        return decl

    def deployment_decl(self) -> DeploymentDecl:
        start = self.take("deployment")
        decl = DeploymentDecl(self.name("a deployment name").text, pos=(start.line, start.col))
        self.take("{")
        while not self.accept("}"):
            if self.at("host"):
                decl.hosts.append(self.host_decl())
            elif self.at("link"):
                tok = self.take("link")
                src = self.qualified("host.port")
                self.take("->")
                dst = self.qualified("host.port")
                decl.links.append(LinkDecl(src.text, dst.text, (tok.line, tok.col), (src.line, src.col),
                                           (dst.line, dst.col)))
            elif self.at("root"):
                self.i += 1
                tok = self.qualified("host.tree")
                decl.root, decl.root_pos = tok.text, (tok.line, tok.col)
            elif self.at("timeout"):
                self.i += 1
                host = self.name("a host name").text
                decl.timeouts.append((host, self.integer("a tick count")))
            else:
                self.fail("host, link, root, timeout or '}'")
        if not decl.root:
            self.fail("a 'root' entry", self.tokens[self.i - 1])
        return decl

    def host_decl(self) -> HostDecl:
        start = self.take("host")
        decl = HostDecl(self.name("a host name").text, pos=(start.line, start.col))
        self.take("{")
        while not self.accept("}"):
            if self.at("dt"):
                self.i += 1
                self.take(":")
                decl.dt = self.number()
            elif self.at("var"):
                tok = self.take("var")
                name = self.name("a variable name").text
                self.take(":")
                vtype, unit = self.vtype()
                self.take("=")
                vtok = self.tok
                value = self.value()
                if isinstance(value, VarRef) or not VarSpec(vtype).accepts(value):
                    self.fail(f"a {vtype} value", vtok)
                decl.vars.append(VarDecl(name, vtype, unit, VarSpec(vtype).coerce(name, value),
                                         (tok.line, tok.col)))
            elif self.at("tree"):
                decl.trees.append(self.tree_decl())
            elif self.at("port"):
                tok = self.take("port")
                direction = self.tok.text
                if direction not in ("in", "out"):
                    self.fail("in or out")
                self.i += 1
                name = self.name("a port name").text
                self.take(":")
                ptype, unit = self.vtype()
                self.take("at")
                node = self.name("a node id", dotted=True)
                self.take("var")
                var = self.name("a variable name").text
                decl.ports.append(PortDecl(direction, name, ptype, unit, node.text, var, (tok.line, tok.col),
                                           (node.line, node.col)))
            else:
                self.fail("dt, var, tree, port or '}'")
        return decl


class _Ids:
    """Node ids of one tree: explicit ones are claimed, missing ones derived."""

    def __init__(self):
        self.used: set[str] = set()
        self.duplicates: list[str] = []

    def claim(self, ident: str) -> str:
        if ident in self.used:
            self.duplicates.append(ident)
        self.used.add(ident)
        return ident

    def next_auto(self, base: str) -> str:
        if base not in self.used:
            return base
        n = 2
        while f"{base}@{n}" in self.used:
            n += 1
        return f"{base}@{n}"

    def auto(self, base: str) -> str:
        return self.claim(self.next_auto(base))


# ---------------------------------------------------------------------------
# Resolution


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    message: str

    def __str__(self):
        return f"{self.line}:{self.col}: {self.message}"


def _check(doc: Document) -> list[Diagnostic]:
    diags: list[Diagnostic] = []

    def err(pos, message):
        diags.append(Diagnostic(pos[0], pos[1], message))

    def unique(items, what):
        seen = set()
        for item in items:
            if item.name in seen:
                err(item.pos, f"duplicate {what} {item.name!r}")
            seen.add(item.name)

    unique(doc.actions, "action")
    unique(doc.skills, "skill")
    unique(doc.trees, "tree")
    unique(doc.goals, "goal")
    unique(doc.deployments, "deployment")

    for a in doc.actions:
        names = [p.name for p in a.params]
        if len(set(names)) != len(names):
            err(a.pos, f"action {a.name!r} repeats a parameter name")

    for s in doc.skills:
        act = doc.action(s.action)
        if act is None:
            err(s.action_pos, f"skill {s.name!r} uses undeclared action {s.action!r}")
            continue
        params = {p.name for p in act.params}
        for key, _ in s.bindings:
            if key not in params:
                err(s.action_pos, f"action {s.action!r} has no parameter {key!r}")
        for key, _ in s.mapping:
            if key not in params:
                err(s.pos, f"skill {s.name!r} maps unknown parameter {key!r}")
        targets = [v for _, v in s.mapping]
        if len(set(targets)) != len(targets):
            err(s.pos, f"skill {s.name!r} maps two parameters onto one variable")

    def check_tree(tree: TreeDecl, hosts: dict[str, HostDecl] | None):
        seen = set()
        for n in tree.root.walk():
            if n.id in seen:
                err(n.pos, f"duplicate node id {n.id!r} in tree {tree.name!r}")
            seen.add(n.id)
            if n.kind == "action":
                act = doc.action(n.target)
                if act is None:
                    err(n.target_pos, f"undeclared action {n.target!r}")
                    continue
                params = {p.name for p in act.params}
                for key, _ in n.bindings:
                    if key not in params:
                        err(n.pos, f"action {n.target!r} has no parameter {key!r}")
            elif n.kind == "skill":
                s = doc.skill(n.target)
                if s is None:
                    err(n.target_pos, f"undefined skill {n.target!r}")
                    continue
                act = doc.action(s.action)
                bound = {k for k, _ in s.bindings} | {k for k, _ in n.bindings}
                if act is not None:
                    for p in act.params:
                        if p.direction == "in" and p.name not in bound:
                            err(n.pos, f"skill {n.target!r} needs a binding for {p.name!r}")
            elif n.kind == "remote":
                host, _, tname = n.target.partition(".")
                if hosts is None:
                    err(n.pos, f"remote node {n.id!r} outside a deployment")
                elif host not in hosts:
                    err(n.target_pos, f"unknown host {host!r}")
                elif not any(t.name == tname for t in hosts[host].trees):
                    err(n.target_pos, f"host {host!r} has no tree {tname!r}")

    for t in doc.trees:
        check_tree(t, None)

    for d in doc.deployments:
        unique(d.hosts, "host")
        hosts = {h.name: h for h in d.hosts}
        for h in d.hosts:
            unique(h.trees, f"tree on host {h.name!r}")
            unique(h.vars, f"variable on host {h.name!r}")
            unique(h.ports, f"port on host {h.name!r}")
            for t in h.trees:
                check_tree(t, hosts)
            ids = {n.id for t in h.trees for n in t.root.walk()}
            for p in h.ports:
                if p.node not in ids:
                    err(p.node_pos, f"port {p.name!r} is attached to unknown node {p.node!r}")
        host, _, tname = d.root.partition(".")
        if host not in hosts or not any(t.name == tname for t in hosts[host].trees):
            err(d.root_pos, f"root {d.root!r} does not name a host tree")
        for link in d.links:
            for ref, pos in ((link.src, link.src_pos), (link.dst, link.dst_pos)):
                h, _, p = ref.partition(".")
                if h not in hosts or not any(port.name == p for port in hosts[h].ports):
                    err(pos, f"unknown port {ref!r}")
        for h, _ in d.timeouts:
            if h not in hosts:
                err(d.pos, f"timeout for unknown host {h!r}")
    return diags


def parse_document(text: str) -> Document:
    """Parse and resolve a ``.btw`` document.

    Raises ``DslSyntaxError`` on the first syntax error and ``ResolutionError``
    with every unresolved reference otherwise.
    """
    doc = _Parser(text).document()
    diags = _check(doc)
    if diags:
        raise ResolutionError(diags)
    return doc


# ---------------------------------------------------------------------------
# Printer


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _value(v) -> str:
    if isinstance(v, str):
        return _quote(v)
    if isinstance(v, float) and (v != v or v in (float("inf"), float("-inf"))):
        raise ValueError(f"cannot print non-finite value {v!r}")
    return format_value(v)


def _bindings(items) -> str:
    return "(" + ", ".join(f"{k}={_value(v)}" for k, v in items) + ")"


def _vtype(t: str, unit: str | None) -> str:
    return f"{t}[{unit}]" if unit else t


def _print_node(n: NodeDecl, ids: _Ids, indent: int, out: list[str]) -> None:
    pad = "  " * indent
    base = {"cond": "cond", "lookup": "lookup"}.get(n.kind, n.target or n.kind)
    suffix = "" if ids.next_auto(base) == n.id else f" as {n.id}"
    ids.claim(n.id)
    if n.kind in COMPOSITES:
        if not n.children:
            out.append(f"{pad}{n.kind}{suffix} {{}}")
            return
        out.append(f"{pad}{n.kind}{suffix} {{")
        for c in n.children:
            _print_node(c, ids, indent + 1, out)
        out.append(f"{pad}}}")
    elif n.kind == "cond":
        out.append(f"{pad}cond {_quote(str(n.condition))}{suffix}")
    elif n.kind in ("action", "skill"):
        mapping = ""
        if n.mapping:
            mapping = " map(" + ", ".join(f"{p} -> {v}" for p, v in n.mapping) + ")"
        out.append(f"{pad}{n.kind} {n.target}{_bindings(n.bindings)}{mapping}{suffix}")
    elif n.kind == "lookup":
        head = f"{pad}lookup post={_quote(str(n.condition))}{suffix}"
        if n.children:
            out.append(head + " {")
            _print_node(n.children[0], ids, indent + 1, out)
            out.append(f"{pad}}}")
        else:
            out.append(head)
    elif n.kind == "remote":
        out.append(f"{pad}remote {n.target}{suffix}")
    else:
        raise ValueError(f"unknown node kind {n.kind!r}")


def _print_tree(t: TreeDecl, indent: int, out: list[str]) -> None:
    pad = "  " * indent
    out.append(f"{pad}tree {t.name} {{")
    _print_node(t.root, _Ids(), indent + 1, out)
    out.append(f"{pad}}}")


def print_document(doc: Document) -> str:
    """Canonical text for ``doc``; ``parse_document`` of the result equals ``doc``."""
    blocks: list[list[str]] = []
    for a in doc.actions:
        params = ", ".join(f"{p.name}: {_vtype(p.type, p.unit)} {p.direction}" for p in a.params)
        head = f"action {a.name}({params})"
        if a.effects is None:
            blocks.append([head])
        else:
            blocks.append([head + " {", f"  effects: {_quote(str(a.effects))}", "}"])
    for s in doc.skills:
        lines = [f"skill {s.name} {{"]
        for attr in ("pre", "inv", "post"):
            lines.append(f"  {attr}: {_quote(str(getattr(s, attr)))}")
        lines.append(f"  action: {s.action}{_bindings(s.bindings) if s.bindings else ''}")
        if s.priority:
            lines.append(f"  priority: {s.priority}")
        if s.mapping:
            lines.append("  map: " + ", ".join(f"{p} -> {v}" for p, v in s.mapping))
        lines.append("}")
        blocks.append(lines)
    for t in doc.trees:
        lines: list[str] = []
        _print_tree(t, 0, lines)
        blocks.append(lines)
    for g in doc.goals:
        lines = [f"goal {g.name} {{"] + [f"  {_quote(str(c))}" for c in g.conditions]
        if g.max_depth is not None:
            lines.append(f"  max_depth: {g.max_depth}")
        if g.refine_invariants:
            lines.append("  refine_invariants: true")
        lines.append("}")
        blocks.append(lines)
    for d in doc.deployments:
        lines = [f"deployment {d.name} {{"]
        for h in d.hosts:
            lines.append(f"  host {h.name} {{")
            if h.dt is not None:
                lines.append(f"    dt: {format_value(float(h.dt))}")
            for v in h.vars:
                lines.append(f"    var {v.name}: {_vtype(v.type, v.unit)} = {_value(v.value)}")
            for t in h.trees:
                _print_tree(t, 2, lines)
            for p in h.ports:
                lines.append(f"    port {p.direction} {p.name}: {_vtype(p.type, p.unit)} at {p.node} var {p.var}")
            lines.append("  }")
        for link in d.links:
            lines.append(f"  link {link.src} -> {link.dst}")
        for host, ticks in d.timeouts:
            lines.append(f"  timeout {host} {ticks}")
        lines.append(f"  root {d.root}")
        lines.append("}")
        blocks.append(lines)
    return "\n\n".join("\n".join(b) for b in blocks) + "\n"


# ---------------------------------------------------------------------------
# From runtime objects back to declarations


def node_decl(node: Node) -> NodeDecl:
    """Declaration for an already-built tree, e.g. the output of backchaining."""
    if isinstance(node, (Sequence, Fallback, SequenceMem)):
        return NodeDecl(node.kind, node.id, [node_decl(c) for c in node.children])
    if isinstance(node, ConditionNode):
        return NodeDecl("cond", node.id, condition=node.condition)
    if isinstance(node, ActionNode):
        return NodeDecl("action", node.id, target=node.action, bindings=list(node.bindings.items()),
                        mapping=list(node.mapping.items()))
    if isinstance(node, LookupDecorator):
        return NodeDecl("lookup", node.id, [node_decl(c) for c in node.children], condition=node.wanted)
    if isinstance(node, RemoteProxy):
        return NodeDecl("remote", node.id, target=node.target)
    raise TypeError(f"cannot describe {node!r} in the text format")


def skill_decl(skill: Skill, iface: SkillInterface | None = None) -> SkillDecl:
    iface = iface or SkillInterface()
    return SkillDecl(skill.name, skill.pre, skill.inv, skill.post, skill.action,
                     list(skill.bindings.items()), skill.priority, list(iface.mapping.items()))


# ---------------------------------------------------------------------------
# Building runtime objects


def effect_stub(decl: ActionDecl) -> ActionImpl:
    """Action that writes the equality literals of its effects and succeeds."""
    updates = {lit.var: lit.value for lit in decl.effects.literals if lit.op == "=="}

    def step(world, params):
        return SUCCESS, {k: (world.get(v.name) if isinstance(v, VarRef) else v) for k, v in updates.items()}

    return ActionImpl(decl.name, step)


def build_actions(doc: Document, impls: ActionRegistry | Iterable[ActionImpl] | None = None,
                  *, strict: bool = False) -> ActionRegistry:
    """Registry with ``impls`` plus effect stubs for declared actions that have effects."""
    given = impls if isinstance(impls, ActionRegistry) else ActionRegistry(impls or ())
    reg = ActionRegistry()
    for name in given.names():
        reg.add(given.get(name))
    for a in doc.actions:
        if a.name in reg:
            continue
        if a.effects is not None:
            reg.add(effect_stub(a))
        elif strict:
            from .errors import UnboundAction

            raise UnboundAction(a.name)
    return reg


def build_registry(doc: Document) -> SkillRegistry:
    reg = SkillRegistry()
    diags = []
    for s in doc.skills:
        act = doc.action(s.action)
        params = [Param(p.name, p.type, p.direction) for p in act.params] if act else []
        skill = Skill(s.name, s.pre, s.inv, s.post, s.action, s.priority, dict(s.bindings))
        try:
            reg.register(skill, SkillInterface(params, dict(s.mapping)))
        except (UnsatisfiablePost, DuplicateSkill, ValueError) as exc:
            diags.append(Diagnostic(s.pos[0], s.pos[1], f"skill {s.name!r}: {exc}"))
    if diags:
        raise ResolutionError(diags)
    return reg


def build_node(decl: NodeDecl, doc: Document, reg: SkillRegistry | None = None) -> Node:
    reg = reg if reg is not None else build_registry(doc)
    if decl.kind in COMPOSITES:
        return COMPOSITES[decl.kind](decl.id, [build_node(c, doc, reg) for c in decl.children])
    if decl.kind == "cond":
        return ConditionNode(decl.id, decl.condition)
    if decl.kind == "action":
        return ActionNode(decl.id, decl.target, dict(decl.bindings), dict(decl.mapping))
    if decl.kind == "skill":
        try:
            return expand_skill(reg.get(decl.target), dict(decl.bindings),
                                iface=reg.interface(decl.target), ident=decl.id)
        except MissingParam as exc:
            raise ResolutionError([Diagnostic(decl.pos[0], decl.pos[1], str(exc))]) from None
    if decl.kind == "lookup":
        child = build_node(decl.children[0], doc, reg) if decl.children else None
        return LookupDecorator(decl.id, decl.condition, child)
    if decl.kind == "remote":
        host, _, tree = decl.target.partition(".")
        return RemoteProxy(decl.id, host, tree)
    raise ValueError(f"unknown node kind {decl.kind!r}")


def build_tree(doc: Document, name: str, reg: SkillRegistry | None = None) -> Node:
    """Build a top-level tree, or a host tree given as ``host.tree``."""
    decl = doc.tree(name)
    if decl is None and "." in name:
        host, _, tname = name.partition(".")
        for d in doc.deployments:
            for h in d.hosts:
                if h.name == host:
                    decl = next((t for t in h.trees if t.name == tname), None)
    if decl is None:
        raise KeyError(f"no tree named {name!r}")
    root = build_node(decl.root, doc, reg)
    validate_tree(root)
    return root


def host_world(h: HostDecl) -> WorldState:
    w = WorldState(dt=h.dt) if h.dt is not None else WorldState()
    for v in h.vars:
        w.declare(v.name, VarSpec(v.type, v.unit), v.value)
    return w


def build_deployment(doc: Document, name: str | None = None,
                     actions: ActionRegistry | Iterable[ActionImpl] | None = None) -> Deployment:
    decl = doc.deployment(name)
    if decl is None:
        raise KeyError(f"no deployment {name!r}" if name else "document has no deployment")
    reg = build_registry(doc)
    registry = build_actions(doc, actions)
    hosts = {}
    for h in decl.hosts:
        trees = {t.name: build_node(t.root, doc, reg) for t in h.trees}
        for tree in trees.values():
            validate_tree(tree)
        ports = {p.name: DataPort(p.name, p.type, p.direction, p.node, p.var) for p in h.ports}
        hosts[h.name] = NodeHost(h.name, trees, host_world(h), registry, ports, reg.resolver(registry))
    links = [DataLink(l.src, l.dst) for l in decl.links]
    return Deployment(decl.name, hosts, decl.root, links, dict(decl.timeouts))


def load(path) -> Document:
    with open(path, encoding="utf-8") as fh:
        return parse_document(fh.read())
