"""Typed world state (the blackboard) and the conjunctive condition language.

A condition is a conjunction of literals ``variable OP value``. The value is
either a constant (bool, int, real, quoted string) or a bare identifier naming
another world variable::

    >>> c = parse_condition("pos >= 0 AND error == false")
    >>> w = WorldState.from_dict({"pos": 3.5, "error": False})
    >>> eval_condition(c, w)
    True
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Union

from .errors import ConditionSyntaxError, TypeMismatch, UnknownVariable

REAL_EPS = 1e-9
OPS = ("==", "!=", "<", "<=", ">", ">=")
TYPES = ("bool", "int", "real", "str", "enum")


@dataclass(frozen=True)
class VarSpec:
    type: str
    unit: str | None = None
    choices: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.type not in TYPES:
            raise ValueError(f"unknown variable type {self.type!r}")
        if self.type == "enum" and not self.choices:
            raise ValueError("enum variables need at least one choice")

    def accepts(self, value: Any) -> bool:
        if self.type == "bool":
            return isinstance(value, bool)
        if self.type == "int":
            return isinstance(value, int) and not isinstance(value, bool)
        if self.type == "real":
            return isinstance(value, (int, float)) and not isinstance(value, bool)
        if self.type == "str":
            return isinstance(value, str)
        return isinstance(value, str) and value in self.choices

    def coerce(self, name: str, value: Any) -> Any:
        if not self.accepts(value):
            raise TypeMismatch(name, str(self), _typename(value))
        return float(value) if self.type == "real" else value

    def __str__(self) -> str:
        if self.type == "enum":
            return "enum(" + "|".join(self.choices) + ")"
        if self.unit:
            return f"{self.type}[{self.unit}]"
        return self.type


def _typename(value: Any) -> str:
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "real"
    if isinstance(value, str):
        return "str"
    return type(value).__name__


def infer_spec(value: Any) -> VarSpec:
    name = _typename(value)
    if name not in ("bool", "int", "real", "str"):
        raise TypeError(f"cannot infer a world type for {value!r}")
    return VarSpec(name)


class WorldState:
    """Typed variable valuation plus the logical clock of one host.

    The clock is kept as ``t0 + ticks * dt`` rather than accumulated, so that
    after k ticks it equals that product exactly.
    """

    def __init__(self, dt: float = 1.0, t0: float = 0.0):
        if not dt > 0:
            raise ValueError("dt must be positive")
        if t0 < 0:
            raise ValueError("t0 must be non-negative")
        self.dt = float(dt)
        self.t0 = float(t0)
        self.ticks = 0
        self._specs: dict[str, VarSpec] = {}
        self._values: dict[str, Any] = {}

    @classmethod
    def from_dict(cls, values: Mapping[str, Any], **kw) -> "WorldState":
        w = cls(**kw)
        for name, value in values.items():
            w.declare(name, infer_spec(value), value)
        return w

    def declare(self, name: str, spec: VarSpec | str, value: Any) -> None:
        if isinstance(spec, str):
            spec = VarSpec(spec)
        if name in self._specs and self._specs[name] != spec:
            raise TypeMismatch(name, str(self._specs[name]), str(spec))
        self._specs[name] = spec
        self._values[name] = spec.coerce(name, value)

    @property
    def clock(self) -> float:
        return self.t0 + self.ticks * self.dt

    def advance(self) -> None:
        self.ticks += 1

    def spec(self, name: str) -> VarSpec:
        try:
            return self._specs[name]
        except KeyError:
            raise UnknownVariable(name) from None

    @property
    def specs(self) -> dict[str, VarSpec]:
        return dict(self._specs)

    def get(self, name: str) -> Any:
        try:
            return self._values[name]
        except KeyError:
            raise UnknownVariable(name) from None

    __getitem__ = get

    def set(self, name: str, value: Any) -> None:
        self._values[name] = self.spec(name).coerce(name, value)

    __setitem__ = set

    def update(self, values: Mapping[str, Any]) -> None:
        # validate everything first so a bad write leaves the state untouched
        coerced = {n: self.spec(n).coerce(n, v) for n, v in values.items()}
        self._values.update(coerced)

    def __contains__(self, name: object) -> bool:
        return name in self._values

    def __iter__(self):
        return iter(self._values)

    def items(self):
        return self._values.items()

    def as_dict(self) -> dict[str, Any]:
        return dict(self._values)

    def copy(self) -> "WorldState":
        w = WorldState(self.dt, self.t0)
        w.ticks = self.ticks
        w._specs = dict(self._specs)
        w._values = dict(self._values)
        return w

    def snapshot(self) -> tuple:
        return (self.ticks, self.dt, self.t0, tuple(sorted(self._values.items())))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WorldState):
            return NotImplemented
        return self.snapshot() == other.snapshot() and self._specs == other._specs

    def __repr__(self) -> str:
        body = ", ".join(f"{k}={v!r}" for k, v in self._values.items())
        return f"WorldState({body}; t={self.clock})"


# ---------------------------------------------------------------------------
# Conditions


@dataclass(frozen=True)
class VarRef:
    """Right-hand side naming another world variable."""

    name: str

    def __str__(self) -> str:
        return self.name


Value = Union[bool, int, float, str, VarRef]


@dataclass(frozen=True)
class Literal:
    var: str
    op: str
    value: Value

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown operator {self.op!r}")

    def __str__(self) -> str:
        return f"{self.var} {self.op} {format_value(self.value)}"


@dataclass(frozen=True)
class Condition:
    literals: tuple[Literal, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "literals", tuple(self.literals))

    @classmethod
    def of(cls, *literals: tuple[str, str, Value]) -> "Condition":
        return cls(tuple(Literal(*lit) for lit in literals))

    @property
    def variables(self) -> set[str]:
        out = {lit.var for lit in self.literals}
        out.update(lit.value.name for lit in self.literals if isinstance(lit.value, VarRef))
        return out

    def __and__(self, other: "Condition") -> "Condition":
        return Condition(self.literals + other.literals)

    def is_true(self) -> bool:
        return not self.literals

    def __str__(self) -> str:
        if not self.literals:
            return "true"
        return " AND ".join(str(lit) for lit in self.literals)


TRUE = Condition()


def format_value(value: Value) -> str:
    if isinstance(value, VarRef):
        return value.name
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        text = repr(value)
        return text if any(c in text for c in ".en") else text + ".0"
    if isinstance(value, str):
        return "'" + value.replace("\\", "\\\\").replace("'", "\\'") + "'"
    raise TypeError(f"unsupported condition value {value!r}")


_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<op>==|!=|<=|>=|<|>)
  | (?P<str>'(?:[^'\\]|\\.)*'|"(?:[^"\\]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, Any, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ConditionSyntaxError(pos + 1, "a token", text)
        kind = m.lastgroup
        raw = m.group()
        if kind == "num":
            if "." in raw or "e" in raw or "E" in raw:
                tokens.append(("value", float(raw), pos + 1))
            else:
                tokens.append(("value", int(raw), pos + 1))
        elif kind == "str":
            tokens.append(("value", re.sub(r"\\(.)", r"\1", raw[1:-1]), pos + 1))
        elif kind == "ident":
            if raw == "true" or raw == "false":
                tokens.append(("value", raw == "true", pos + 1))
            elif raw == "AND":
                tokens.append(("and", raw, pos + 1))
            else:
                tokens.append(("ident", raw, pos + 1))
        elif kind == "op":
            tokens.append(("op", raw, pos + 1))
        pos = m.end()
    tokens.append(("eof", None, len(text) + 1))
    return tokens


def parse_condition(text: str) -> Condition:
    """Parse ``literal ("AND" literal)*``; the bare word ``true`` is the empty conjunction."""
    tokens = _tokenize(text)
    if len(tokens) == 2 and tokens[0][:2] == ("value", True):
        return TRUE
    literals = []
    i = 0

    def expect(kind: str, what: str):
        nonlocal i
        tok = tokens[i]
        if tok[0] != kind:
            raise ConditionSyntaxError(tok[2], what, text)
        i += 1
        return tok[1]

    while True:
        var = expect("ident", "variable name")
        op = expect("op", "comparison operator")
        tok = tokens[i]
        if tok[0] == "value":
            value = tok[1]
        elif tok[0] == "ident":
            value = VarRef(tok[1])
        else:
            raise ConditionSyntaxError(tok[2], "value", text)
        i += 1
        literals.append(Literal(var, op, value))
        if tokens[i][0] == "eof":
            break
        expect("and", "AND or end of condition")
    return Condition(tuple(literals))


# ---------------------------------------------------------------------------
# Evaluation


def _kind(value: Any) -> str:
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, (int, float)):
        return "num"
    return "str"


def _compare(var: str, left: Any, op: str, right: Any) -> bool:
    lk, rk = _kind(left), _kind(right)
    if lk != rk:
        raise TypeMismatch(var, lk, rk)
    if lk != "num":
        if op == "==":
            return left == right
        if op == "!=":
            return left != right
        raise TypeMismatch(var, "ordered type", lk)
    if op in ("==", "!="):
        if isinstance(left, float) or isinstance(right, float):
            equal = abs(left - right) <= REAL_EPS
        else:
            equal = left == right
        return equal if op == "==" else not equal
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    return left >= right


def eval_literal(lit: Literal, w: WorldState) -> bool:
    left = w.get(lit.var)
    right = w.get(lit.value.name) if isinstance(lit.value, VarRef) else lit.value
    return _compare(lit.var, left, lit.op, right)


def eval_condition(c: Condition, w: WorldState) -> bool:
    # every literal is checked even after a false one: unknown names must surface
    result = True
    for lit in c.literals:
        if not eval_literal(lit, w):
            result = False
    return result


# ---------------------------------------------------------------------------
# Per-variable domains used by implies() and satisfiable()

_INF = math.inf


@dataclass
class _NumDomain:
    lo: float = -_INF
    lo_closed: bool = False
    hi: float = _INF
    hi_closed: bool = False
    excluded: set = field(default_factory=set)
    integral: bool = False

    def add(self, op: str, v: float) -> None:
        if op == "==":
            self._raise_lo(v, True)
            self._lower_hi(v, True)
        elif op == "!=":
            self.excluded.add(v)
        elif op == ">":
            self._raise_lo(v, False)
        elif op == ">=":
            self._raise_lo(v, True)
        elif op == "<":
            self._lower_hi(v, False)
        else:
            self._lower_hi(v, True)

    def _raise_lo(self, v, closed):
        if v > self.lo or (v == self.lo and not closed):
            self.lo, self.lo_closed = v, closed

    def _lower_hi(self, v, closed):
        if v < self.hi or (v == self.hi and not closed):
            self.hi, self.hi_closed = v, closed

    def int_bounds(self) -> tuple[float, float]:
        """Closed integer bounds after trimming excluded endpoints."""
        lo, hi = self.int_bounds_raw()
        while lo <= hi and lo != -_INF and lo in self.excluded:
            lo += 1
        while lo <= hi and hi != _INF and hi in self.excluded:
            hi -= 1
        return lo, hi

    def empty(self) -> bool:
        if self.integral:
            lo, hi = self.int_bounds()
            return lo > hi
        if self.lo < self.hi:
            return False
        if self.lo == self.hi:
            return not (self.lo_closed and self.hi_closed) or self.lo in self.excluded
        return True

    def contains(self, v: float) -> bool:
        if self.integral and v != math.floor(v):
            return False
        if v in self.excluded:
            return False
        if v < self.lo or (v == self.lo and not self.lo_closed):
            return False
        if v > self.hi or (v == self.hi and not self.hi_closed):
            return False
        return True

    def subset_of(self, other: "_NumDomain") -> bool:
        if self.empty():
            return True
        if any(self.contains(e) for e in other.excluded):
            return False
        if self.integral:
            lo, hi = self.int_bounds()
            return other._covers_lo(lo, True) and other._covers_hi(hi, True)
        if self.lo == self.hi:
            return other.contains(self.lo)
        lo_closed = self.lo_closed and self.lo not in self.excluded
        hi_closed = self.hi_closed and self.hi not in self.excluded
        return other._covers_lo(self.lo, lo_closed) and other._covers_hi(self.hi, hi_closed)

    def _covers_lo(self, lo: float, closed: bool) -> bool:
        if self.integral:
            bound, _ = self.int_bounds_raw()
            return lo >= bound
        if lo > self.lo:
            return True
        if lo == self.lo:
            return self.lo == -_INF or self.lo_closed or not closed
        return False

    def _covers_hi(self, hi: float, closed: bool) -> bool:
        if self.integral:
            _, bound = self.int_bounds_raw()
            return hi <= bound
        if hi < self.hi:
            return True
        if hi == self.hi:
            return self.hi == _INF or self.hi_closed or not closed
        return False

    def int_bounds_raw(self) -> tuple[float, float]:
        # integer hull of the interval without trimming excluded points
        lo, hi = self.lo, self.hi
        if lo != -_INF:
            lo = lo + 1 if (not self.lo_closed and lo == math.floor(lo)) else math.ceil(lo)
        if hi != _INF:
            hi = hi - 1 if (not self.hi_closed and hi == math.ceil(hi)) else math.floor(hi)
        return lo, hi


@dataclass
class _EqDomain:
    """Domain of a variable that only supports == and !=."""

    universe: frozenset | None = None  # None = unbounded
    eq: set = field(default_factory=set)
    neq: set = field(default_factory=set)

    def add(self, op: str, v: Any) -> None:
        (self.eq if op == "==" else self.neq).add(v)

    def finite(self) -> set | None:
        if len(self.eq) > 1:
            return set()
        if self.eq:
            (v,) = self.eq
            ok = v not in self.neq and (self.universe is None or v in self.universe)
            return {v} if ok else set()
        if self.universe is not None:
            return set(self.universe) - self.neq
        return None

    def empty(self) -> bool:
        s = self.finite()
        return s is not None and not s

    def subset_of(self, other: "_EqDomain") -> bool:
        mine = self.finite()
        if mine is not None and not mine:
            return True
        theirs = other.finite()
        if mine is not None:
            if theirs is not None:
                return mine <= theirs
            return not (mine & other.neq)
        if theirs is not None:
            return False
        return other.neq <= self.neq


def _spec_for(types, var: str) -> VarSpec | None:
    if types is None:
        return None
    if isinstance(types, WorldState):
        return types.specs.get(var)
    spec = types.get(var)
    if isinstance(spec, str):
        spec = VarSpec(spec)
    return spec


def _domains(c: Condition, types=None) -> tuple[dict[str, Any], set[Literal]]:
    """Build per-variable domains; literals with a variable on the right stay opaque."""
    domains: dict[str, Any] = {}
    kinds: dict[str, str] = {}
    opaque: set[Literal] = set()
    for lit in c.literals:
        if isinstance(lit.value, VarRef):
            opaque.add(lit)
            continue
        kind = _kind(lit.value)
        spec = _spec_for(types, lit.var)
        if spec is not None:
            declared = {"bool": "bool", "int": "num", "real": "num"}.get(spec.type, "str")
            if declared != kind:
                raise TypeMismatch(lit.var, spec.type, _typename(lit.value))
        prev = kinds.setdefault(lit.var, kind)
        if prev != kind:
            raise TypeMismatch(lit.var, prev, kind)
        if kind != "num" and lit.op not in ("==", "!="):
            raise TypeMismatch(lit.var, "ordered type", kind)
        dom = domains.get(lit.var)
        if dom is None:
            if kind == "num":
                dom = _NumDomain(integral=spec is not None and spec.type == "int")
            elif kind == "bool":
                dom = _EqDomain(frozenset({True, False}))
            else:
                universe = frozenset(spec.choices) if spec is not None and spec.type == "enum" else None
                dom = _EqDomain(universe)
            domains[lit.var] = dom
        dom.add(lit.op, lit.value)
    return domains, opaque


def satisfiable(c: Condition, types=None) -> bool:
    """False only when some variable's constraints are contradictory.

    Literals comparing two variables are assumed satisfiable.
    """
    domains, _ = _domains(c, types)
    return not any(d.empty() for d in domains.values())


def implies(a: Condition, b: Condition, types: Mapping[str, VarSpec | str] | WorldState | None = None) -> bool:
    """Decide whether every valuation satisfying ``a`` also satisfies ``b``.

    Without ``types`` numeric variables range over the reals, which keeps the
    answer sound for integer variables too; pass declarations to get the
    exact integer/enum answer.
    """
    dom_a, opaque_a = _domains(a, types)
    dom_b, opaque_b = _domains(b, types)
    if any(d.empty() for d in dom_a.values()):
        return True
    if not opaque_b <= opaque_a:
        return False
    for var, db in dom_b.items():
        da = dom_a.get(var)
        if da is None:
            da = type(db)() if isinstance(db, _NumDomain) else _EqDomain(db.universe)
            if isinstance(db, _NumDomain):
                da.integral = db.integral
        elif type(da) is not type(db) or (
            isinstance(da, _EqDomain) and (da.universe is None) != (db.universe is None)
        ):
            raise TypeMismatch(var, "same type in both conditions", "different")
        if not da.subset_of(db):
            return False
    return True


def conditions_equivalent(a: Condition, b: Condition, types=None) -> bool:
    return implies(a, b, types) and implies(b, a, types)


def condition_from(value: Condition | str) -> Condition:
    return value if isinstance(value, Condition) else parse_condition(value)


def variables_of(conditions: Iterable[Condition]) -> set[str]:
    out: set[str] = set()
    for c in conditions:
        out |= c.variables
    return out
