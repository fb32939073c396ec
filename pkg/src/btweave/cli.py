"""Command-line entry point: ``btweave <subcommand> ...``.

Traces and documents go to stdout, diagnostics to stderr. Exit status is 0
on success, 1 when the check or run reports a problem, 2 on usage or input
errors.
"""

from __future__ import annotations

import argparse
import itertools
import sys
from pathlib import Path

from . import __version__
from .backchain import DEFAULT_MAX_DEPTH, backchain
from .bt import SUCCESS, TickTrace, check_fts
from .btsync import RoleFormatError, builtin_roles, check_protocol, load_role_pair
from .dsl import (
    Document, TreeDecl, build_actions, build_deployment, build_registry, build_tree, host_world,
    node_decl, parse_document, print_document,
)
from .errors import BtweaveError, ConditionSyntaxError, DslSyntaxError, ResolutionError
from .plant import OperatorPrompt, demo_actions
from .runtime import check_host_composition, run_deployment, validate_topology
from .worldmodel import VarRef, WorldState, parse_condition

OK, FINDINGS, USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _load(path: str) -> Document:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    try:
        return parse_document(text)
    except DslSyntaxError as exc:
        raise UsageError(f"{path}:{exc}") from None
    except ResolutionError as exc:
        raise UsageError("\n".join(f"{path}:{d}" for d in exc.diagnostics)) from None


def _value(text: str):
    """Parse a command-line value with the condition-language literal syntax."""
    try:
        lit = parse_condition(f"v == {text}").literals[0]
    except ConditionSyntaxError:
        raise UsageError(f"cannot parse value {text!r}") from None
    return lit.value.name if isinstance(lit.value, VarRef) else lit.value


def _assignment(text: str) -> tuple[str, str, object]:
    """``host.var=value`` -> (host, var, value); host may be empty."""
    target, sep, raw = text.partition("=")
    if not sep or not target:
        raise UsageError(f"expected name=value, got {text!r}")
    host, _, var = target.rpartition(".")
    return host, var, _value(raw)


def split_goal(text: str) -> list[str]:
    """Split ``c1,c2`` on commas outside quoted strings."""
    parts, buf, quote = [], [], None
    for ch in text:
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == ",":
            parts.append("".join(buf))
            buf = []
            continue
        buf.append(ch)
    parts.append("".join(buf))
    return [p.strip() for p in parts if p.strip()]


# ---------------------------------------------------------------------------
# Subcommands


def cmd_validate(args, out, err) -> int:
    doc = _load(args.file)
    status = OK
    proto = check_protocol()
    out.write(f"protocol: {'consistent' if proto.consistent else 'inconsistent'}\n")
    if not proto.consistent:
        status = FINDINGS
    for decl in doc.deployments:
        d = build_deployment(doc, decl.name)
        report = validate_topology(d)
        out.write(f"deployment {decl.name}: {'topology ok' if report.ok else 'topology violations'}\n")
        for v in report.violations:
            err.write(f"{args.file}: {decl.name}: {v}\n")
        if not report.ok:
            status = FINDINGS
            continue
        for name, rep in check_host_composition(d).items():
            verdict = "consistent" if rep.consistent else "inconsistent"
            out.write(f"  composition {name}: {verdict} ({rep.states} states)\n")
            for f in rep.findings:
                err.write(f"{args.file}: {name}: {f.describe()}\n")
            if not rep.consistent:
                status = FINDINGS
    out.write(f"{len(doc.skills)} skills, {len(doc.trees)} trees, {len(doc.goals)} goals, "
              f"{len(doc.deployments)} deployments\n")
    return status


def cmd_plan(args, out, err) -> int:
    doc = _load(args.file)
    max_depth = args.max_depth
    refine_inv = args.refine_invariants
    if args.goal is not None:
        try:
            goal = [parse_condition(c) for c in split_goal(args.goal)]
        except ConditionSyntaxError as exc:
            raise UsageError(f"--goal: {exc}") from None
    elif doc.goals:
        g = doc.goal(args.goal_name) if args.goal_name else doc.goals[0]
        if g is None:
            raise UsageError(f"no goal named {args.goal_name!r}")
        goal = g.conditions
        max_depth = max_depth or g.max_depth
        refine_inv = refine_inv or g.refine_invariants
    else:
        raise UsageError("give --goal or declare a goal in the file")
    if not goal:
        raise UsageError("the goal has no conditions")
    plan = backchain(goal, build_registry(doc), max_depth or DEFAULT_MAX_DEPTH, refine_invariants=refine_inv)
    for line in plan.report().splitlines():
        out.write(f"# {line}\n")
    # the actions the tree calls go along so the output parses on its own
    used = {n.target for n in node_decl(plan.root).walk() if n.kind == "action"}
    actions = [a for a in doc.actions if a.name in used]
    out.write(print_document(Document(actions=actions, trees=[TreeDecl(args.name, node_decl(plan.root))])))
    for gid in plan.unrefined_goals:
        err.write(f"unrefined goal {gid}: \"{plan.unrefined[gid]}\"\n")
    return FINDINGS if plan.unrefined_goals else OK


def _hooks(args):
    events: dict[int, list] = {}
    for text in args.inject or ():
        body, sep, at = text.rpartition("@")
        if not sep or not at.isdigit():
            raise UsageError(f"--inject expects host.var=value@tick, got {text!r}")
        events.setdefault(int(at), []).append(_assignment(body))

    def hook(k, d):
        for host, var, value in events.get(k, ()):
            d.hosts[host].world[var] = value

    return [hook] if events else []


def cmd_run(args, out, err) -> int:
    doc = _load(args.file)
    if not doc.deployments:
        raise UsageError(f"{args.file} declares no deployment")
    if args.answers:
        try:
            answers = Path(args.answers).read_text(encoding="utf-8").split()
        except OSError as exc:
            raise UsageError(f"{args.answers}: {exc.strerror}") from None
        prompt = OperatorPrompt(answers=answers)
    else:
        prompt = OperatorPrompt(out=err)
    d = build_deployment(doc, args.deployment, demo_actions(prompt))
    for text in args.set or ():
        host, var, value = _assignment(text)
        if host not in d.hosts:
            raise UsageError(f"--set: unknown host {host!r}")
        d.hosts[host].world[var] = value
    report = validate_topology(d)
    if not report.ok:
        for v in report.violations:
            err.write(f"{args.file}: {v}\n")
        return FINDINGS
    trace = TickTrace()
    result = run_deployment(d, args.mode, args.max_ticks, trace=trace, hooks=_hooks(args),
                            delay=args.delay, jitter=args.jitter, seed=args.seed,
                            crashed=args.crash or (), transport=args.transport, validate=False)
    if args.format == "trace":
        out.write(trace.format())
    else:
        for k, status in enumerate(result.statuses):
            out.write(f"k={k} root={d.root} status={status.letter}\n")
    for failure in result.failures:
        err.write(f"transport failure on {failure.link}\n")
    err.write(f"root {d.root} finished with {result.status.letter} after {result.ticks} ticks\n")
    return OK if result.status is SUCCESS else FINDINGS


def cmd_check_protocol(args, out, err) -> int:
    if args.roles:
        try:
            parent, child = load_role_pair(Path(args.roles).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"{args.roles}: {exc.strerror}") from None
        except RoleFormatError as exc:
            raise UsageError(f"{args.roles}: {exc}") from None
    else:
        parent, child = builtin_roles()
    try:
        report = check_protocol(parent, child)
    except BtweaveError as exc:
        err.write(f"{exc}\n")
        return FINDINGS
    out.write(report.format())
    return OK if report.consistent else FINDINGS


def _grid(spec: str, types: dict) -> tuple[str, list]:
    var, sep, rng = spec.partition("=")
    if not sep:
        raise UsageError(f"--grid expects var=lo:hi[:step] or var=bool, got {spec!r}")
    if rng == "bool":
        return var, [False, True]
    parts = rng.split(":")
    if len(parts) not in (2, 3):
        raise UsageError(f"--grid expects var=lo:hi[:step], got {spec!r}")
    lo, hi = float(parts[0]), float(parts[1])
    step = float(parts[2]) if len(parts) == 3 else 1.0
    if step <= 0 or hi < lo:
        raise UsageError(f"--grid range is empty: {spec!r}")
    n = int(round((hi - lo) / step)) + 1
    values = [lo + i * step for i in range(n)]
    if types.get(var) == "int":
        values = [int(v) for v in values]
    return var, values


def cmd_fts(args, out, err) -> int:
    doc = _load(args.file)
    try:
        root = build_tree(doc, args.tree)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    base = WorldState()
    if "." in args.tree:
        host, _, _ = args.tree.partition(".")
        for dep in doc.deployments:
            for h in dep.hosts:
                if h.name == host:
                    base = host_world(h)
    for text in args.set or ():
        _, var, value = _assignment(text)
        if var in base:
            base[var] = value
        else:
            base.declare(var, type(value).__name__.replace("float", "real"), value)
    types = {name: spec.type for name, spec in base.specs.items()}
    grids = [_grid(g, types) for g in args.grid or ()]
    for var, values in grids:
        # a top-level tree has no host world, so the grid declares its variables
        if var not in base:
            base.declare(var, "bool" if isinstance(values[0], bool) else "real", values[0])
    states = []
    for combo in itertools.product(*(values for _, values in grids)):
        w = base.copy()
        for (var, _), value in zip(grids, combo):
            w[var] = value
        states.append(w)
    actions = build_actions(doc, demo_actions(OperatorPrompt(answers=[])))
    report = check_fts(root, states, args.bound, actions, resolver=build_registry(doc).resolver(actions))
    out.write(report.summary() + "\n")
    for w in report.violations:
        out.write("  violating: " + " ".join(f"{k}={v!r}" for k, v in w.items()) + "\n")
    return OK if report.holds else FINDINGS


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="btweave", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"btweave {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse a file and check topology and protocol composition")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate)

    pl = sub.add_parser("plan", help="backchain a goal into a tree and print it")
    pl.add_argument("file")
    pl.add_argument("--goal", help='comma-separated conditions, e.g. "pos == 100,power == true"')
    pl.add_argument("--goal-name", help="use a goal declared in the file")
    pl.add_argument("--max-depth", type=int)
    pl.add_argument("--refine-invariants", action="store_true")
    pl.add_argument("--name", default="plan", help="name of the emitted tree")
    pl.set_defaults(func=cmd_plan)

    r = sub.add_parser("run", help="execute a deployment and print its tick trace")
    r.add_argument("file")
    r.add_argument("--deployment")
    r.add_argument("--mode", choices=("lockstep", "async"), default="lockstep")
    r.add_argument("--transport", choices=("sim", "socket"), default="sim")
    r.add_argument("--max-ticks", type=int, default=1000)
    r.add_argument("--answers", help="file with one operator answer per line")
    r.add_argument("--seed", type=int, default=0, help="seed for async message jitter")
    r.add_argument("--delay", type=int, default=1, help="async message delay in ticks")
    r.add_argument("--jitter", type=int, default=0, help="extra random async delay in ticks")
    r.add_argument("--set", action="append", metavar="HOST.VAR=VALUE")
    r.add_argument("--inject", action="append", metavar="HOST.VAR=VALUE@TICK")
    r.add_argument("--crash", action="append", metavar="HOST", help="host that drops every message (async)")
    r.add_argument("--format", choices=("trace", "text"), default="trace")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check-protocol", help="consistency report for a role pair")
    c.add_argument("roles", nargs="?", help="roles file; defaults to the builtin pair")
    c.set_defaults(func=cmd_check_protocol)

    f = sub.add_parser("fts", help="empirical finite-time-success check of one tree")
    f.add_argument("file")
    f.add_argument("--tree", required=True, help="top-level tree name or host.tree")
    f.add_argument("--bound", type=int, required=True)
    f.add_argument("--grid", action="append", metavar="VAR=LO:HI[:STEP]|VAR=bool")
    f.add_argument("--set", action="append", metavar="VAR=VALUE")
    f.set_defaults(func=cmd_fts)
    return p


def main(argv: list[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE
    try:
        return args.func(args, out, err)
    except UsageError as exc:
        err.write(f"btweave: {exc}\n")
        return USAGE
    except (BtweaveError, ValueError, KeyError) as exc:
        err.write(f"btweave: {exc}\n")
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
