"""Core model for latency-sensitive trigger-condition-action rules.

A rule couples an edge-detected trigger predicate with two condition sets
(checked at trigger time and at action time), a delay measured in discrete
base steps, and a non-empty list of attribute assignments.  Assignments may
be *extended*: the written value is held for a duration and then a terminal
assignment runs.  ``normalize_ruleset`` rewrites delays and extended actions
into timer-linked sub-rules so every downstream stage sees delay-free rules
only.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterator, Mapping, Optional, Sequence, Union

from .errors import AnalysisLimitError, RuleError, SourceLoc

# Timers rest at this value when not armed; they count down to 0 otherwise.
TIMER_IDLE = -1

CYBER = "<cyber>"  # subject name for platform-level attributes such as time


class Kind(Enum):
    IMMEDIATE = "immediate"
    TARDY = "tardy"


class Flavor(Enum):
    EVENT = "event"
    STATE = "state"


class TimerRole(Enum):
    DELAY = "delay"      # trigger-to-action latency timer
    EXTENDED = "extended"  # held-action duration timer


# --------------------------------------------------------------------------
# domains

@dataclass(frozen=True)
class BoolDomain:
    def values(self) -> tuple:
        return (False, True)

    def __contains__(self, v) -> bool:
        return isinstance(v, bool)


@dataclass(frozen=True)
class EnumDomain:
    labels: tuple[str, ...]

    def __post_init__(self):
        if not self.labels:
            raise RuleError("enum domain needs at least one label")
        if len(set(self.labels)) != len(self.labels):
            raise RuleError(f"enum domain has duplicate labels: {self.labels}")

    def values(self) -> tuple:
        return self.labels

    def __contains__(self, v) -> bool:
        return v in self.labels


@dataclass(frozen=True)
class IntDomain:
    lo: int
    hi: int
    unit: str = ""

    def __post_init__(self):
        if self.lo > self.hi:
            raise RuleError(f"int domain has min {self.lo} > max {self.hi}")

    def values(self) -> range:
        return range(self.lo, self.hi + 1)

    def __contains__(self, v) -> bool:
        return isinstance(v, int) and not isinstance(v, bool) and self.lo <= v <= self.hi


Domain = Union[BoolDomain, EnumDomain, IntDomain]


@dataclass(frozen=True)
class SubjectId:
    """A device (with capability names) or the cyber platform itself."""

    name: str
    capabilities: tuple[str, ...] = ()

    @property
    def is_cyber(self) -> bool:
        return self.name == CYBER


@dataclass(frozen=True)
class AttributeDecl:
    """One attribute of a subject, e.g. ``heater.switch``.

    ``name`` is the fully qualified form used everywhere downstream
    (``device.attribute``, or a bare name for cyber attributes).
    """

    name: str
    subject: SubjectId
    kind: Kind
    domain: Domain

    def __post_init__(self):
        if self.kind is Kind.TARDY and not isinstance(self.domain, IntDomain):
            raise RuleError(
                f"attribute {self.name}: tardy evolution is only defined for "
                f"integer domains"
            )


# --------------------------------------------------------------------------
# predicates

@dataclass(frozen=True)
class ParamRef:
    """A deployment preference referenced inside an expression or value."""

    name: str


@dataclass(frozen=True)
class Revert:
    """Terminal marker: restore the attribute value captured when the
    extended action started."""


ORDERED_OPS = ("<", "<=", ">", ">=")
EQUALITY_OPS = ("=", "!=")
ALL_OPS = EQUALITY_OPS + ORDERED_OPS

Value = Union[bool, int, str, ParamRef, Revert]


@dataclass(frozen=True)
class Atom:
    attr: str
    op: str
    value: Value

    def __post_init__(self):
        if self.op not in ALL_OPS:
            raise RuleError(f"unknown comparison operator {self.op!r}")


@dataclass(frozen=True)
class Lit:
    """Boolean constant; appears in machine guards, never in rule files."""

    value: bool


@dataclass(frozen=True)
class Not:
    child: "Expr"


@dataclass(frozen=True)
class And:
    parts: tuple["Expr", ...]


@dataclass(frozen=True)
class Or:
    parts: tuple["Expr", ...]


Expr = Union[Atom, Lit, Not, And, Or]


@dataclass(frozen=True)
class Predicate:
    expr: Expr
    flavor: Flavor = Flavor.STATE


def atoms(expr: Expr) -> Iterator[Atom]:
    if isinstance(expr, Atom):
        yield expr
    elif isinstance(expr, Lit):
        return
    elif isinstance(expr, Not):
        yield from atoms(expr.child)
    elif isinstance(expr, (And, Or)):
        for p in expr.parts:
            yield from atoms(p)
    else:
        raise TypeError(f"not an expression node: {expr!r}")


def expr_attrs(expr: Expr) -> set[str]:
    return {a.attr for a in atoms(expr)}


def expr_params(expr: Expr) -> set[str]:
    return {a.value.name for a in atoms(expr) if isinstance(a.value, ParamRef)}


_OPS = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def eval_expr(expr: Expr, env: Mapping[str, object]) -> bool:
    """Evaluate over a total assignment; parameters are looked up under
    their ``$name`` key."""
    if isinstance(expr, Atom):
        rhs = expr.value
        if isinstance(rhs, ParamRef):
            rhs = env["$" + rhs.name]
        return _OPS[expr.op](env[expr.attr], rhs)
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, Not):
        return not eval_expr(expr.child, env)
    if isinstance(expr, And):
        return all(eval_expr(p, env) for p in expr.parts)
    if isinstance(expr, Or):
        return any(eval_expr(p, env) for p in expr.parts)
    raise TypeError(f"not an expression node: {expr!r}")


def canonical(expr: Expr):
    """Structural key with commutative children sorted; used for syntactic
    trigger comparison."""
    if isinstance(expr, Atom):
        v = expr.value
        vkey = ("$", v.name) if isinstance(v, ParamRef) else (type(v).__name__, v)
        return ("atom", expr.attr, expr.op, vkey)
    if isinstance(expr, Lit):
        return ("lit", expr.value)
    if isinstance(expr, Not):
        return ("not", canonical(expr.child))
    if isinstance(expr, (And, Or)):
        tag = "and" if isinstance(expr, And) else "or"
        flat = []
        for p in expr.parts:
            key = canonical(p)
            if key[0] == tag:  # flatten nested conjunction/disjunction
                flat.extend(key[1])
            else:
                flat.append(key)
        uniq = sorted(set(flat), key=repr)
        if len(uniq) == 1:
            return uniq[0]
        return (tag, tuple(uniq))
    raise TypeError(f"not an expression node: {expr!r}")


def subst_attrs(expr: Expr, mapping: Mapping[str, str]) -> Expr:
    """Rename attribute names; atoms on unmapped names pass through."""
    if isinstance(expr, Atom):
        new = mapping.get(expr.attr)
        return expr if new is None else replace(expr, attr=new)
    if isinstance(expr, Lit):
        return expr
    if isinstance(expr, Not):
        return Not(subst_attrs(expr.child, mapping))
    if isinstance(expr, And):
        return And(tuple(subst_attrs(p, mapping) for p in expr.parts))
    if isinstance(expr, Or):
        return Or(tuple(subst_attrs(p, mapping) for p in expr.parts))
    raise TypeError(f"not an expression node: {expr!r}")


def expr_to_str(expr: Expr, _parent: str = "") -> str:
    """Render in the rule-file surface syntax."""
    if isinstance(expr, Atom):
        v = expr.value
        if isinstance(v, ParamRef):
            vs = "$" + v.name
        elif isinstance(v, bool):
            vs = "true" if v else "false"
        else:
            vs = str(v)
        return f"{expr.attr} {expr.op} {vs}"
    if isinstance(expr, Lit):
        return "true" if expr.value else "false"
    if isinstance(expr, Not):
        return f"not ({expr_to_str(expr.child)})"
    if isinstance(expr, And):
        body = " and ".join(
            f"({expr_to_str(p)})" if isinstance(p, Or) else expr_to_str(p)
            for p in expr.parts
        )
        return body
    if isinstance(expr, Or):
        return " or ".join(expr_to_str(p) for p in expr.parts)
    raise TypeError(f"not an expression node: {expr!r}")


# --------------------------------------------------------------------------
# assignments and rules

@dataclass(frozen=True)
class Extended:
    duration: Union[int, ParamRef]
    terminal: "Assignment"


@dataclass(frozen=True)
class Assignment:
    target: str
    value: Value
    extended: Optional[Extended] = None

    def __post_init__(self):
        if self.extended is not None:
            term = self.extended.terminal
            if term.target != self.target:
                raise RuleError(
                    f"extended action on {self.target}: terminal must write the "
                    f"same attribute, got {term.target}"
                )
            if term.extended is not None:
                raise RuleError("terminal assignment cannot itself be extended")
            dur = self.extended.duration
            if isinstance(dur, int) and dur < 1:
                raise RuleError(
                    f"extended action on {self.target}: duration must be >= 1 "
                    f"step, got {dur}"
                )


@dataclass(frozen=True)
class Rule:
    """A delay-annotated rule; after normalization ``latency`` is always 0
    and no assignment carries an ``extended`` part.

    ``origin`` names the source rule a sub-rule was split from; ``arms``
    lists the ids of timeout sub-rules this rule arms (the cyber-connection
    link); ``timer`` names the countdown this rule consumes, when its
    trigger is a timer-expiry atom.
    """

    id: str
    trigger: Predicate
    trigger_conditions: tuple[Predicate, ...]
    action_conditions: tuple[Predicate, ...]
    latency: Union[int, ParamRef]
    actions: tuple[Assignment, ...]
    origin: str = ""
    arms: tuple[str, ...] = ()
    timer: Optional[str] = None
    source: Optional[SourceLoc] = None

    def __post_init__(self):
        if not self.actions:
            raise RuleError(f"rule {self.id}: action list is empty", self.source)
        if isinstance(self.latency, int) and self.latency < 0:
            raise RuleError(
                f"rule {self.id}: negative latency {self.latency}", self.source
            )
        if self.trigger.flavor is Flavor.EVENT:
            n = sum(1 for _ in atoms(self.trigger.expr))
            if n != 1:
                raise RuleError(
                    f"rule {self.id}: event trigger must be a single atom",
                    self.source,
                )
        for c in self.trigger_conditions + self.action_conditions:
            if c.flavor is not Flavor.STATE:
                raise RuleError(
                    f"rule {self.id}: conditions must be state predicates",
                    self.source,
                )

    @property
    def source_id(self) -> str:
        return self.origin or self.id

    def predicates(self) -> tuple[Predicate, ...]:
        return (self.trigger,) + self.trigger_conditions + self.action_conditions

    def read_attrs(self) -> set[str]:
        out: set[str] = set()
        for p in self.predicates():
            out |= expr_attrs(p.expr)
        return out

    def written_attrs(self) -> set[str]:
        out = set()
        for a in self.actions:
            out.add(a.target)
            if a.extended is not None:
                out.add(a.extended.terminal.target)
        return out


@dataclass(frozen=True)
class TimerVar:
    name: str
    owner: str
    timeout: Union[int, ParamRef]
    role: TimerRole

    def __post_init__(self):
        if isinstance(self.timeout, int) and self.timeout < 1:
            raise RuleError(f"timer {self.name}: timeout must be >= 1")


def timer_expiry(timer: str) -> Predicate:
    return Predicate(Atom(timer, "=", 0), Flavor.STATE)


# --------------------------------------------------------------------------
# latency normalization

def normalize_latency(rule: Rule) -> tuple[list[Rule], list[TimerVar]]:
    """Split one rule into delay-free sub-rules.

    A positive latency becomes an arming rule plus a timeout rule; every
    extended action keeps its start assignment on the carrying rule, arms a
    hold timer there, and adds a timeout rule running the terminal.
    """
    if rule.timer is not None:
        # already a timeout sub-rule; nothing to do
        return [rule], []

    timers: list[TimerVar] = []
    out: list[Rule] = []
    lat = rule.latency
    has_latency = isinstance(lat, ParamRef) or lat > 0

    if has_latency:
        delay = TimerVar(f"{rule.id}@delay", rule.id, lat, TimerRole.DELAY)
        timers.append(delay)
        run_id = f"{rule.id}@run"
        arm = Rule(
            id=f"{rule.id}@arm",
            trigger=rule.trigger,
            trigger_conditions=rule.trigger_conditions,
            action_conditions=(),
            latency=0,
            actions=(Assignment(delay.name, lat),),
            origin=rule.id,
            arms=(run_id,),
            source=rule.source,
        )
        carrier = Rule(
            id=run_id,
            trigger=timer_expiry(delay.name),
            trigger_conditions=(),
            action_conditions=rule.action_conditions,
            latency=0,
            actions=rule.actions,
            origin=rule.id,
            timer=delay.name,
            source=rule.source,
        )
        out.append(arm)
    else:
        carrier = rule

    # unfold extended actions on the carrier
    plain_actions: list[Assignment] = []
    tails: list[Rule] = []
    for i, act in enumerate(carrier.actions):
        if act.extended is None:
            plain_actions.append(act)
            continue
        hold = TimerVar(
            f"{carrier.id}@hold{i}", carrier.source_id or carrier.id,
            act.extended.duration, TimerRole.EXTENDED,
        )
        timers.append(hold)
        plain_actions.append(Assignment(act.target, act.value))
        dur = act.extended.duration
        plain_actions.append(Assignment(hold.name, dur))
        tails.append(
            Rule(
                id=f"{carrier.id}@end{i}",
                trigger=timer_expiry(hold.name),
                trigger_conditions=(),
                action_conditions=(),
                latency=0,
                actions=(act.extended.terminal,),
                origin=carrier.source_id or carrier.id,
                timer=hold.name,
                source=carrier.source,
            )
        )
    if tails:
        carrier = replace(
            carrier,
            actions=tuple(plain_actions),
            arms=carrier.arms + tuple(t.id for t in tails),
        )
    out.append(carrier)
    out.extend(tails)
    return out, timers


def normalize_ruleset(rules: Sequence[Rule]) -> tuple[list[Rule], list[TimerVar]]:
    seen = set()
    for r in rules:
        if r.id in seen:
            raise RuleError(f"duplicate rule id {r.id}", r.source)
        seen.add(r.id)
    out: list[Rule] = []
    timers: list[TimerVar] = []
    for r in rules:
        rs, ts = normalize_latency(r)
        out.extend(rs)
        timers.extend(ts)
    return out, timers


# --------------------------------------------------------------------------
# pairwise relations

def conflicting(a: Assignment, b: Assignment) -> bool:
    """Two assignments to the same attribute with different values."""
    return a.target == b.target and a.value != b.value


def _rep_values(domain: Domain, constants: set[int]):
    """Representative sample that decides satisfiability of interval/equality
    constraints exactly: both domain ends plus each constant and its
    neighbours."""
    if isinstance(domain, BoolDomain):
        return [False, True]
    if isinstance(domain, EnumDomain):
        return list(domain.labels)
    pts = {domain.lo, domain.hi}
    for c in constants:
        for v in (c - 1, c, c + 1):
            if domain.lo <= v <= domain.hi:
                pts.add(v)
    return sorted(pts)


def satisfiable(
    exprs: Sequence[Expr],
    attrs: Mapping[str, AttributeDecl],
    params: Mapping[str, Sequence] | None = None,
    fixed: Mapping[str, object] | None = None,
    limit: int = 200_000,
) -> bool:
    """True when some joint assignment satisfies every expression at once.

    Decided exactly by enumerating representative values per attribute axis
    (interval constraints over independent axes: the representatives hit
    every region).  ``fixed`` pins attributes (or ``$param`` keys) to single
    values.  Raises :class:`AnalysisLimitError` when the joint space exceeds
    ``limit``.  An empty expression list is trivially satisfiable.
    """
    params = params or {}
    fixed = fixed or {}
    if not exprs:
        return True

    names: list[str] = []
    consts: dict[str, set[int]] = {}
    pnames: set[str] = set()
    for e in exprs:
        for a in atoms(e):
            if a.attr not in attrs:
                raise RuleError(f"predicate references unknown attribute {a.attr}")
            if a.attr not in consts:
                names.append(a.attr)
                consts[a.attr] = set()
            if isinstance(a.value, ParamRef):
                pnames.add(a.value.name)
                for v in params.get(a.value.name, ()):
                    if isinstance(v, int):
                        consts[a.attr].add(v)
            elif isinstance(a.value, int) and not isinstance(a.value, bool):
                consts[a.attr].add(a.value)

    axes: list[tuple[str, list]] = []
    for n in names:
        if n in fixed:
            axes.append((n, [fixed[n]]))
        else:
            axes.append((n, list(_rep_values(attrs[n].domain, consts[n]))))
    for pn in sorted(pnames):
        key = "$" + pn
        if key in fixed:
            axes.append((key, [fixed[key]]))
            continue
        if pn not in params:
            raise RuleError(f"predicate references unknown preference ${pn}")
        axes.append((key, list(params[pn])))

    total = 1
    for n, vs in axes:
        total *= len(vs)
        if total > limit:
            raise AnalysisLimitError(
                f"satisfiability enumeration over {n} exceeds {limit} joint "
                f"values; shrink the domain or split the rules"
            )

    keys = [n for n, _ in axes]
    for combo in itertools.product(*(vs for _, vs in axes)):
        env = dict(zip(keys, combo))
        if all(eval_expr(e, env) for e in exprs):
            return True
    return False


def sibling_conditions(
    conds_i: Sequence[Predicate],
    conds_j: Sequence[Predicate],
    attrs: Mapping[str, AttributeDecl],
    params: Mapping[str, Sequence] | None = None,
    limit: int = 200_000,
) -> bool:
    """True when the two condition sets are not mutually exclusive, i.e.
    some joint attribute assignment satisfies both conjunctions.  Empty
    condition sets are trivially compatible.
    """
    exprs = [p.expr for p in tuple(conds_i) + tuple(conds_j)]
    return satisfiable(exprs, attrs, params, limit=limit)


def sibling_rules(
    r_i: Rule,
    r_j: Rule,
    attrs: Mapping[str, AttributeDecl],
    params: Mapping[str, Sequence] | None = None,
) -> bool:
    """Same trigger (syntactically, after canonicalization) and compatible
    condition sets."""
    if canonical(r_i.trigger.expr) != canonical(r_j.trigger.expr):
        return False
    return sibling_conditions(
        r_i.trigger_conditions + r_i.action_conditions,
        r_j.trigger_conditions + r_j.action_conditions,
        attrs,
        params,
    )
