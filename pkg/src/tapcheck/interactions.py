"""Channel and connection structure, dependency edges, and syntactic
screening for rule-interaction threats.

The screening side (``detect_threats``) works on the original rules, where
delays and extended actions are still visible.  The dependency side
(``build_expression_deps`` / ``build_rule_deps``) works on normalized rules
and feeds the slicer.  Candidates start out ``syntactic``; the checker is
responsible for upgrading them to ``confirmed`` or ``refuted``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

from .errors import RuleError
from .ir import (
    Assignment,
    AttributeDecl,
    Atom,
    IntDomain,
    Kind,
    ParamRef,
    Predicate,
    Revert,
    Rule,
    Value,
    atoms,
    canonical,
    conflicting,
    expr_attrs,
    expr_to_str,
    satisfiable,
    sibling_conditions,
    sibling_rules,
)
from .ir import And, Not, Or

# candidate statuses
SYNTACTIC = "syntactic"
CONFIRMED = "confirmed"
REFUTED = "refuted"

VIA_DIRECT = "direct"


class Direction(Enum):
    RAISE = "raise"
    LOWER = "lower"
    SET = "set"


@dataclass(frozen=True)
class Affect:
    """One physical cause: while ``cause_attr = cause_value`` holds, the
    channel attribute drifts in ``direction`` (or, for Set, converges to /
    jumps to ``set_value``)."""

    cause_attr: str
    cause_value: Value
    direction: Direction
    set_value: Optional[Value] = None

    def __post_init__(self):
        if (self.direction is Direction.SET) != (self.set_value is not None):
            raise RuleError(
                f"affect on {self.cause_attr}: set needs a target value, "
                f"raise/lower must not carry one"
            )


@dataclass(frozen=True)
class ChannelDecl:
    """A shared physical attribute written indirectly by device actions."""

    attribute: str
    kind: Kind
    latency: int = 1  # steps before a tardy cause first moves the value
    affects: tuple[Affect, ...] = ()

    def __post_init__(self):
        if self.kind is Kind.TARDY and self.latency < 1:
            raise RuleError(
                f"channel {self.attribute}: tardy latency must be >= 1 step"
            )


class OfflinePolicy(Enum):
    DISABLE_RULES = "disable"
    LAST_MEASUREMENT = "last"


@dataclass(frozen=True)
class ConnectionDecl:
    """Child subjects are powered through a parent device: when the parent's
    power attribute leaves ``on_value``, the children go offline."""

    parent: str
    power_attr: str
    on_value: Value
    children: tuple[str, ...]
    policy: OfflinePolicy = OfflinePolicy.DISABLE_RULES

    def __post_init__(self):
        if self.parent in self.children:
            raise RuleError(
                f"connection under {self.parent}: parent listed as its own child"
            )
        if len(set(self.children)) != len(self.children):
            raise RuleError(f"connection under {self.parent}: duplicate children")


def connection_closure(
    connections: Sequence[ConnectionDecl],
) -> dict[str, set[str]]:
    """Map each parent subject to all transitively powered child subjects.

    Validates that no child hangs under two parents and that the power graph
    is acyclic (a parent may itself be powered through another connection).
    """
    direct: dict[str, set[str]] = {}
    parent_of: dict[str, str] = {}
    for co in connections:
        direct.setdefault(co.parent, set())
        for c in co.children:
            if c in parent_of and parent_of[c] != co.parent:
                raise RuleError(
                    f"subject {c} is powered by both {parent_of[c]} and {co.parent}"
                )
            parent_of[c] = co.parent
            direct[co.parent].add(c)

    closure: dict[str, set[str]] = {}

    def expand(p: str, stack: tuple[str, ...]) -> set[str]:
        if p in stack:
            cyc = " -> ".join(stack + (p,))
            raise RuleError(f"connection graph has a cycle: {cyc}")
        if p in closure:
            return closure[p]
        out = set(direct.get(p, ()))
        for c in direct.get(p, ()):
            out |= expand(c, stack + (p,))
        closure[p] = out
        return out

    for p in direct:
        expand(p, ())
    return closure


def ancestor_chain(
    subject: str, connections: Sequence[ConnectionDecl]
) -> list[ConnectionDecl]:
    """Connections powering ``subject``, nearest parent first."""
    parent_of: dict[str, ConnectionDecl] = {}
    for co in connections:
        for c in co.children:
            parent_of[c] = co
    chain: list[ConnectionDecl] = []
    cur = subject
    while cur in parent_of:
        co = parent_of[cur]
        chain.append(co)
        cur = co.parent
        if len(chain) > len(connections):
            raise RuleError(f"connection graph has a cycle involving {subject}")
    return chain


# --------------------------------------------------------------------------
# dependency edges

@dataclass(frozen=True)
class ExprDep:
    """A constraint ``pred`` (owned by rule ``rule``) reads attribute
    ``attr`` that some rule can write, directly or through a channel."""

    attr: str
    pred: Predicate
    rule: str


@dataclass(frozen=True)
class DependencyEdge:
    """``source``'s actions can influence a constraint of ``sink``.

    ``via`` is ``"direct"``, ``"channel:<attr>"`` or ``"connection:<parent>"``;
    ``pred`` carries the justifying constraint where one exists.
    """

    source: str
    sink: str
    via: str
    pred: Optional[Predicate] = None


def _affect_matches(action: Assignment, affect: Affect) -> bool:
    return (
        action.target == affect.cause_attr and action.value == affect.cause_value
    )


def _channel_writers(
    rules: Sequence[Rule], channels: Sequence[ChannelDecl]
) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for ch in channels:
        for r in rules:
            if any(_affect_matches(a, af) for a in r.actions for af in ch.affects):
                out.setdefault(ch.attribute, []).append(r.id)
    return out


def build_expression_deps(
    rules: Sequence[Rule],
    channels: Sequence[ChannelDecl] = (),
    attributes: Mapping[str, AttributeDecl] | None = None,
) -> list[ExprDep]:
    """Collect (attribute, constraint) pairs where the attribute is writable
    by some rule action, directly or through a channel affect.

    Timer variables are excluded (their arm/run links are added as direct
    rule edges instead); pass ``attributes`` to make the cut explicit,
    otherwise any written name counts.
    """
    written: set[str] = set()
    for r in rules:
        for a in r.actions:
            if attributes is None or a.target in attributes:
                written.add(a.target)
    written |= set(_channel_writers(rules, channels))

    deps: list[ExprDep] = []
    seen: set[ExprDep] = set()
    for r in rules:
        for p in r.predicates():
            for attr in sorted(expr_attrs(p.expr) & written):
                d = ExprDep(attr, p, r.id)
                if d not in seen:
                    seen.add(d)
                    deps.append(d)
    return deps


def build_rule_deps(
    rules: Sequence[Rule],
    e_e: Sequence[ExprDep],
    channels: Sequence[ChannelDecl] = (),
    connections: Sequence[ConnectionDecl] = (),
    attributes: Mapping[str, AttributeDecl] | None = None,
) -> list[DependencyEdge]:
    """Lift expression dependencies to rule-to-rule edges.

    Every writer of a dependency's attribute points at the rule owning the
    constraint.  Direct self-edges are dropped; channel self-loops stay (a
    rule may re-trigger itself through physics).  Arm links between split
    sub-rules and power-connection influences are added on top.
    """
    direct_writers: dict[str, list[str]] = {}
    for r in rules:
        for a in r.actions:
            direct_writers.setdefault(a.target, []).append(r.id)
    chan_writers = _channel_writers(rules, channels)

    edges: list[DependencyEdge] = []
    seen: set[tuple[str, str, str]] = set()

    def add(src: str, sink: str, via: str, pred: Optional[Predicate] = None):
        key = (src, sink, via)
        if key not in seen:
            seen.add(key)
            edges.append(DependencyEdge(src, sink, via, pred))

    for e in e_e:
        for src in direct_writers.get(e.attr, ()):
            if src != e.rule:
                add(src, e.rule, VIA_DIRECT, e.pred)
        for src in chan_writers.get(e.attr, ()):
            add(src, e.rule, f"channel:{e.attr}", e.pred)

    for r in rules:
        for armed in r.arms:
            add(r.id, armed, VIA_DIRECT)

    if connections and attributes is not None:
        closure = connection_closure(connections)
        subj_attrs: dict[str, set[str]] = {}
        for ad in attributes.values():
            subj_attrs.setdefault(ad.subject.name, set()).add(ad.name)
        for co in connections:
            dep_attrs: set[str] = set()
            for s in closure.get(co.parent, ()):
                dep_attrs |= subj_attrs.get(s, set())
            if not dep_attrs:
                continue
            writers = direct_writers.get(co.power_attr, ())
            for r in rules:
                used = (r.read_attrs() | r.written_attrs()) & dep_attrs
                if not used:
                    continue
                for src in writers:
                    if src != r.id:
                        add(src, r.id, f"connection:{co.parent}")
    return edges


# --------------------------------------------------------------------------
# threat candidates

@dataclass
class ThreatCandidate:
    """One syntactically matched interaction pattern between two rules.

    ``witness`` maps element names to rendered strings/values; ``status`` is
    flipped by the checker.  Identity (``key``) is independent of rule input
    order so detection output can be compared as a set.
    """

    kind: str
    rule_i: str
    rule_j: str
    witness: dict = field(default_factory=dict)
    status: str = SYNTACTIC
    note: str = ""

    @property
    def key(self):
        wit = tuple(sorted((k, str(v)) for k, v in self.witness.items()))
        return (self.kind, self.rule_i, self.rule_j, wit)


def _value_str(v: Value) -> str:
    if isinstance(v, ParamRef):
        return "$" + v.name
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, Revert):
        return "<revert>"
    return str(v)


def _assign_str(a: Assignment) -> str:
    s = f"{a.target} := {_value_str(a.value)}"
    if a.extended is not None:
        s += f" (held {_value_str(a.extended.duration)} steps)"
    return s


def _writes(rule: Rule) -> list[tuple[Assignment, bool]]:
    """All value writes a rule performs: start assignments and extended
    terminals; the flag marks terminals."""
    out: list[tuple[Assignment, bool]] = []
    for a in rule.actions:
        out.append((Assignment(a.target, a.value), False))
        if a.extended is not None:
            out.append((a.extended.terminal, True))
    return out


def _write_values(
    a: Assignment, params: Mapping[str, Sequence]
) -> list[Value]:
    """Concrete values an assignment can write; empty for revert markers."""
    if isinstance(a.value, Revert):
        return []
    if isinstance(a.value, ParamRef):
        return list(params.get(a.value.name, ()))
    return [a.value]


def _direction_satisfies(
    direction: Direction,
    atom: Atom,
    domain: IntDomain,
    params: Mapping[str, Sequence],
) -> bool:
    """Can a monotone drift in ``direction`` make ``atom`` true somewhere in
    the domain?  Over-approximate on purpose — the checker settles truth."""
    rhs = atom.value
    vals = params.get(rhs.name, ()) if isinstance(rhs, ParamRef) else [rhs]
    ints = [v for v in vals if isinstance(v, int) and not isinstance(v, bool)]
    if not ints:
        return False
    if atom.op == "!=":
        return True
    if atom.op == "=":
        return any(domain.lo <= v <= domain.hi for v in ints)
    if direction is Direction.RAISE:
        if atom.op == ">":
            return any(v < domain.hi for v in ints)
        if atom.op == ">=":
            return any(v <= domain.hi for v in ints)
        return False
    if atom.op == "<":
        return any(v > domain.lo for v in ints)
    if atom.op == "<=":
        return any(v >= domain.lo for v in ints)
    return False


def _lat_eq(a, b) -> bool:
    if isinstance(a, ParamRef) and isinstance(b, ParamRef):
        return a.name == b.name
    if isinstance(a, ParamRef) or isinstance(b, ParamRef):
        return False
    return a == b


def _equiv_triggers(
    t_i: Predicate,
    t_j: Predicate,
    attributes: Mapping[str, AttributeDecl],
    params: Mapping[str, Sequence],
) -> bool:
    """Semantic equivalence via satisfiability of the symmetric difference."""
    diff = Or(
        (
            And((t_i.expr, Not(t_j.expr))),
            And((t_j.expr, Not(t_i.expr))),
        )
    )
    return not satisfiable([diff], attributes, params)


def detect_threats(
    rules: Sequence[Rule],
    attributes: Mapping[str, AttributeDecl],
    channels: Sequence[ChannelDecl] = (),
    connections: Sequence[ConnectionDecl] = (),
    params: Mapping[str, Sequence] | None = None,
    warnings: list[str] | None = None,
) -> list[ThreatCandidate]:
    """Screen every rule pair for the seven interaction patterns.

    Works on original (pre-split) rules so latencies and extended actions
    are visible.  Output is sorted by candidate key and therefore stable
    under input reordering.
    """
    params = params or {}
    cands: list[ThreatCandidate] = []
    seen: set = set()

    def emit(kind, ri, rj, witness, note=""):
        c = ThreatCandidate(kind, ri, rj, witness, note=note)
        if c.key not in seen:
            seen.add(c.key)
            cands.append(c)

    def conds(r: Rule):
        return r.trigger_conditions + r.action_conditions

    sib_conds_cache: dict[frozenset, bool] = {}

    def sib_conds(r_i: Rule, r_j: Rule) -> bool:
        k = frozenset((r_i.id, r_j.id))
        if k not in sib_conds_cache:
            sib_conds_cache[k] = sibling_conditions(
                conds(r_i), conds(r_j), attributes, params
            )
        return sib_conds_cache[k]

    closure = connection_closure(connections) if connections else {}

    def subject_of(attr: str) -> str | None:
        ad = attributes.get(attr)
        return ad.subject.name if ad else None

    chan_by_attr = {ch.attribute: ch for ch in channels}

    for r_i in rules:
        for r_j in rules:
            if r_i.id == r_j.id:
                continue

            # T1: r_i's effects can activate r_j's trigger
            if sib_conds(r_i, r_j):
                t_attrs = expr_attrs(r_j.trigger.expr)
                for a, is_term in _writes(r_i):
                    if a.target in t_attrs:
                        hit = any(
                            satisfiable(
                                [r_j.trigger.expr],
                                attributes,
                                params,
                                fixed={a.target: v},
                            )
                            for v in _write_values(a, params)
                        )
                        if hit:
                            emit(
                                "T1",
                                r_i.id,
                                r_j.id,
                                {
                                    "action": _assign_str(a),
                                    "trigger": expr_to_str(r_j.trigger.expr),
                                    "via": VIA_DIRECT,
                                },
                            )
                    for ch in channels:
                        if ch.attribute not in t_attrs:
                            continue
                        if not any(
                            _affect_matches(a, af) for af in ch.affects
                        ):
                            continue
                        dom = attributes[ch.attribute].domain
                        hit = False
                        for af in ch.affects:
                            if not _affect_matches(a, af):
                                continue
                            if af.direction is Direction.SET:
                                hit = satisfiable(
                                    [r_j.trigger.expr],
                                    attributes,
                                    params,
                                    fixed={ch.attribute: af.set_value},
                                )
                            elif isinstance(dom, IntDomain):
                                hit = any(
                                    _direction_satisfies(
                                        af.direction, atom, dom, params
                                    )
                                    for atom in atoms(r_j.trigger.expr)
                                    if atom.attr == ch.attribute
                                )
                            if hit:
                                break
                        if hit:
                            emit(
                                "T1",
                                r_i.id,
                                r_j.id,
                                {
                                    "action": _assign_str(a),
                                    "trigger": expr_to_str(r_j.trigger.expr),
                                    "via": f"channel:{ch.attribute}",
                                    "channel_kind": ch.kind.value,
                                    "channel_latency": ch.latency,
                                },
                            )

            # T2/T3: same trigger, compatible conditions (unordered pairs)
            if r_i.id < r_j.id and sibling_rules(r_i, r_j, attributes, params):
                for a in r_i.actions:
                    if a in r_j.actions:
                        emit(
                            "T2",
                            r_i.id,
                            r_j.id,
                            {"action": _assign_str(a)},
                        )
                if _lat_eq(r_i.latency, r_j.latency):
                    for a in r_i.actions:
                        for b in r_j.actions:
                            if conflicting(a, b):
                                emit(
                                    "T3",
                                    r_i.id,
                                    r_j.id,
                                    {
                                        "action_i": _assign_str(a),
                                        "action_j": _assign_str(b),
                                    },
                                )
            elif (
                warnings is not None
                and r_i.id < r_j.id
                and canonical(r_i.trigger.expr) != canonical(r_j.trigger.expr)
                and expr_attrs(r_i.trigger.expr) == expr_attrs(r_j.trigger.expr)
                and _equiv_triggers(r_i.trigger, r_j.trigger, attributes, params)
            ):
                warnings.append(
                    f"rules {r_i.id} and {r_j.id}: triggers are semantically "
                    f"equivalent but written differently; treated as distinct"
                )

            # T4: compatible conditions, different delays, conflicting actions;
            # oriented so rule_j (the slower one) overrides rule_i
            if (
                isinstance(r_i.latency, int)
                and isinstance(r_j.latency, int)
                and r_i.latency < r_j.latency
                and sib_conds(r_i, r_j)
            ):
                for a in r_i.actions:
                    for b in r_j.actions:
                        if conflicting(a, b):
                            emit(
                                "T4",
                                r_i.id,
                                r_j.id,
                                {
                                    "action_i": _assign_str(a),
                                    "action_j": _assign_str(b),
                                    "latency_i": r_i.latency,
                                    "latency_j": r_j.latency,
                                },
                            )

            # T5: r_j can break r_i's extended action before it completes
            for a in r_i.actions:
                if a.extended is None:
                    continue
                for w, is_term in _writes(r_j):
                    if (
                        w.target == a.target
                        and not isinstance(w.value, Revert)
                        and w.value != a.value
                    ):
                        emit(
                            "T5",
                            r_i.id,
                            r_j.id,
                            {
                                "action": _assign_str(a),
                                "stopper": _assign_str(w),
                                "via": "terminal" if is_term else "action",
                                "window": a.extended.duration
                                if not isinstance(a.extended.duration, ParamRef)
                                else "$" + a.extended.duration.name,
                            },
                        )
                subj = subject_of(a.target)
                for co in connections:
                    if subj not in closure.get(co.parent, set()):
                        continue
                    for w, _ in _writes(r_j):
                        if w.target == co.power_attr and any(
                            v != co.on_value for v in _write_values(w, params)
                        ):
                            emit(
                                "T5",
                                r_i.id,
                                r_j.id,
                                {
                                    "action": _assign_str(a),
                                    "stopper": _assign_str(w),
                                    "via": "power",
                                    "window": a.extended.duration
                                    if not isinstance(
                                        a.extended.duration, ParamRef
                                    )
                                    else "$" + a.extended.duration.name,
                                },
                            )

            # T6: r_j's effects make one of r_i's action-time conditions
            # unsatisfiable
            for c in r_i.action_conditions:
                c_attrs = expr_attrs(c.expr)
                for w, _ in _writes(r_j):
                    forced = False
                    if w.target in c_attrs:
                        vals = _write_values(w, params)
                        forced = bool(vals) and all(
                            not satisfiable(
                                [c.expr], attributes, params, fixed={w.target: v}
                            )
                            for v in vals
                        )
                    if not forced:
                        for ch in channels:
                            if ch.kind is not Kind.IMMEDIATE:
                                continue
                            if ch.attribute not in c_attrs:
                                continue
                            for af in ch.affects:
                                if (
                                    _affect_matches(w, af)
                                    and af.direction is Direction.SET
                                    and not satisfiable(
                                        [c.expr],
                                        attributes,
                                        params,
                                        fixed={ch.attribute: af.set_value},
                                    )
                                ):
                                    forced = True
                                    break
                            if forced:
                                break
                    if forced:
                        emit(
                            "T6",
                            r_i.id,
                            r_j.id,
                            {
                                "condition": expr_to_str(c.expr),
                                "action": _assign_str(w),
                            },
                        )

    # T7: power-off writers against users of transitively powered subjects
    if connections:
        subj_attrs: dict[str, set[str]] = {}
        for ad in attributes.values():
            subj_attrs.setdefault(ad.subject.name, set()).add(ad.name)
        for co in connections:
            dep_attrs: set[str] = set()
            for s in closure.get(co.parent, ()):
                dep_attrs |= subj_attrs.get(s, set())
            for r_i in rules:
                offs = [
                    w
                    for w, _ in _writes(r_i)
                    if w.target == co.power_attr
                    and any(v != co.on_value for v in _write_values(w, params))
                ]
                if not offs:
                    continue
                for r_j in rules:
                    if r_j.id == r_i.id:
                        continue
                    used = (r_j.read_attrs() | r_j.written_attrs()) & dep_attrs
                    if not used:
                        continue
                    emit(
                        "T7",
                        r_i.id,
                        r_j.id,
                        {
                            "action": _assign_str(offs[0]),
                            "parent": co.parent,
                            "policy": co.policy.value,
                            "uses": ", ".join(sorted(used)),
                        },
                    )

    cands.sort(key=lambda c: c.key)
    return cands
