"""Guarded-command transition system compiled from a bound rule set.

One global step fires exactly one enabled command.  Commands carrying user
rules are *urgent*: while any is enabled, the bookkeeping commands (clock
tick, channel drift, environment input) wait.  A macro-step therefore runs
rule cascades to completion before time advances, and the tick command
latches trigger shadows, counts timers down and clears the per-rule fired
latches in one place.

Build pipeline: ``build`` -> ``inject_channels`` -> ``inject_connections``
-> ``compress`` (order matters: connection gating must see drift commands).
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Optional, Sequence, Union

from .errors import RuleError
from .interactions import (
    Affect,
    ChannelDecl,
    ConnectionDecl,
    Direction,
    OfflinePolicy,
    connection_closure,
)
from .ir import (
    TIMER_IDLE,
    And,
    Atom,
    AttributeDecl,
    BoolDomain,
    Domain,
    EnumDomain,
    Expr,
    IntDomain,
    Kind,
    Lit,
    Not,
    Or,
    ParamRef,
    Revert,
    Rule,
    TimerVar,
    atoms,
    expr_attrs,
    expr_to_str,
    subst_attrs,
)
from .loader import BoundRuleSet

SHADOW_SUFFIX = "@prev"
FIRED_SUFFIX = "@fired"
SETTLE_SUFFIX = "@settle"
TICK = "tick"


class VarRole(Enum):
    ATTRIBUTE = "attribute"
    SHADOW = "shadow"
    TIMER = "timer"
    PARAMETER = "parameter"
    # support roles carried by the same machinery
    LATCH = "latch"      # per-rule fired flag, cleared on tick
    SETTLE = "settle"    # per-channel countdown before drift moves
    MEMORY = "memory"    # captured pre-value for reverting terminals


class Tag(Enum):
    USER_RULE = "user"
    CHANNEL_DRIFT = "drift"
    TIMER_TICK = "tick"
    ENV_INPUT = "env"


@dataclass(frozen=True)
class ExplicitDomain:
    """Finite value list for parameter variables."""

    vals: tuple

    def values(self) -> tuple:
        return self.vals

    def __contains__(self, v) -> bool:
        return v in self.vals


VarDomain = Union[Domain, ExplicitDomain]


@dataclass(frozen=True)
class StateVar:
    name: str
    domain: VarDomain
    role: VarRole
    base: str = ""  # shadowed/memorized attribute, or the channel attribute


# -- update operations --------------------------------------------------------
# All update expressions read the pre-state, so ordering within one command
# is irrelevant; a command may write each variable at most once.

@dataclass(frozen=True)
class SetConst:
    var: str
    value: object  # literal or ParamRef, resolved against the frozen params


@dataclass(frozen=True)
class SetParamCode:
    """Write a compressed code chosen by the current parameter value."""

    var: str
    param: str
    table: tuple[tuple[object, int], ...]  # (raw param value, code)


@dataclass(frozen=True)
class CopyFrom:
    var: str
    source: str


@dataclass(frozen=True)
class TickDown:
    """Armed timers (value > 0) lose one step; idle/expired ones hold."""

    var: str


@dataclass(frozen=True)
class SettleStep:
    """Channel countdown: reload while no cause presses, else count to 0."""

    var: str
    active: Expr
    reload: int


@dataclass(frozen=True)
class DriftMove:
    var: str
    delta: int  # +1 or -1; the command is disabled at the domain edge


Update = Union[SetConst, SetParamCode, CopyFrom, TickDown, SettleStep, DriftMove]


@dataclass(frozen=True)
class GuardedCommand:
    """One transition.  Enabled iff the guard holds and every update lands
    inside its variable's domain (drift at a domain edge is disabled rather
    than clamped)."""

    name: str
    rule: str  # originating rule id, "" for bookkeeping commands
    guard: Expr
    updates: tuple[Update, ...]
    tag: Tag
    urgent: bool
    fair: bool
    attr: str = ""  # env/drift target attribute
    base_guard: Optional[Expr] = None  # guard before connection gating

    def __post_init__(self):
        written = [_written_var(u) for u in self.updates]
        if len(written) != len(set(written)):
            raise RuleError(f"command {self.name}: writes a variable twice")


def _written_var(u: Update) -> str:
    return u.var


def conj(parts: Sequence[Expr]) -> Expr:
    flat: list[Expr] = []
    for p in parts:
        if isinstance(p, And):
            flat.extend(p.parts)
        elif isinstance(p, Lit):
            if not p.value:
                return p
        else:
            flat.append(p)
    if not flat:
        return Lit(True)
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def _disj(parts: Sequence[Expr]) -> Optional[Expr]:
    parts = tuple(parts)
    if not parts:
        return None
    if len(parts) == 1:
        return parts[0]
    return Or(parts)


@dataclass(frozen=True)
class TransitionSystem:
    vars: tuple[StateVar, ...]
    init: dict  # name -> value; parameter vars list one value, the engine
    # expands the full cartesian choice at initialization
    commands: tuple[GuardedCommand, ...]
    fairness: frozenset  # command names under weak fairness
    warnings: tuple[str, ...] = ()

    def var(self, name: str) -> StateVar:
        for v in self.vars:
            if v.name == name:
                return v
        raise KeyError(name)

    def command(self, name: str) -> GuardedCommand:
        for c in self.commands:
            if c.name == name:
                return c
        raise KeyError(name)

    def validate(self) -> None:
        names = {v.name for v in self.vars}
        if len(names) != len(self.vars):
            raise RuleError("duplicate state variable")
        for v in self.vars:
            if v.name not in self.init:
                raise RuleError(f"init misses {v.name}")
            if self.init[v.name] not in v.domain:
                raise RuleError(f"init for {v.name} outside its domain")
        for c in self.commands:
            for a in atoms(c.guard):
                if a.attr not in names:
                    raise RuleError(
                        f"command {c.name}: guard reads undeclared {a.attr}"
                    )
            for u in c.updates:
                if u.var not in names:
                    raise RuleError(
                        f"command {c.name}: writes undeclared {u.var}"
                    )

    def dump(self) -> str:
        """Stable text rendering for golden-file comparison and debugging."""
        out = []
        for v in self.vars:
            out.append(
                f"var {v.name} : {_domain_str(v.domain)} "
                f"[{v.role.value}] init={_val_str(self.init[v.name])}"
            )
        for c in self.commands:
            flags = []
            if c.urgent:
                flags.append("urgent")
            if c.fair:
                flags.append("fair")
            out.append(f"cmd {c.name} [{c.tag.value}{' ' if flags else ''}"
                       f"{' '.join(flags)}]")
            out.append(f"  when {expr_to_str(c.guard)}")
            for u in c.updates:
                out.append(f"  do   {_update_str(u)}")
        return "\n".join(out) + "\n"


def _domain_str(d: VarDomain) -> str:
    if isinstance(d, BoolDomain):
        return "bool"
    if isinstance(d, EnumDomain):
        return "{" + ", ".join(d.labels) + "}"
    if isinstance(d, IntDomain):
        return f"{d.lo}..{d.hi}"
    return "{" + ", ".join(_val_str(v) for v in d.vals) + "}"


def _val_str(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _update_str(u: Update) -> str:
    if isinstance(u, SetConst):
        v = u.value
        return f"{u.var} := " + ("$" + v.name if isinstance(v, ParamRef)
                                 else _val_str(v))
    if isinstance(u, SetParamCode):
        cases = ", ".join(f"{_val_str(raw)}->{code}" for raw, code in u.table)
        return f"{u.var} := code(${u.param}: {cases})"
    if isinstance(u, CopyFrom):
        return f"{u.var} := {u.source}"
    if isinstance(u, TickDown):
        return f"{u.var} -= 1 if armed"
    if isinstance(u, SettleStep):
        return (f"{u.var} := countdown while {expr_to_str(u.active)} "
                f"else {u.reload}")
    if isinstance(u, DriftMove):
        return f"{u.var} += {u.delta:+d}"
    raise TypeError(u)


# --------------------------------------------------------------------------
# build

def _timer_bound(t: TimerVar, params: Mapping[str, tuple]) -> int:
    if isinstance(t.timeout, ParamRef):
        return max(params[t.timeout.name])
    return t.timeout


def build(brs: BoundRuleSet) -> TransitionSystem:
    """Compile normalized rules into variables and guarded commands.

    Per non-timeout rule: one urgent command guarded by the trigger, its
    negation over the shadow variables (edge detection), both condition
    sets, and the not-yet-fired latch.  Per timeout rule: an urgent fire
    command consuming the timer, plus a discard command when action-time
    conditions could block the fire.  Environment inputs are derived for
    every attribute that rules read but never write.
    """
    attrs = brs.attributes
    rules = brs.rules
    params = brs.params

    written: set[str] = set()
    shadow_of: dict[str, str] = {}
    for r in rules:
        written |= {a for a in r.written_attrs() if a in attrs}
        if r.timer is None:
            for a in expr_attrs(r.trigger.expr):
                if a in attrs:
                    shadow_of[a] = a + SHADOW_SUFFIX

    svars: list[StateVar] = []
    init: dict = {}
    for name, decl in attrs.items():
        svars.append(StateVar(name, decl.domain, VarRole.ATTRIBUTE))
        init[name] = brs.init[name]
    for name in sorted(shadow_of):
        svars.append(
            StateVar(shadow_of[name], attrs[name].domain, VarRole.SHADOW, name)
        )
        init[shadow_of[name]] = brs.init[name]
    for t in brs.timers:
        dom = IntDomain(TIMER_IDLE, _timer_bound(t, params))
        svars.append(StateVar(t.name, dom, VarRole.TIMER, t.owner))
        init[t.name] = TIMER_IDLE

    # revert memories: one per terminal that restores the pre-hold value
    mem_of: dict[str, str] = {}  # end-rule id -> memory var
    for r in rules:
        if r.timer is None:
            continue
        act = r.actions[0]
        if isinstance(act.value, Revert):
            mem = f"{r.id}@mem"
            mem_of[r.id] = mem
            svars.append(
                StateVar(mem, attrs[act.target].domain, VarRole.MEMORY,
                         act.target)
            )
            init[mem] = brs.init[act.target]

    # every fire command records itself in a latch the tick clears; the
    # latch also blocks re-firing within a macro-step, except for timeout
    # rules where consuming the timer already does (their latch is a pure
    # observer for the interaction properties)
    latch_of: dict[str, str] = {}
    for r in rules:
        latch_of[r.id] = r.id + FIRED_SUFFIX
        svars.append(StateVar(latch_of[r.id], BoolDomain(), VarRole.LATCH,
                              r.id))
        init[latch_of[r.id]] = False

    for name in sorted(params):
        svars.append(
            StateVar("$" + name, ExplicitDomain(tuple(params[name])),
                     VarRole.PARAMETER)
        )
        init["$" + name] = params[name][0]

    cmds: list[GuardedCommand] = []
    fair: set[str] = set()

    for r in rules:
        updates = [_action_update(a.target, a.value, mem_of, r) for a in r.actions]
        # snapshot pre-values for any revert terminal this rule arms
        for armed in r.arms:
            if armed in mem_of:
                target = next(x for x in rules if x.id == armed).actions[0].target
                updates.append(CopyFrom(mem_of[armed], target))
        if r.timer is not None:
            rest = [p.expr for p in r.action_conditions]
            guard = conj([Atom(r.timer, "=", 0)] + rest)
            updates.append(SetConst(r.timer, TIMER_IDLE))
            updates.append(SetConst(latch_of[r.id], True))
            cmds.append(
                GuardedCommand(r.id, r.id, guard, tuple(updates),
                               Tag.USER_RULE, urgent=True, fair=True)
            )
            fair.add(r.id)
            if rest:
                discard = conj([Atom(r.timer, "=", 0), Not(conj(rest))])
                cmds.append(
                    GuardedCommand(
                        r.id + "!discard", r.id, discard,
                        (SetConst(r.timer, TIMER_IDLE),),
                        Tag.TIMER_TICK, urgent=True, fair=True,
                    )
                )
                fair.add(r.id + "!discard")
            continue
        trig = r.trigger.expr
        parts = [trig, Not(subst_attrs(trig, shadow_of))]
        parts += [p.expr for p in r.trigger_conditions]
        parts += [p.expr for p in r.action_conditions]
        parts.append(Atom(latch_of[r.id], "=", False))
        updates.append(SetConst(latch_of[r.id], True))
        cmds.append(
            GuardedCommand(r.id, r.id, conj(parts), tuple(updates),
                           Tag.USER_RULE, urgent=True, fair=True)
        )
        fair.add(r.id)

    # environment drives every attribute no rule writes
    for name, decl in attrs.items():
        if name in written:
            continue
        cmds.extend(_env_commands(name, decl))

    tick_updates: list[Update] = [TickDown(t.name) for t in brs.timers]
    tick_updates += [CopyFrom(shadow_of[a], a) for a in sorted(shadow_of)]
    tick_updates += [SetConst(latch, False) for latch in latch_of.values()]
    cmds.append(
        GuardedCommand(TICK, "", Lit(True), tuple(tick_updates),
                       Tag.TIMER_TICK, urgent=False, fair=True)
    )
    fair.add(TICK)

    ts = TransitionSystem(
        vars=tuple(svars),
        init=init,
        commands=tuple(cmds),
        fairness=frozenset(fair),
        warnings=tuple(brs.warnings),
    )
    ts.validate()
    return ts


def _action_update(target: str, value, mem_of: Mapping[str, str],
                   rule: Rule) -> Update:
    if isinstance(value, Revert):
        return CopyFrom(target, mem_of[rule.id])
    return SetConst(target, value)


def _env_commands(name: str, decl: AttributeDecl) -> list[GuardedCommand]:
    # tardy values creep one unit at a time; a move off the domain edge is
    # disabled by the in-bounds rule, so no bound constants leak into guards
    if decl.kind is Kind.TARDY:
        return [
            GuardedCommand(f"env:{name}:up", "", Lit(True),
                           (DriftMove(name, +1),), Tag.ENV_INPUT,
                           urgent=False, fair=False, attr=name),
            GuardedCommand(f"env:{name}:down", "", Lit(True),
                           (DriftMove(name, -1),), Tag.ENV_INPUT,
                           urgent=False, fair=False, attr=name),
        ]
    out = []
    for v in decl.domain.values():
        out.append(
            GuardedCommand(
                f"env:{name}:={_val_str(v)}", "", Atom(name, "!=", v),
                (SetConst(name, v),), Tag.ENV_INPUT, urgent=False, fair=False,
                attr=name,
            )
        )
    return out


# --------------------------------------------------------------------------
# channels

def _pressure(channel: ChannelDecl) -> tuple[list[Expr], list[Expr]]:
    """Expressions under which some affect presses the value up resp. down."""
    up: list[Expr] = []
    down: list[Expr] = []
    for a in channel.affects:
        cause = Atom(a.cause_attr, "=", a.cause_value)
        if a.direction is Direction.RAISE:
            up.append(cause)
        elif a.direction is Direction.LOWER:
            down.append(cause)
        else:  # SET presses toward its target value
            up.append(conj([cause, Atom(channel.attribute, "<", a.set_value)]))
            down.append(conj([cause, Atom(channel.attribute, ">", a.set_value)]))
    return up, down


def _writes_cause(cmd: GuardedCommand, affect: Affect) -> bool:
    for u in cmd.updates:
        if isinstance(u, SetConst) and u.var == affect.cause_attr \
                and u.value == affect.cause_value:
            return True
    return False


def inject_channels(ts: TransitionSystem,
                    channels: Sequence[ChannelDecl]) -> TransitionSystem:
    """Add physical coupling between actuator states and sensed values.

    Tardy channels get a settle countdown plus two fair drift commands that
    move the value one step at a time toward the net pressure direction;
    the tick command maintains the countdown, and environment moves on the
    attribute only happen while no affect is pressing.  Immediate channels
    splice their set-value directly into every command that establishes the
    cause.
    """
    svars = list(ts.vars)
    init = dict(ts.init)
    cmds = list(ts.commands)
    fair = set(ts.fairness)
    warnings = list(ts.warnings)

    for ch in channels:
        for a in ch.affects:
            if not any(_writes_cause(c, a) for c in cmds):
                warnings.append(
                    f"channel {ch.attribute}: no command ever sets "
                    f"{a.cause_attr} to {_val_str(a.cause_value)}; "
                    f"affect is dead"
                )

        if ch.kind is Kind.IMMEDIATE:
            for a in ch.affects:
                for i, c in enumerate(cmds):
                    if not _writes_cause(c, a):
                        continue
                    if any(u.var == ch.attribute for u in c.updates):
                        raise RuleError(
                            f"channel {ch.attribute}: command {c.name} "
                            f"already writes the channel attribute"
                        )
                    cmds[i] = replace(
                        c, updates=c.updates + (SetConst(ch.attribute,
                                                         a.set_value),)
                    )
            continue

        up, down = _pressure(ch)
        up_e, down_e = _disj(up), _disj(down)
        active = _disj([e for e in (up_e, down_e) if e is not None])
        if active is None:
            continue  # channel with no affects: nothing can press it
        settle = ch.attribute + SETTLE_SUFFIX
        svars.append(
            StateVar(settle, IntDomain(0, ch.latency), VarRole.SETTLE,
                     ch.attribute)
        )
        init[settle] = ch.latency
        quiet = [Atom(settle, "=", 0)]
        if up_e is not None:
            g = conj(quiet + [up_e] + ([Not(down_e)] if down_e else []))
            cmds.append(
                GuardedCommand(f"drift:{ch.attribute}:up", "", g,
                               (DriftMove(ch.attribute, +1), SetConst(settle, 1)),
                               Tag.CHANNEL_DRIFT, urgent=False, fair=True,
                               attr=ch.attribute)
            )
            fair.add(f"drift:{ch.attribute}:up")
        if down_e is not None:
            g = conj(quiet + [down_e] + ([Not(up_e)] if up_e else []))
            cmds.append(
                GuardedCommand(f"drift:{ch.attribute}:down", "", g,
                               (DriftMove(ch.attribute, -1), SetConst(settle, 1)),
                               Tag.CHANNEL_DRIFT, urgent=False, fair=True,
                               attr=ch.attribute)
            )
            fair.add(f"drift:{ch.attribute}:down")

        for i, c in enumerate(cmds):
            if c.name == TICK:
                cmds[i] = replace(
                    c, updates=c.updates + (SettleStep(settle, active,
                                                       ch.latency),)
                )
            elif c.tag is Tag.ENV_INPUT and c.attr == ch.attribute:
                # a pressed channel value follows the drift, not free air
                cmds[i] = replace(c, guard=conj([c.guard, Not(active)]))

    ts2 = TransitionSystem(tuple(svars), init, tuple(cmds),
                           frozenset(fair), tuple(warnings))
    ts2.validate()
    return ts2


# --------------------------------------------------------------------------
# connections

def inject_connections(
    ts: TransitionSystem,
    connections: Sequence[ConnectionDecl],
    rules: Sequence[Rule],
    attributes: Mapping[str, AttributeDecl],
) -> TransitionSystem:
    """Gate commands on the power state of connection ancestors.

    DisableRules: every command of a rule touching a powered subject needs
    the ancestor switched on (timeout fires included; discards still run so
    an expired timer never fires twice).  LastMeasurement: only environment
    input and channel drift of the child sensors freeze; rules keep running
    on the last value.
    """
    if not connections:
        return ts
    closure = connection_closure(connections)
    by_subject: dict[str, list[ConnectionDecl]] = {}
    for conn in connections:
        for s in closure[conn.parent]:
            by_subject.setdefault(s, []).append(conn)

    def subjects_of(attr: str) -> str:
        return attributes[attr].subject.name

    rule_by_id = {r.id: r for r in rules}
    cmds = list(ts.commands)
    for i, c in enumerate(cmds):
        gates: list[ConnectionDecl] = []
        if c.tag is Tag.USER_RULE and c.rule in rule_by_id:
            r = rule_by_id[c.rule]
            touched = {subjects_of(a)
                       for a in (r.read_attrs() | r.written_attrs())
                       if a in attributes}
            for s in sorted(touched):
                for conn in by_subject.get(s, ()):
                    if conn.policy is OfflinePolicy.DISABLE_RULES:
                        gates.append(conn)
        elif c.tag in (Tag.ENV_INPUT, Tag.CHANNEL_DRIFT) and c.attr:
            for conn in by_subject.get(subjects_of(c.attr), ()):
                if conn.policy is OfflinePolicy.LAST_MEASUREMENT:
                    gates.append(conn)
        if not gates:
            continue
        seen: set[str] = set()
        conjuncts = []
        for conn in gates:
            if conn.parent in seen:
                continue
            seen.add(conn.parent)
            conjuncts.append(Atom(conn.power_attr, "=", conn.on_value))
        cmds[i] = replace(c, base_guard=c.guard,
                          guard=conj([c.guard] + conjuncts))

    ts2 = replace(ts, commands=tuple(cmds))
    ts2.validate()
    return ts2


# --------------------------------------------------------------------------
# compression

@dataclass(frozen=True)
class VarCodec:
    """Order-preserving map from an integer domain onto interval codes.

    ``cuts`` are the interval left edges strictly inside the domain; code 0
    is [lo, cuts[0]) and the last code runs to hi.
    """

    lo: int
    hi: int
    cuts: tuple[int, ...]

    @property
    def n_codes(self) -> int:
        return len(self.cuts) + 1

    def code_of(self, v: int) -> int:
        if not self.lo <= v <= self.hi:
            raise RuleError(f"value {v} outside {self.lo}..{self.hi}")
        return bisect.bisect_right(self.cuts, v)

    def rep_of(self, code: int) -> int:
        """Smallest original value in the coded interval."""
        return self.lo if code == 0 else self.cuts[code - 1]

    def exact(self, v: int) -> bool:
        """True when the value's code contains only that value."""
        c = self.code_of(v)
        lo = self.rep_of(c)
        hi = self.cuts[c] - 1 if c < len(self.cuts) else self.hi
        return lo == hi == v


@dataclass
class ValueMap:
    codecs: dict  # var name -> VarCodec
    axes: dict = field(default_factory=dict)  # var name -> codec axis

    def decode(self, var: str, code):
        codec = self.codecs.get(self.axes.get(var, var))
        return code if codec is None else codec.rep_of(code)


def _norm_bounds(op: str, c: int) -> list[int]:
    """Interval edges an atom needs so its truth is constant per code."""
    if op == ">=":
        return [c]
    if op == "<":
        return [c]
    if op == ">":
        return [c + 1]
    if op == "<=":
        return [c + 1]
    return [c, c + 1]  # =, !=


def _atom_cuts(a: Atom, params: Mapping[str, tuple]) -> list[int]:
    vals = []
    if isinstance(a.value, ParamRef):
        vals = [v for v in params[a.value.name] if isinstance(v, int)]
    elif isinstance(a.value, int) and not isinstance(a.value, bool):
        vals = [a.value]
    out = []
    for v in vals:
        out.extend(_norm_bounds(a.op, v))
        out.append(v)  # keep every literal constant a cut value
    return out


def _collect_cuts(ts: TransitionSystem, params: Mapping[str, tuple],
                  extras: Sequence[Expr] = ()) -> dict[str, set[int]]:
    roles = {v.name: v for v in ts.vars}
    targets = {v.name for v in ts.vars
               if v.role is VarRole.ATTRIBUTE and isinstance(v.domain, IntDomain)}

    def axis(name: str) -> Optional[str]:
        v = roles.get(name)
        if v is None:
            return None
        if v.name in targets:
            return v.name
        if v.role in (VarRole.SHADOW, VarRole.MEMORY) and v.base in targets:
            return v.base
        return None

    cuts: dict[str, set[int]] = {name: set() for name in targets}
    for c in ts.commands:
        # environment inputs on the attribute itself are rebuilt per code
        # after compression, so their per-value guards and writes must not
        # count as cut sources
        is_env = c.tag is Tag.ENV_INPUT
        for a in atoms(c.guard):
            if is_env and a.attr == c.attr:
                continue
            ax = axis(a.attr)
            if ax is not None:
                cuts[ax].update(_atom_cuts(a, params))
        for u in c.updates:
            if isinstance(u, SettleStep):
                for a in atoms(u.active):
                    ax2 = axis(a.attr)
                    if ax2 is not None:
                        cuts[ax2].update(_atom_cuts(a, params))
                continue
            if is_env and u.var == c.attr:
                continue
            ax = axis(u.var)
            if ax is None:
                continue
            if isinstance(u, SetConst):
                if isinstance(u.value, ParamRef):
                    for v in params[u.value.name]:
                        cuts[ax].update((v, v + 1))
                elif isinstance(u.value, int):
                    cuts[ax].update((u.value, u.value + 1))
    # property expressions checked against the compressed system need their
    # comparison constants isolated the same way
    for e in extras:
        for a in atoms(e):
            ax = axis(a.attr)
            if ax is not None:
                cuts[ax].update(_atom_cuts(a, params))
    return cuts


class _Rewriter:
    def __init__(self, vmap: ValueMap, axis_of: Mapping[str, str],
                 params: Mapping[str, tuple]):
        self.vmap = vmap
        self.axis_of = axis_of
        self.params = params

    def codec(self, name: str) -> Optional[VarCodec]:
        ax = self.axis_of.get(name)
        return None if ax is None else self.vmap.codecs[ax]

    def atom(self, a: Atom) -> Expr:
        codec = self.codec(a.attr)
        if codec is None:
            return a
        if isinstance(a.value, ParamRef):
            cases = []
            pvar = "$" + a.value.name
            for v in self.params[a.value.name]:
                cases.append(conj([Atom(pvar, "=", v),
                                   self._coded(a.attr, a.op, v, codec)]))
            out = _disj(cases)
            assert out is not None
            return out
        return self._coded(a.attr, a.op, a.value, codec)

    def _coded(self, attr: str, op: str, c: int, codec: VarCodec) -> Expr:
        always = Atom(attr, ">=", 0)
        never = Atom(attr, "<", 0)
        if op == ">":
            op, c = ">=", c + 1
        elif op == "<=":
            op, c = "<", c + 1
        if op == ">=":
            if c <= codec.lo:
                return always
            if c > codec.hi:
                return never
            return Atom(attr, ">=", codec.code_of(c))
        if op == "<":
            if c <= codec.lo:
                return never
            if c > codec.hi:
                return always
            return Atom(attr, "<", codec.code_of(c))
        inside = codec.lo <= c <= codec.hi
        if op == "=":
            if not inside:
                return never
            assert codec.exact(c), f"{attr}={c} not isolated by compression"
            return Atom(attr, "=", codec.code_of(c))
        if op == "!=":
            if not inside:
                return always
            assert codec.exact(c), f"{attr}!={c} not isolated by compression"
            return Atom(attr, "!=", codec.code_of(c))
        raise RuleError(f"operator {op!r} on compressed variable")

    def expr(self, e: Expr) -> Expr:
        if isinstance(e, Atom):
            return self.atom(e)
        if isinstance(e, Lit):
            return e
        if isinstance(e, Not):
            return Not(self.expr(e.child))
        if isinstance(e, And):
            return And(tuple(self.expr(p) for p in e.parts))
        if isinstance(e, Or):
            return Or(tuple(self.expr(p) for p in e.parts))
        raise TypeError(e)

    def update(self, u: Update) -> Update:
        codec = self.codec(u.var) if not isinstance(u, SettleStep) else None
        if isinstance(u, SettleStep):
            return replace(u, active=self.expr(u.active))
        if codec is None:
            return u
        if isinstance(u, SetConst):
            if isinstance(u.value, ParamRef):
                table = tuple(
                    (v, codec.code_of(v)) for v in self.params[u.value.name]
                )
                return SetParamCode(u.var, u.value.name, table)
            return SetConst(u.var, codec.code_of(u.value))
        return u  # CopyFrom between same-axis vars, DriftMove in code space


def compress(ts: TransitionSystem, params: Mapping[str, tuple] | None = None,
             extras: Sequence[Expr] = ()
             ) -> tuple[TransitionSystem, ValueMap]:
    """Replace integer attribute domains with interval codes.

    Cut values come from every comparison constant (adjusted so each atom's
    truth is constant inside a code), every written value, and every
    parameter value compared or assigned; shadows and revert memories share
    their attribute's codec.  ``extras`` are property expressions whose
    constants must stay distinguishable too.  Environment inputs on
    compressed immediate attributes are rebuilt per code.  Timers, settle
    countdowns and parameters keep their original domains.
    """
    params = params or {}
    cut_sets = _collect_cuts(ts, params, extras)
    warnings = list(ts.warnings)

    vmap = ValueMap({})
    axis_of: dict[str, str] = {}
    for v in ts.vars:
        if v.name in cut_sets:
            dom = v.domain
            inside = sorted(c for c in cut_sets[v.name]
                            if dom.lo < c <= dom.hi)
            if not inside:
                warnings.append(
                    f"{v.name}: no comparison constants; compressed to a "
                    f"single code"
                )
            vmap.codecs[v.name] = VarCodec(dom.lo, dom.hi, tuple(inside))
            axis_of[v.name] = v.name
    for v in ts.vars:
        if v.role in (VarRole.SHADOW, VarRole.MEMORY) and v.base in vmap.codecs:
            axis_of[v.name] = v.base
    vmap.axes.update(axis_of)

    rw = _Rewriter(vmap, axis_of, params)

    svars: list[StateVar] = []
    init: dict = {}
    for v in ts.vars:
        if v.name in axis_of:
            codec = vmap.codecs[axis_of[v.name]]
            svars.append(replace(v, domain=IntDomain(0, codec.n_codes - 1)))
            init[v.name] = codec.code_of(ts.init[v.name])
        else:
            svars.append(v)
            init[v.name] = ts.init[v.name]

    cmds: list[GuardedCommand] = []
    for c in ts.commands:
        if c.tag is Tag.ENV_INPUT and c.attr in vmap.codecs \
                and any(isinstance(u, SetConst) for u in c.updates):
            continue  # rebuilt below, one command per code
        cmds.append(
            replace(
                c,
                guard=rw.expr(c.guard),
                updates=tuple(rw.update(u) for u in c.updates),
                base_guard=None if c.base_guard is None
                else rw.expr(c.base_guard),
            )
        )

    rebuilt: set[str] = set()
    for c in ts.commands:
        if not (c.tag is Tag.ENV_INPUT and c.attr in vmap.codecs
                and any(isinstance(u, SetConst) for u in c.updates)):
            continue
        if c.attr in rebuilt:
            continue
        rebuilt.add(c.attr)
        codec = vmap.codecs[c.attr]
        parts = c.guard.parts if isinstance(c.guard, And) else (c.guard,)
        extra = [p for p in parts if c.attr not in expr_attrs(p)]
        for code in range(codec.n_codes):
            guard = conj([Atom(c.attr, "!=", code)]
                         + [rw.expr(e) for e in extra])
            cmds.append(
                replace(c, name=f"env:{c.attr}:={code}", guard=guard,
                        updates=(SetConst(c.attr, code),), base_guard=None)
            )

    names = {c.name for c in cmds}
    ts2 = TransitionSystem(
        tuple(svars), init, tuple(cmds),
        frozenset(n for n in ts.fairness if n in names),
        tuple(warnings),
    )
    ts2.validate()
    return ts2, vmap


def recode_expr(e: Expr, vmap: ValueMap,
                params: Mapping[str, tuple] | None = None) -> Expr:
    """Rewrite a property expression into the compressed code space.

    Constants must have been passed to :func:`compress` as ``extras`` (or
    already occur in the model); equality on a non-isolated value raises.
    """
    return _Rewriter(vmap, vmap.axes, params or {}).expr(e)
