"""Explicit-state verification of safety and liveness properties.

Safety invariants are checked by breadth-first reachability (shortest
counterexample prefix by construction).  Leads-to and eventuality
properties are checked by searching for a fair lasso: a reachable
obligation state from which a cycle avoids the goal while still treating
every weakly-fair command justly (a command that stays takeable around the
whole cycle must fire on it).  Bounded-absence properties run a product
search that counts clock ticks after the triggering command.

Threat candidates from the syntactic screen are turned into properties
here; a candidate is confirmed or refuted by the verdict polarity its
pattern calls for.
"""

from __future__ import annotations

import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence, Union

from .dsl import parse_expression
from .engine import Engine, SearchBudgetExceeded
from .errors import RuleError
from .fsm import (
    FIRED_SUFFIX,
    SHADOW_SUFFIX,
    TransitionSystem,
    ValueMap,
    compress,
    conj,
    recode_expr,
)
from .interactions import (
    CONFIRMED,
    REFUTED,
    VIA_DIRECT,
    OfflinePolicy,
    ThreatCandidate,
    _assign_str,
    connection_closure,
)
from .ir import (
    Assignment,
    Atom,
    BoolDomain,
    EnumDomain,
    Expr,
    IntDomain,
    Not,
    ParamRef,
    Revert,
    Rule,
    atoms,
    expr_attrs,
    expr_params,
    subst_attrs,
)
from .loader import BoundRuleSet
from .slicing import Slicer, rule_owner

DEFAULT_BUDGET = 2_000_000

HOLDS = "Holds"
VIOLATED = "Violated"
REJECTED = "Rejected"


# --------------------------------------------------------------------------
# conditions: what a property can talk about

@dataclass(frozen=True)
class ExprCond:
    """A state predicate over transition-system variables."""

    expr: Expr


@dataclass(frozen=True)
class FiredCond:
    """Satisfied on the transition firing the named command."""

    command: str


@dataclass(frozen=True)
class QuiescentCond:
    """Satisfied in states where no urgent command is enabled (the tick
    boundary of a macro-step)."""


QUIESCENT = QuiescentCond()


@dataclass(frozen=True)
class AllCond:
    parts: tuple

    def __post_init__(self):
        if not self.parts:
            raise ValueError("empty conjunction of conditions")


Cond = Union[ExprCond, FiredCond, QuiescentCond, AllCond]


def _flatten(cond: Cond) -> tuple[Optional[str], list[Expr], bool]:
    """Split a condition into (fired command, state exprs, quiescent flag)."""
    fired: Optional[str] = None
    exprs: list[Expr] = []
    quiescent = False
    stack = [cond]
    while stack:
        c = stack.pop()
        if isinstance(c, AllCond):
            stack.extend(c.parts)
        elif isinstance(c, ExprCond):
            exprs.append(c.expr)
        elif isinstance(c, QuiescentCond):
            quiescent = True
        elif isinstance(c, FiredCond):
            if fired is not None and fired != c.command:
                raise RuleError(
                    f"condition names two commands ({fired}, {c.command}); "
                    f"split into separate properties"
                )
            fired = c.command
        else:
            raise TypeError(c)
    return fired, exprs, quiescent


def _cond_exprs(cond: Cond) -> list[Expr]:
    return _flatten(cond)[1]


def _map_exprs(cond: Cond, fn) -> Cond:
    if isinstance(cond, AllCond):
        return AllCond(tuple(_map_exprs(p, fn) for p in cond.parts))
    if isinstance(cond, ExprCond):
        return ExprCond(fn(cond.expr))
    return cond


class _Sat:
    """Compiled condition against one engine: a state test plus the command
    the condition additionally requires to have just fired (if any)."""

    def __init__(self, engine: Engine, cond: Cond):
        self.fired, exprs, self.needs_quiescent = _flatten(cond)
        self._state = engine.compile_expr(conj(exprs)) if exprs else None
        self._quiescent = engine.quiescent

    def state_ok(self, s) -> bool:
        if self._state is not None and not self._state(s):
            return False
        return not self.needs_quiescent or self._quiescent(s)

    def on_state(self, s) -> bool:
        """Condition truth at a state; only valid when no command part."""
        return self.fired is None and self.state_ok(s)

    def on_edge(self, cmd_name: str, post) -> bool:
        return (self.fired is None or cmd_name == self.fired) \
            and self.state_ok(post)


# --------------------------------------------------------------------------
# properties and verdicts

@dataclass(frozen=True)
class SafetyInvariant:
    bad: Cond


@dataclass(frozen=True)
class LeadsTo:
    premise: Cond
    goal: Cond


@dataclass(frozen=True)
class Eventually:
    goal: Cond


@dataclass(frozen=True)
class BoundedAbsence:
    start: Cond  # must contain a FiredCond: the window opens on that edge
    window: int  # clock ticks
    forbidden: Cond


PropertyKind = Union[SafetyInvariant, LeadsTo, Eventually, BoundedAbsence]


@dataclass(frozen=True)
class Property:
    id: str
    kind: PropertyKind
    origin: str = "user"  # "user" or the threat kind (T1..T7)
    candidate: Optional[tuple] = None  # ThreatCandidate.key
    confirm_on: str = ""  # "holds" | "violated" | ""
    text: str = ""
    rules: tuple = ()  # involved rule entry commands, for slicer routing
    defect: str = ""  # non-empty: reject with this reason instead of checking

    def conds(self) -> list[Cond]:
        k = self.kind
        if isinstance(k, SafetyInvariant):
            return [k.bad]
        if isinstance(k, LeadsTo):
            return [k.premise, k.goal]
        if isinstance(k, Eventually):
            return [k.goal]
        if isinstance(k, BoundedAbsence):
            return [k.start, k.forbidden]
        raise TypeError(k)

    def exprs(self) -> list[Expr]:
        return [e for c in self.conds() for e in _cond_exprs(c)]


@dataclass
class Step:
    index: int
    command: str  # "" for the initial state
    state: dict


@dataclass
class Trace:
    steps: list[Step]
    loop_start: Optional[int] = None  # lasso: last state == steps[i].state

    def commands(self) -> list[str]:
        return [st.command for st in self.steps[1:]]


@dataclass
class Verdict:
    property_id: str
    result: str
    trace: Optional[Trace] = None
    reason: str = ""
    explored: int = 0
    elapsed: float = 0.0
    slicer: str = ""


def recode_property(prop: Property, vmap: ValueMap,
                    params: Mapping[str, tuple] | None = None) -> Property:
    """Rewrite all expression conditions into compressed code space."""
    def fn(e: Expr) -> Expr:
        return recode_expr(e, vmap, params)

    k = prop.kind
    if isinstance(k, SafetyInvariant):
        k2: PropertyKind = SafetyInvariant(_map_exprs(k.bad, fn))
    elif isinstance(k, LeadsTo):
        k2 = LeadsTo(_map_exprs(k.premise, fn), _map_exprs(k.goal, fn))
    elif isinstance(k, Eventually):
        k2 = Eventually(_map_exprs(k.goal, fn))
    elif isinstance(k, BoundedAbsence):
        k2 = BoundedAbsence(_map_exprs(k.start, fn), k.window,
                            _map_exprs(k.forbidden, fn))
    else:
        raise TypeError(k)
    return replace(prop, kind=k2)


# --------------------------------------------------------------------------
# safety

def _trace_to(engine: Engine, parents: dict, state,
              tail: Optional[tuple[str, tuple]] = None) -> Trace:
    """Rebuild the breadth-first discovery path ending at ``state``; ``tail``
    appends one extra (command, post-state) edge."""
    rev = []
    cur = state
    while True:
        link = parents[cur]
        if link is None:
            break
        prev, cmd = link
        rev.append((cmd, cur))
        cur = prev
    steps = [Step(0, "", engine.snapshot(cur))]
    for cmd, st in reversed(rev):
        steps.append(Step(len(steps), cmd, engine.snapshot(st)))
    if tail is not None:
        steps.append(Step(len(steps), tail[0], engine.snapshot(tail[1])))
    return Trace(steps)


def check_safety(ts: TransitionSystem, prop: Property,
                 budget: int = DEFAULT_BUDGET) -> Verdict:
    assert isinstance(prop.kind, SafetyInvariant)
    t0 = time.perf_counter()
    engine = Engine(ts)
    bad = _Sat(engine, prop.kind.bad)
    parents: dict = {}

    def verdict(result, trace=None, reason=""):
        return Verdict(prop.id, result, trace, reason,
                       explored=len(parents),
                       elapsed=time.perf_counter() - t0)

    try:
        for pre, ci, post in engine.reachable(budget):
            if pre is None:
                parents[post] = None
                if bad.on_state(post):
                    return verdict(VIOLATED, _trace_to(engine, parents, post))
                continue
            fresh = post not in parents
            if fresh:
                parents[post] = (pre, engine.commands[ci].name)
            if bad.fired is None:
                if fresh and bad.on_state(post):
                    return verdict(VIOLATED, _trace_to(engine, parents, post))
            elif bad.on_edge(engine.commands[ci].name, post):
                return verdict(
                    VIOLATED,
                    _trace_to(engine, parents, pre,
                              tail=(engine.commands[ci].name, post)),
                )
    except SearchBudgetExceeded as e:
        return verdict(REJECTED, reason=f"budget: {e}")
    return verdict(HOLDS)


# --------------------------------------------------------------------------
# liveness

class _Graph:
    """Full reachable state graph with first-discovery parents."""

    def __init__(self, engine: Engine, budget: int):
        self.engine = engine
        self.states: list = []
        self.index: dict = {}
        self.succs: list[list[tuple[int, int]]] = []  # node -> [(cmd, node)]
        self.inits: list[int] = []
        self.parents: dict[int, Optional[tuple[int, int]]] = {}

        def intern(s) -> int:
            i = self.index.get(s)
            if i is None:
                i = len(self.states)
                self.index[s] = i
                self.states.append(s)
                self.succs.append([])
            return i

        for pre, ci, post in engine.reachable(budget):
            if pre is None:
                i = intern(post)
                self.inits.append(i)
                self.parents[i] = None
            else:
                u = intern(pre)
                v = intern(post)
                self.succs[u].append((ci, v))
                if v not in self.parents:
                    self.parents[v] = (u, ci)

    def path(self, to: int) -> list[tuple[int, int]]:
        """Discovery path from an initial node: [(cmd, node), ...]."""
        rev = []
        cur = to
        while self.parents[cur] is not None:
            u, ci = self.parents[cur]
            rev.append((ci, cur))
            cur = u
        rev.append((-1, cur))
        return rev[::-1]


def _sccs(nodes: set[int], edges: dict[int, list[tuple[int, int]]]
          ) -> list[list[int]]:
    """Tarjan's strongly connected components, iterative."""
    order: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    out: list[list[int]] = []
    counter = 0
    for root in sorted(nodes):
        if root in order:
            continue
        work = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                order[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack.add(v)
            recurse = False
            adj = edges.get(v, ())
            while pi < len(adj):
                w = adj[pi][1]
                pi += 1
                if w not in nodes:
                    continue
                if w not in order:
                    work[-1] = (v, pi)
                    work.append((w, 0))
                    recurse = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], order[w])
            if recurse:
                continue
            work.pop()
            if low[v] == order[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                out.append(comp)
            if work:
                u, _ = work[-1]
                low[u] = min(low[u], low[v])
    return out


def _bfs_path(src: int, dst: int, nodes: set[int],
              edges: dict[int, list[tuple[int, int]]]
              ) -> list[tuple[int, int]]:
    """Shortest [(cmd, node)] path inside ``nodes``; empty when src == dst."""
    if src == dst:
        return []
    prev: dict[int, tuple[int, int]] = {src: None}  # type: ignore[dict-item]
    frontier = [src]
    while frontier:
        nxt = []
        for u in frontier:
            for ci, v in edges.get(u, ()):
                if v in nodes and v not in prev:
                    prev[v] = (u, ci)
                    if v == dst:
                        rev = []
                        cur = v
                        while cur != src:
                            pu, pci = prev[cur]
                            rev.append((pci, cur))
                            cur = pu
                        return rev[::-1]
                    nxt.append(v)
        frontier = nxt
    raise RuleError("no path inside a strongly connected component")


def check_liveness(ts: TransitionSystem, prop: Property,
                   budget: int = DEFAULT_BUDGET) -> Verdict:
    if isinstance(prop.kind, BoundedAbsence):
        return _check_bounded(ts, prop, budget)
    assert isinstance(prop.kind, (LeadsTo, Eventually))
    t0 = time.perf_counter()
    engine = Engine(ts)
    try:
        g = _Graph(engine, budget)
    except SearchBudgetExceeded as e:
        return Verdict(prop.id, REJECTED, reason=f"budget: {e}",
                       explored=e.states, elapsed=time.perf_counter() - t0)

    goal = _Sat(engine, prop.kind.goal)

    def verdict(result, trace=None, reason=""):
        return Verdict(prop.id, result, trace, reason,
                       explored=len(g.states),
                       elapsed=time.perf_counter() - t0)

    # the violation subgraph: runs that never meet the goal
    if goal.fired is None:
        allowed = {i for i, s in enumerate(g.states) if not goal.on_state(s)}

        def edge_ok(u: int, ci: int, v: int) -> bool:
            return v in allowed
    else:
        allowed = set(range(len(g.states)))

        def edge_ok(u: int, ci: int, v: int) -> bool:
            return not goal.on_edge(engine.commands[ci].name, g.states[v])

    # obligation entry points: (node, prefix-trace builder input)
    pending: dict[int, tuple] = {}  # node -> (anchor node, entry edge or None)
    if isinstance(prop.kind, Eventually):
        for i in g.inits:
            if i in allowed:
                pending.setdefault(i, (i, None))
    else:
        premise = _Sat(engine, prop.kind.premise)
        if premise.fired is None:
            for i in sorted(allowed):
                if premise.on_state(g.states[i]):
                    pending.setdefault(i, (i, None))
        else:
            for u in range(len(g.states)):
                for ci, v in g.succs[u]:
                    if premise.on_edge(engine.commands[ci].name, g.states[v]) \
                            and v in allowed and edge_ok(u, ci, v):
                        pending.setdefault(v, (u, ci))

    if not pending:
        return verdict(HOLDS)

    # states reachable from an obligation without meeting the goal
    sub_parents: dict[int, Optional[tuple[int, int]]] = {
        i: None for i in pending
    }
    frontier = list(pending)
    while frontier:
        nxt = []
        for u in frontier:
            for ci, v in g.succs[u]:
                if v in allowed and edge_ok(u, ci, v) and v not in sub_parents:
                    sub_parents[v] = (u, ci)
                    nxt.append(v)
        frontier = nxt
    region = set(sub_parents)

    sub_edges: dict[int, list[tuple[int, int]]] = {}
    for u in region:
        sub_edges[u] = [(ci, v) for ci, v in g.succs[u]
                        if v in region and edge_ok(u, ci, v)]

    # takeable fair commands per node (scheduler-aware, full graph)
    fair = set(engine.fair_idx)
    takeable: dict[int, frozenset] = {
        u: frozenset(ci for ci, _ in g.succs[u] if ci in fair)
        for u in region
    }

    for comp in _sccs(region, sub_edges):
        comp_set = set(comp)
        inner = [(u, ci, v) for u in comp for ci, v in sub_edges[u]
                 if v in comp_set]
        if not inner:
            continue  # trivial component, no cycle
        if len(comp) == 1 and not any(u == v for u, _, v in inner):
            continue
        always_takeable = frozenset.intersection(
            *(takeable[u] for u in comp)
        ) if comp else frozenset()
        fired_inside = {ci for _, ci, _ in inner}
        if not always_takeable <= fired_inside:
            continue  # some justice obligation cannot be met in this component

        # assemble a fair cycle: fire every always-takeable fair command at
        # least once, and route through a disabling state for every other
        # fair command
        edge_way: dict[int, tuple[int, int, int]] = {}
        for u, ci, v in inner:
            if ci in always_takeable and ci not in edge_way:
                edge_way[ci] = (u, ci, v)
        node_way: list[int] = []
        missing = fair - always_takeable
        for u in comp:
            lacking = missing - takeable[u]
            if lacking:
                node_way.append(u)
                missing -= lacking
            if not missing:
                break
        assert not missing, "fair command takeable everywhere yet not always"

        pend_in = sorted(comp_set & set(pending))
        anchor = pend_in[0] if pend_in else min(comp_set)

        cycle: list[tuple[int, int]] = []
        cur = anchor
        for u, ci, v in edge_way.values():
            cycle += _bfs_path(cur, u, comp_set, sub_edges)
            cycle.append((ci, v))
            cur = v
        for d in node_way:
            cycle += _bfs_path(cur, d, comp_set, sub_edges)
            cur = d
        cycle += _bfs_path(cur, anchor, comp_set, sub_edges)
        if not cycle:
            ci, v = next((ci, v) for ci, v in sub_edges[anchor]
                         if v in comp_set)
            cycle = [(ci, v)] + _bfs_path(v, anchor, comp_set, sub_edges)

        # entry: BFS tree inside the subgraph back to an obligation point
        entry_rev = []
        cur = anchor
        while sub_parents[cur] is not None:
            u, ci = sub_parents[cur]
            entry_rev.append((ci, cur))
            cur = u
        entry = entry_rev[::-1]
        first, edge_in = pending[cur]

        steps: list[Step] = []
        for ci, node in g.path(first):
            if ci < 0:
                steps.append(Step(0, "", engine.snapshot(g.states[node])))
            else:
                steps.append(Step(len(steps), engine.commands[ci].name,
                                  engine.snapshot(g.states[node])))
        if edge_in is not None:
            steps.append(Step(len(steps), engine.commands[edge_in].name,
                              engine.snapshot(g.states[cur])))
        for ci, node in entry:
            steps.append(Step(len(steps), engine.commands[ci].name,
                              engine.snapshot(g.states[node])))
        loop_start = len(steps) - 1
        for ci, node in cycle:
            steps.append(Step(len(steps), engine.commands[ci].name,
                              engine.snapshot(g.states[node])))
        return verdict(VIOLATED, Trace(steps, loop_start))

    return verdict(HOLDS)


def _check_bounded(ts: TransitionSystem, prop: Property,
                   budget: int = DEFAULT_BUDGET) -> Verdict:
    assert isinstance(prop.kind, BoundedAbsence)
    t0 = time.perf_counter()
    engine = Engine(ts)
    start = _Sat(engine, prop.kind.start)
    if start.fired is None:
        raise RuleError(
            f"property {prop.id}: bounded absence needs a command event "
            f"to open the window"
        )
    forb = _Sat(engine, prop.kind.forbidden)
    window = prop.kind.window
    tick = engine._tick

    try:
        g = _Graph(engine, budget)
    except SearchBudgetExceeded as e:
        return Verdict(prop.id, REJECTED, reason=f"budget: {e}",
                       explored=e.states, elapsed=time.perf_counter() - t0)

    def verdict(result, trace=None, reason=""):
        return Verdict(prop.id, result, trace, reason,
                       explored=len(g.states) + len(seen),
                       elapsed=time.perf_counter() - t0)

    def finish(node: int, k: int) -> Trace:
        rev = []
        cur = (node, k)
        while seen[cur] is not None:
            (pu, pk), ci = seen[cur]
            rev.append((ci, cur[0]))
            cur = (pu, pk)
        u_start, ci_start = opened[cur]
        steps = []
        for ci, n in g.path(u_start):
            if ci < 0:
                steps.append(Step(0, "", engine.snapshot(g.states[n])))
            else:
                steps.append(Step(len(steps), engine.commands[ci].name,
                                  engine.snapshot(g.states[n])))
        steps.append(Step(len(steps), engine.commands[ci_start].name,
                          engine.snapshot(g.states[cur[0]])))
        for ci, n in reversed(rev):
            steps.append(Step(len(steps), engine.commands[ci].name,
                              engine.snapshot(g.states[n])))
        return Trace(steps)

    seen: dict[tuple[int, int], Optional[tuple]] = {}
    opened: dict[tuple[int, int], tuple[int, int]] = {}
    frontier: list[tuple[int, int]] = []
    for u in range(len(g.states)):
        for ci, v in g.succs[u]:
            if start.on_edge(engine.commands[ci].name, g.states[v]):
                key = (v, 0)
                if key not in seen:
                    seen[key] = None
                    opened[key] = (u, ci)
                    frontier.append(key)

    for node, k in frontier:
        if forb.on_state(g.states[node]):
            return verdict(VIOLATED, finish(node, k))
    while frontier:
        nxt = []
        for node, k in frontier:
            for ci, v in g.succs[node]:
                k2 = k + 1 if ci in tick else k
                if k2 >= window:
                    continue
                key = (v, k2)
                if key in seen:
                    continue
                seen[key] = ((node, k), ci)
                if len(seen) > budget:
                    return verdict(
                        REJECTED,
                        reason=f"budget: product exceeded {budget} states",
                    )
                if forb.on_state(g.states[v]):
                    return verdict(VIOLATED, finish(v, k2))
                nxt.append(key)
        frontier = nxt
    return verdict(HOLDS)


def check_property(ts: TransitionSystem, prop: Property,
                   budget: int = DEFAULT_BUDGET) -> Verdict:
    if prop.defect:
        return Verdict(prop.id, REJECTED, reason=prop.defect)
    if isinstance(prop.kind, SafetyInvariant):
        return check_safety(ts, prop, budget)
    return check_liveness(ts, prop, budget)


# --------------------------------------------------------------------------
# properties from threat candidates

def _has_latency(r: Rule) -> bool:
    return isinstance(r.latency, ParamRef) or r.latency > 0


def _action_cmd(r: Rule) -> str:
    """Command that performs the rule's writes."""
    return f"{r.id}@run" if _has_latency(r) else r.id


def _first_cmd(r: Rule) -> str:
    """Command that senses the rule's trigger edge."""
    return f"{r.id}@arm" if _has_latency(r) else r.id


def _latch(cmd: str, value: bool = True) -> Expr:
    return Atom(cmd + FIRED_SUFFIX, "=", value)


def _shadowed(e: Expr) -> Expr:
    return subst_attrs(e, {a: a + SHADOW_SUFFIX for a in expr_attrs(e)})


def _rising(r: Rule) -> Expr:
    """Trigger newly true this tick, with trigger-time conditions."""
    t = r.trigger.expr
    return conj([t, Not(_shadowed(t))]
                + [c.expr for c in r.trigger_conditions])


def _match_action(r: Rule, rendered: str) -> Optional[Assignment]:
    for a in r.actions:
        if _assign_str(a) == rendered:
            return a
    return None


def instantiate_properties(brs: BoundRuleSet,
                           candidates: Sequence[ThreatCandidate]
                           ) -> list[Property]:
    """One or two checkable properties per candidate (none for T2).

    Confirmation polarity follows the pattern: T1 properties assert the
    chain and confirm when they hold; all others assert the absence of the
    interference and confirm when violated.
    """
    by_id = {r.id: r for r in brs.original}
    used: dict[str, int] = {}
    out: list[Property] = []

    def add(c: ThreatCandidate, suffix: str, kind: PropertyKind,
            confirm_on: str, text: str, rules: tuple):
        base = f"{c.kind}:{c.rule_i}->{c.rule_j}"
        if suffix:
            base += f":{suffix}"
        n = used.get(base, 0)
        used[base] = n + 1
        pid = base if n == 0 else f"{base}#{n + 1}"
        out.append(Property(pid, kind, origin=c.kind, candidate=c.key,
                            confirm_on=confirm_on, text=text, rules=rules))

    for c in candidates:
        ri = by_id.get(c.rule_i)
        rj = by_id.get(c.rule_j)
        if ri is None or rj is None:
            raise RuleError(f"candidate {c.kind} names unknown rule "
                            f"{c.rule_i if ri is None else c.rule_j}")

        if c.kind == "T1":
            via = c.witness.get("via", VIA_DIRECT)
            tardy = via.startswith("channel:") \
                and c.witness.get("channel_kind") == "tardy"
            if tardy:
                add(c, "", LeadsTo(FiredCond(_action_cmd(ri)),
                                   FiredCond(_first_cmd(rj))),
                    "holds",
                    f"every run of {c.rule_i} eventually activates "
                    f"{c.rule_j} through {via}",
                    (_action_cmd(ri), _first_cmd(rj)))
            else:
                bad = AllCond((
                    QUIESCENT,
                    ExprCond(conj([
                        _latch(_action_cmd(ri)),
                        _latch(_first_cmd(rj), False),
                        Not(_shadowed(rj.trigger.expr)),
                    ])),
                ))
                add(c, "", SafetyInvariant(bad), "holds",
                    f"whenever {c.rule_i} fires, {c.rule_j} fires in the "
                    f"same tick (unless its trigger was already true)",
                    (_action_cmd(ri), _first_cmd(rj)))

        elif c.kind == "T3":
            a = _match_action(ri, c.witness.get("action_i", ""))
            b = _match_action(rj, c.witness.get("action_j", ""))
            if a is None or b is None:
                raise RuleError(f"T3 witness does not match actions of "
                                f"{c.rule_i}/{c.rule_j}")
            for rule, other, act in ((ri, rj, a), (rj, ri, b)):
                if isinstance(act.value, Revert):
                    continue
                bad = AllCond((
                    QUIESCENT,
                    ExprCond(conj([
                        _latch(_action_cmd(rule)),
                        Atom(act.target, "!=", act.value),
                    ])),
                ))
                add(c, f"lost-{rule.id}", SafetyInvariant(bad), "violated",
                    f"{rule.id} fired but {act.target} ended the tick "
                    f"without its written value",
                    (_action_cmd(rule), _first_cmd(other)))

        elif c.kind == "T4":
            a = _match_action(ri, c.witness.get("action_i", ""))
            bad = AllCond((
                QUIESCENT,
                ExprCond(conj([ri.trigger.expr,
                               _latch(_action_cmd(rj))])),
            ))
            add(c, "override", SafetyInvariant(bad), "violated",
                f"{c.rule_j}'s delayed action fires while {c.rule_i}'s "
                f"trigger still holds",
                (_action_cmd(rj), _first_cmd(ri)))
            if a is not None and not isinstance(a.value, Revert):
                premise = conj([_rising(ri)]
                               + [x.expr for x in ri.action_conditions])
                add(c, "effect",
                    LeadsTo(ExprCond(premise),
                            ExprCond(Atom(a.target, "=", a.value))),
                    "violated",
                    f"once {c.rule_i} triggers, {a.target} eventually "
                    f"settles on its value",
                    (_first_cmd(ri), _action_cmd(rj)))

        elif c.kind == "T5":
            a = _match_action(ri, c.witness.get("action", ""))
            if a is None or a.extended is None:
                raise RuleError(f"T5 witness does not match an extended "
                                f"action of {c.rule_i}")
            idx = ri.actions.index(a)
            carrier = _action_cmd(ri)
            end_id = f"{carrier}@end{idx}"
            add(c, "completes",
                LeadsTo(FiredCond(carrier), FiredCond(end_id)), "violated",
                f"the hold started by {c.rule_i} always reaches its "
                f"terminal action",
                (carrier, end_id, _first_cmd(rj)))
            window = c.witness.get("window")
            if isinstance(window, int):
                add(c, "held",
                    BoundedAbsence(FiredCond(carrier), window,
                                   ExprCond(Atom(a.target, "!=", a.value))),
                    "violated",
                    f"{a.target} keeps its held value for the whole "
                    f"{window}-tick window",
                    (carrier, end_id, _first_cmd(rj)))

        elif c.kind == "T6":
            add(c, "",
                LeadsTo(ExprCond(_rising(ri)),
                        FiredCond(_action_cmd(ri))), "violated",
                f"once {c.rule_i} triggers, its action eventually executes",
                (_first_cmd(ri), _action_cmd(rj)))

        elif c.kind == "T7":
            co = next(
                (x for x in brs.connections
                 if x.parent == c.witness.get("parent")
                 and x.policy.value == c.witness.get("policy")),
                None,
            )
            if co is None:
                raise RuleError(f"T7 witness names unknown connection "
                                f"{c.witness.get('parent')!r}")
            power_off = Atom(co.power_attr, "!=", co.on_value)
            if co.policy is OfflinePolicy.DISABLE_RULES:
                closure = connection_closure(brs.connections)
                dep = {
                    name for name, ad in brs.attributes.items()
                    if ad.subject.name in closure.get(co.parent, ())
                }
                fam = [r for r in brs.rules if r.source_id == c.rule_j]
                for s in fam:
                    if not (s.read_attrs() | s.written_attrs()) & dep:
                        continue
                    if s.timer is None:
                        base = conj(
                            [s.trigger.expr, Not(_shadowed(s.trigger.expr))]
                            + [x.expr for x in s.trigger_conditions]
                            + [x.expr for x in s.action_conditions]
                            + [_latch(s.id, False)]
                        )
                    else:
                        base = conj([Atom(s.timer, "=", 0)]
                                    + [x.expr for x in s.action_conditions])
                    bad = AllCond((QUIESCENT,
                                   ExprCond(conj([base, power_off]))))
                    add(c, f"blocks-{s.id.replace('@', '.')}",
                        SafetyInvariant(bad), "violated",
                        f"{s.id} never sits ready while {co.parent} is "
                        f"switched off",
                        (s.id, _action_cmd(ri)))
            else:
                add(c, "starves",
                    LeadsTo(ExprCond(power_off), FiredCond(_first_cmd(rj))),
                    "violated",
                    f"even with {co.parent} off, {c.rule_j} still "
                    f"eventually fires",
                    (_first_cmd(rj), _action_cmd(ri)))

        # T2 yields no property: the rules agree, nothing to check

    return out


def update_candidates(candidates: Sequence[ThreatCandidate],
                      properties: Sequence[Property],
                      verdicts: Sequence[Verdict]) -> None:
    """Flip candidate statuses from the verdicts of their properties.

    A candidate is confirmed as soon as one property lands on its
    confirmation polarity, refuted when every property decided the other
    way, and left syntactic when nothing was checked or something was
    rejected."""
    by_vid = {v.property_id: v for v in verdicts}
    by_cand: dict[tuple, list[Property]] = {}
    for p in properties:
        if p.candidate is not None:
            by_cand.setdefault(p.candidate, []).append(p)
    for c in candidates:
        plist = by_cand.get(c.key)
        if not plist:
            continue
        hit = None
        undecided = []
        for p in plist:
            v = by_vid.get(p.id)
            if v is None or v.result == REJECTED:
                undecided.append(p.id)
                continue
            if (p.confirm_on == "holds" and v.result == HOLDS) or \
                    (p.confirm_on == "violated" and v.result == VIOLATED):
                hit = p
                break
        if hit is not None:
            c.status = CONFIRMED
            c.note = f"confirmed by {hit.id}"
        elif undecided:
            c.note = "undecided: " + ", ".join(undecided)
        else:
            c.status = REFUTED
            c.note = "refuted: " + ", ".join(p.id for p in plist)


# --------------------------------------------------------------------------
# routing and the suite runner

def _requirements(prop: Property) -> tuple[set[str], set[str]]:
    """Variables (including $preferences) and commands a property reads."""
    vars_: set[str] = set()
    cmds: set[str] = set()
    for cond in prop.conds():
        fired, exprs, _ = _flatten(cond)
        if fired is not None:
            cmds.add(fired)
        for e in exprs:
            vars_ |= expr_attrs(e)
            vars_ |= {"$" + p for p in expr_params(e)}
    return vars_, cmds


def route_property(slicers: Sequence[Slicer], prop: Property
                   ) -> tuple[Optional[Slicer], str]:
    """Pick the slicer that holds everything the property mentions."""
    vars_, cmds = _requirements(prop)
    all_vars: set[str] = set()
    all_cmds: set[str] = set()
    for sl in slicers:
        all_vars |= {v.name for v in sl.ts.vars}
        all_cmds |= {cc.name for cc in sl.ts.commands}
    missing = sorted(vars_ - all_vars) + sorted(cmds - all_cmds)
    if missing:
        return None, f"unknown-atom: {', '.join(missing)}"

    ordered = list(slicers)
    if prop.rules:
        owner = rule_owner(ordered, prop.rules[0])
        if owner is not None:
            ordered = [owner] + [sl for sl in ordered if sl is not owner]
    for sl in ordered:
        names = {v.name for v in sl.ts.vars}
        cnames = {cc.name for cc in sl.ts.commands}
        if vars_ <= names and cmds <= cnames:
            return sl, ""
    return None, (
        "cross-slicer: no single slicer covers "
        + ", ".join(sorted(vars_ | cmds))
        + "; re-run with --monolithic"
    )


@dataclass
class SlicerRun:
    """What a slicer was checked as: its (possibly compressed) system."""

    slicer_id: str
    ts: TransitionSystem
    vmap: Optional[ValueMap]
    property_ids: tuple


def _run_task(args):
    ts, prop, budget = args
    return check_property(ts, prop, budget)


def run_suite(slicers: Sequence[Slicer], properties: Sequence[Property],
              params: Mapping[str, tuple] | None = None, *,
              budget: int = DEFAULT_BUDGET, jobs: int = 1,
              compress_states: bool = True
              ) -> tuple[list[Verdict], list[SlicerRun]]:
    """Route every property, compress each slicer once, check everything.

    Verdicts come back in property order; ``jobs`` > 1 fans the independent
    checks out over worker processes."""
    params = dict(params or {})
    routed: list[tuple[Property, Optional[str], str]] = []
    per: dict[str, list[Property]] = {}
    for p in properties:
        if p.defect:
            routed.append((p, None, p.defect))
            continue
        sl, why = route_property(slicers, p)
        if sl is None:
            routed.append((p, None, why))
        else:
            routed.append((p, sl.id, ""))
            per.setdefault(sl.id, []).append(p)

    by_id = {sl.id: sl for sl in slicers}
    runs: dict[str, SlicerRun] = {}
    prepped: dict[str, dict[str, Property]] = {}
    for sid, plist in per.items():
        sl = by_id[sid]
        if compress_states:
            extras = [e for p in plist for e in p.exprs()]
            cts, vmap = compress(sl.ts, params, extras=extras)
            pl2 = {p.id: recode_property(p, vmap, params) for p in plist}
            runs[sid] = SlicerRun(sid, cts, vmap, tuple(p.id for p in plist))
        else:
            pl2 = {p.id: p for p in plist}
            runs[sid] = SlicerRun(sid, sl.ts, None, tuple(p.id for p in plist))
        prepped[sid] = pl2

    tasks = [(runs[sid].ts, prepped[sid][p.id], budget)
             for p, sid, _ in routed if sid is not None]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]

    verdicts: list[Verdict] = []
    it = iter(results)
    for p, sid, why in routed:
        if sid is None:
            verdicts.append(Verdict(p.id, REJECTED, reason=why))
        else:
            v = next(it)
            v.slicer = sid
            verdicts.append(v)
    return verdicts, [runs[sid] for sid in sorted(runs)]


# --------------------------------------------------------------------------
# user property files

_PROP_HEADS = ("never", "always", "eventually")


def _check_value(attr: str, op: str, value, attributes, params) -> str:
    decl = attributes.get(attr)
    if decl is None:
        return f"unknown-atom: {attr}"
    dom = decl.domain
    vals = [value]
    if isinstance(value, ParamRef):
        if value.name not in params:
            return f"unknown-preference: ${value.name}"
        vals = list(params[value.name])
    for v in vals:
        if op in ("<", "<=", ">", ">="):
            if not isinstance(dom, IntDomain):
                return f"type-mismatch: {attr} is not numeric"
            if not isinstance(v, int) or isinstance(v, bool):
                return f"type-mismatch: {attr} {op} {v!r}"
        elif isinstance(dom, BoolDomain):
            if not isinstance(v, bool):
                return f"type-mismatch: {attr} is boolean, got {v!r}"
        elif isinstance(dom, EnumDomain):
            if v not in dom.labels:
                return (f"type-mismatch: {v!r} is not a value of {attr} "
                        f"({', '.join(dom.labels)})")
        elif isinstance(dom, IntDomain):
            if not isinstance(v, int) or isinstance(v, bool):
                return f"type-mismatch: {attr} is numeric, got {v!r}"
    return ""


def _validate_expr(e: Expr, attributes, params) -> str:
    for a in atoms(e):
        defect = _check_value(a.attr, a.op, a.value, attributes, params)
        if defect:
            return defect
    return ""


def parse_properties(text: str, attributes: Mapping[str, object],
                     params: Mapping[str, tuple] | None = None,
                     filename: str = "<props>") -> list[Property]:
    """One property per line over canonical attribute names.

    Forms: ``never EXPR``, ``always EXPR``, ``eventually EXPR`` and
    ``EXPR leadsto EXPR``; ``#`` starts a comment.  Unknown attributes or
    mistyped comparisons mark the property for rejection instead of
    failing the load."""
    params = params or {}
    out: list[Property] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{filename}:{lineno}"
        pid = f"p{len(out) + 1}"
        head = line.split(None, 1)[0]
        if head in _PROP_HEADS:
            body = line[len(head):].strip()
            e = parse_expression(body, where)
            if head == "never":
                kind: PropertyKind = SafetyInvariant(ExprCond(e))
            elif head == "always":
                kind = SafetyInvariant(ExprCond(Not(e)))
            else:
                kind = Eventually(ExprCond(e))
            exprs = [e]
        else:
            parts = re.split(r"\bleadsto\b", line)
            if len(parts) != 2:
                raise RuleError(
                    f"{where}: expected 'never/always/eventually EXPR' or "
                    f"'EXPR leadsto EXPR'"
                )
            pe = parse_expression(parts[0].strip(), where)
            qe = parse_expression(parts[1].strip(), where)
            kind = LeadsTo(ExprCond(pe), ExprCond(qe))
            exprs = [pe, qe]
        defect = ""
        for e in exprs:
            defect = _validate_expr(e, attributes, params)
            if defect:
                break
        out.append(Property(pid, kind, origin="user", text=line,
                            defect=defect))
    return out


# --------------------------------------------------------------------------
# traces

def replay(ts: TransitionSystem, trace: Trace) -> None:
    """Drive the trace through the engine; raises when any step diverges."""
    engine = Engine(ts)
    first = trace.steps[0].state
    s = tuple(first[n] for n in engine.names)
    if s not in set(engine.initial_states()):
        raise RuleError("trace does not start in an initial state")
    for st in trace.steps[1:]:
        try:
            s = engine.apply(st.command, s)
        except (KeyError, ValueError) as e:
            raise RuleError(f"replay diverged at step {st.index}: {e}") from e
        if engine.snapshot(s) != st.state:
            raise RuleError(f"replay diverged at step {st.index}")
    if trace.loop_start is not None:
        if trace.steps[-1].state != trace.steps[trace.loop_start].state:
            raise RuleError("lasso does not close on its loop state")


def render_trace(trace: Trace, vmap: Optional[ValueMap] = None) -> str:
    """Human-readable table: per step, the command and what changed."""
    def show(var, val):
        if vmap is not None:
            val = vmap.decode(var, val)
        if val is True:
            val = "true"
        elif val is False:
            val = "false"
        return f"{var}={val}"

    lines = []
    prev: Optional[dict] = None
    for st in trace.steps:
        if prev is None:
            changed = sorted(st.state)
        else:
            changed = sorted(k for k, v in st.state.items() if prev[k] != v)
        cmd = st.command or "(init)"
        mark = "  <- loop" if st.index == trace.loop_start else ""
        body = " ".join(show(k, st.state[k]) for k in changed)
        lines.append(f"{st.index:>4}  {cmd:<32} {body}{mark}")
        prev = st.state
    if trace.loop_start is not None:
        lines.append(f"      (loops back to step {trace.loop_start})")
    return "\n".join(lines)
