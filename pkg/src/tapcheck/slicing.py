"""Dependency-closed partitioning of a transition system into slicers.

Rules influence each other through shared written attributes, channel
physics and connection gating.  Grouping rules by that influence relation
and projecting the system onto each group's variables yields independent
sub-systems: no command outside a slicer ever writes one of its variables,
so a property whose atoms live inside one slicer has the same verdict
there as on the monolithic model, at a fraction of the state space.

Rules that share no dependency with anything land together in one final
``rest`` slicer, along with purely environment-driven attributes no rule
reads or writes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

from .errors import RuleError
from .fsm import (
    TICK,
    CopyFrom,
    GuardedCommand,
    SetConst,
    SetParamCode,
    SettleStep,
    TransitionSystem,
    VarRole,
)
from .interactions import DependencyEdge
from .ir import ParamRef, atoms


@dataclass(frozen=True)
class Slicer:
    """One dependency-closed group of rules plus its projected system."""

    id: str
    rules: tuple[str, ...]
    ts: TransitionSystem
    edges: tuple[DependencyEdge, ...] = ()

    def var_names(self) -> set[str]:
        return {v.name for v in self.ts.vars}

    def manifest(self) -> dict:
        return {
            "id": self.id,
            "rules": list(self.rules),
            "vars": [v.name for v in self.ts.vars],
            "commands": [c.name for c in self.ts.commands],
            "edges": [
                {"source": e.source, "sink": e.sink, "via": e.via}
                for e in self.edges
            ],
        }


class _Union:
    def __init__(self):
        self._up: dict = {}

    def find(self, x):
        up = self._up
        root = x
        while up.setdefault(root, root) != root:
            root = up[root]
        while up[x] != root:
            up[x], x = root, up[x]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self._up[rb] = ra
        return True


def _expr_vars(e) -> set[str]:
    out = set()
    for a in atoms(e):
        out.add(a.attr)
        if isinstance(a.value, ParamRef):
            out.add("$" + a.value.name)
    return out


def _update_reads(u) -> set[str]:
    if isinstance(u, CopyFrom):
        return {u.source}
    if isinstance(u, SettleStep):
        return _expr_vars(u.active)
    if isinstance(u, SetConst) and isinstance(u.value, ParamRef):
        return {"$" + u.value.name}
    if isinstance(u, SetParamCode):
        return {"$" + u.param}
    return set()


def _cmd_vars(c: GuardedCommand) -> set[str]:
    """Every variable the command mentions, read or written."""
    out = _expr_vars(c.guard)
    for u in c.updates:
        out.add(u.var)
        out |= _update_reads(u)
    return out


def slice_system(ts: TransitionSystem,
                 edges: Sequence[DependencyEdge] = ()) -> list[Slicer]:
    """Partition the rules into dependency-closed groups and project.

    Rules are glued together when one writes state the other reads or
    writes (directly, through a channel's drift, or through a power gate),
    and along the given dependency edges.  Each group becomes a slicer;
    rules untouched by any edge or shared state form the trailing ``rest``
    slicer together with attributes driven only by the environment.
    """
    roles = {v.name: v for v in ts.vars}

    def glue_node(name: str):
        v = roles.get(name)
        if v is None:
            return None
        if v.role in (VarRole.ATTRIBUTE, VarRole.TIMER):
            return ("var", v.name)
        if v.role in (VarRole.SHADOW, VarRole.MEMORY):
            return ("var", v.base)
        return None  # latches, settle counters and parameters do not couple

    uf = _Union()
    rule_ids = sorted({c.rule for c in ts.commands if c.rule})
    for r in rule_ids:
        uf.find(("rule", r))
    for v in ts.vars:
        if v.role in (VarRole.ATTRIBUTE, VarRole.TIMER):
            uf.find(("var", v.name))

    for e in edges:
        uf.union(("rule", e.source), ("rule", e.sink))

    body = [c for c in ts.commands if c.name != TICK]
    for c in body:
        write_nodes = [n for n in (glue_node(u.var) for u in c.updates) if n]
        if c.rule:
            owner = ("rule", c.rule)
            for n in write_nodes:
                uf.union(owner, n)
            # the timer variable ties a split rule's halves together
            for name in _cmd_vars(c):
                v = roles.get(name)
                if v is not None and v.role is VarRole.TIMER:
                    uf.union(owner, ("var", name))
        else:
            # environment/drift: the driven attribute is coupled to every
            # variable the command reads (channel causes, power gates) or
            # co-writes (immediate-channel splices)
            own = ("var", c.attr)
            for n in write_nodes:
                uf.union(own, n)
            for name in _cmd_vars(c):
                n = glue_node(name)
                if n:
                    uf.union(own, n)

    # a rule reading an attribute joins the attribute's group only when some
    # rule influences that attribute; free environment inputs stay shared
    while True:
        rule_rooted = {uf.find(("rule", r)) for r in rule_ids}
        changed = False
        for c in body:
            if not c.rule:
                continue
            owner = ("rule", c.rule)
            for name in _cmd_vars(c):
                n = glue_node(name)
                if n and uf.find(n) in rule_rooted and uf.union(owner, n):
                    changed = True
        if not changed:
            break

    clusters: dict = {}
    for r in rule_ids:
        clusters.setdefault(uf.find(("rule", r)), []).append(r)
    node_vars: dict = {}
    for v in ts.vars:
        if v.role in (VarRole.ATTRIBUTE, VarRole.TIMER):
            node_vars.setdefault(uf.find(("var", v.name)), set()).add(v.name)

    linked: set[str] = set()
    for e in edges:
        linked.add(e.source)
        linked.add(e.sink)

    groups: list[tuple[tuple[str, ...], set[str]]] = []
    rest_rules: list[str] = []
    rest_seed: set[str] = set()
    for root, members in clusters.items():
        members = sorted(members)
        seed = node_vars.get(root, set())
        if len(members) == 1 and members[0] not in linked:
            rest_rules += members
            rest_seed |= seed
        else:
            groups.append((tuple(members), seed))

    out: list[Slicer] = []
    covered: set[str] = set()
    for i, (members, seed) in enumerate(sorted(groups), 1):
        mset = frozenset(members)
        for e in edges:
            if (e.source in mset) != (e.sink in mset):
                raise RuleError(
                    f"dependency {e.source} -> {e.sink} crosses slicer bounds"
                )
        own = tuple(e for e in edges if e.source in mset and e.sink in mset)
        out.append(Slicer(f"slice{i}", members, _project(ts, mset, seed), own))
        covered |= out[-1].var_names()

    # attributes in no group's projection (purely environment-driven and
    # unread, or read only by rest members) fall to the rest slicer
    for root, vs in node_vars.items():
        if root not in clusters:
            rest_seed |= vs - covered
    if rest_rules or rest_seed or not out:
        out.append(
            Slicer("rest", tuple(sorted(rest_rules)),
                   _project(ts, frozenset(rest_rules), rest_seed))
        )
    return out


def _project(ts: TransitionSystem, members: frozenset, seed: Iterable[str]
             ) -> TransitionSystem:
    """Restrict the system to the members' variables plus everything the
    surviving bookkeeping commands mention; the tick is rebuilt to touch
    only kept variables."""
    keep: dict[str, GuardedCommand] = {}
    v: set[str] = set(seed)
    for c in ts.commands:
        if c.rule and c.rule in members:
            keep[c.name] = c
            v |= _cmd_vars(c)
    changed = True
    while changed:
        changed = False
        for c in ts.commands:
            if c.name in keep or c.rule or c.name == TICK:
                continue
            if c.attr in v or any(u.var in v for u in c.updates):
                keep[c.name] = c
                before = len(v)
                v |= _cmd_vars(c)
                changed = changed or len(v) != before

    # nothing outside the slicer may write its variables, or projected
    # behaviour would diverge from the monolithic model
    for c in ts.commands:
        if c.name in keep or c.name == TICK:
            continue
        for u in c.updates:
            if u.var in v:
                raise RuleError(
                    f"projection would lose writer {c.name} of {u.var}")

    tick = ts.command(TICK)
    keep[TICK] = replace(tick,
                         updates=tuple(u for u in tick.updates if u.var in v))

    order = {c.name: i for i, c in enumerate(ts.commands)}
    cmds = tuple(keep[n] for n in sorted(keep, key=order.__getitem__))
    ts2 = TransitionSystem(
        vars=tuple(x for x in ts.vars if x.name in v),
        init={n: val for n, val in ts.init.items() if n in v},
        commands=cmds,
        fairness=frozenset(n for n in ts.fairness if n in keep),
        warnings=ts.warnings,
    )
    ts2.validate()
    return ts2


def covering(slicers: Sequence[Slicer], names: Iterable[str]
             ) -> Optional[Slicer]:
    """First slicer whose variable set includes every requested name."""
    need = set(names)
    for s in slicers:
        if need <= s.var_names():
            return s
    return None


def rule_owner(slicers: Sequence[Slicer], rule_id: str) -> Optional[Slicer]:
    for s in slicers:
        if rule_id in s.rules:
            return s
    return None
