"""Explicit-state executor for transition systems.

States are value tuples in variable-declaration order.  A step fires one
command; urgent commands (user rules) preempt the bookkeeping ones, and the
clock tick additionally waits for pending channel drift, so sensed values
cross one threshold per tick instead of jumping.
"""

from __future__ import annotations

from typing import Callable, Iterator, Optional

from .fsm import (
    CopyFrom,
    DriftMove,
    GuardedCommand,
    SetConst,
    SetParamCode,
    SettleStep,
    Tag,
    TickDown,
    TransitionSystem,
    VarRole,
)
from .ir import And, Atom, Expr, IntDomain, Lit, Not, Or, ParamRef, _OPS

State = tuple


class Engine:
    """Compiles guards and updates into closures over state tuples."""

    def __init__(self, ts: TransitionSystem):
        self.ts = ts
        self.names = [v.name for v in ts.vars]
        self.index = {n: i for i, n in enumerate(self.names)}
        self.commands = list(ts.commands)
        self._guards = [self.compile_expr(c.guard) for c in self.commands]
        self._updates = [self._compile_updates(c) for c in self.commands]
        self._urgent = [i for i, c in enumerate(self.commands) if c.urgent]
        self._relaxed = [i for i, c in enumerate(self.commands) if not c.urgent]
        self._drift = {i for i, c in enumerate(self.commands)
                       if c.tag is Tag.CHANNEL_DRIFT}
        self._tick = {i for i, c in enumerate(self.commands)
                      if c.tag is Tag.TIMER_TICK and not c.urgent}
        self.fair_idx = [i for i, c in enumerate(self.commands) if c.fair]

    # -- compilation ---------------------------------------------------------

    def compile_expr(self, e: Expr) -> Callable[[State], bool]:
        if isinstance(e, Atom):
            i = self.index[e.attr]
            op = _OPS[e.op]
            if isinstance(e.value, ParamRef):
                j = self.index["$" + e.value.name]
                return lambda s: op(s[i], s[j])
            v = e.value
            return lambda s: op(s[i], v)
        if isinstance(e, Lit):
            v = e.value
            return lambda s: v
        if isinstance(e, Not):
            f = self.compile_expr(e.child)
            return lambda s: not f(s)
        if isinstance(e, And):
            fs = [self.compile_expr(p) for p in e.parts]
            return lambda s: all(f(s) for f in fs)
        if isinstance(e, Or):
            fs = [self.compile_expr(p) for p in e.parts]
            return lambda s: any(f(s) for f in fs)
        raise TypeError(e)

    def _compile_updates(self, c: GuardedCommand
                         ) -> Callable[[State], Optional[State]]:
        """Returns the successor, or None when a move leaves its domain
        (the command counts as disabled then)."""
        ops = []
        for u in c.updates:
            i = self.index[u.var]
            if isinstance(u, SetConst):
                if isinstance(u.value, ParamRef):
                    j = self.index["$" + u.value.name]
                    ops.append(lambda s, i=i, j=j: (i, s[j]))
                else:
                    ops.append(lambda s, i=i, v=u.value: (i, v))
            elif isinstance(u, SetParamCode):
                j = self.index["$" + u.param]
                table = dict(u.table)
                ops.append(lambda s, i=i, j=j, t=table: (i, t[s[j]]))
            elif isinstance(u, CopyFrom):
                j = self.index[u.source]
                ops.append(lambda s, i=i, j=j: (i, s[j]))
            elif isinstance(u, TickDown):
                ops.append(lambda s, i=i: (i, s[i] - 1 if s[i] > 0 else s[i]))
            elif isinstance(u, SettleStep):
                act = self.compile_expr(u.active)
                r = u.reload
                ops.append(
                    lambda s, i=i, act=act, r=r:
                    (i, (s[i] - 1 if s[i] > 0 else s[i]) if act(s) else r)
                )
            elif isinstance(u, DriftMove):
                dom = self.ts.var(u.var).domain
                assert isinstance(dom, IntDomain)
                lo, hi, d = dom.lo, dom.hi, u.delta
                ops.append(
                    lambda s, i=i, lo=lo, hi=hi, d=d:
                    (i, s[i] + d) if lo <= s[i] + d <= hi else None
                )
            else:
                raise TypeError(u)

        def apply(s: State) -> Optional[State]:
            out = list(s)
            for op in ops:
                res = op(s)
                if res is None:
                    return None
                out[res[0]] = res[1]
            return tuple(out)

        return apply

    # -- state space ---------------------------------------------------------

    def initial_states(self) -> list[State]:
        base = [self.ts.init[n] for n in self.names]
        axes: list[tuple[int, tuple]] = []
        for i, v in enumerate(self.ts.vars):
            if v.role is VarRole.PARAMETER:
                axes.append((i, tuple(v.domain.values())))
        states = [tuple(base)]
        for i, vals in axes:
            states = [s[:i] + (v,) + s[i + 1:] for s in states for v in vals]
        return states

    def enabled(self, ci: int, s: State) -> bool:
        return self._guards[ci](s) and self._updates[ci](s) is not None

    def quiescent(self, s: State) -> bool:
        return not any(self.enabled(i, s) for i in self._urgent)

    def successors(self, s: State) -> list[tuple[int, State]]:
        out = []
        for i in self._urgent:
            if self._guards[i](s):
                ns = self._updates[i](s)
                if ns is not None:
                    out.append((i, ns))
        if out:
            return out
        drifting = False
        relaxed = []
        for i in self._relaxed:
            if self._guards[i](s):
                ns = self._updates[i](s)
                if ns is not None:
                    relaxed.append((i, ns))
                    if i in self._drift:
                        drifting = True
        if drifting:
            relaxed = [(i, ns) for i, ns in relaxed if i not in self._tick]
        return relaxed

    def apply(self, name: str, s: State) -> State:
        """Fire a command by name; raises if it is not currently taken."""
        for i, ns in self.successors(s):
            if self.commands[i].name == name:
                return ns
        raise ValueError(f"command {name} not enabled")

    def snapshot(self, s: State) -> dict:
        return dict(zip(self.names, s))

    def reachable(self, limit: int) -> Iterator[tuple[State, int, State]]:
        """Breadth-first edge stream (state, command index, successor);
        initial states appear as (None, -1, state) entries first."""
        seen = set()
        frontier = []
        for s0 in self.initial_states():
            if s0 not in seen:
                seen.add(s0)
                frontier.append(s0)
                yield (None, -1, s0)
        while frontier:
            nxt = []
            for s in frontier:
                for ci, ns in self.successors(s):
                    yield (s, ci, ns)
                    if ns not in seen:
                        seen.add(ns)
                        if len(seen) > limit:
                            raise SearchBudgetExceeded(len(seen))
                        nxt.append(ns)
            frontier = nxt


class SearchBudgetExceeded(Exception):
    def __init__(self, states: int):
        super().__init__(f"state budget exceeded at {states} states")
        self.states = states
