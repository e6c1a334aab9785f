"""NuSMV text emitter for cross-checking verdicts with a symbolic tool.

The built-in explicit-state checker stays the engine of record; this module
renders the same guarded-command system as a single-module SMV model so the
same properties can be handed to an external symbolic checker.  The
interleaving scheduler is made explicit: a ``last_cmd`` variable records
which command produced the current state, urgency and the drift-before-tick
priority become guard strengthening, and weak fairness on commands becomes
one JUSTICE constraint per fair command.

Output is deterministic down to the byte for identical inputs (golden-file
friendly): declaration order follows the transition system, and every
generated name comes from one symbol table filled in a fixed order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .checking import (
    BoundedAbsence,
    Cond,
    Eventually,
    LeadsTo,
    Property,
    SafetyInvariant,
    _flatten,
    recode_property,
    route_property,
)
from .errors import RuleError
from .fsm import (
    BoolDomain,
    CopyFrom,
    DriftMove,
    EnumDomain,
    ExplicitDomain,
    GuardedCommand,
    IntDomain,
    SetConst,
    SetParamCode,
    SettleStep,
    Tag,
    TickDown,
    TransitionSystem,
    VarRole,
    compress,
)
from .ir import And, Atom, Expr, Lit, Not, Or, ParamRef
from .slicing import Slicer

# Words NuSMV claims for itself; generated identifiers step around them.
_KEYWORDS = frozenset((
    "MODULE DEFINE CONSTANTS VAR IVAR FROZENVAR INIT TRANS INVAR SPEC "
    "CTLSPEC LTLSPEC INVARSPEC PSLSPEC COMPUTE NAME ISA ASSIGN FAIRNESS "
    "JUSTICE COMPASSION process array of boolean integer real word bool "
    "signed unsigned extend resize sizeof next init self union in xor "
    "xnor case esac mod abs min max count TRUE FALSE AG AF AX EG EF EX "
    "A E F G X U V S T O H Y Z"
).split())


class _Symbols:
    """One namespace for everything the file declares or references."""

    def __init__(self):
        self.used: set[str] = set()

    def fresh(self, raw: str) -> str:
        s = re.sub(r"[^A-Za-z0-9_]", "_", raw)
        if not s or not s[0].isalpha():
            s = "x" + s
        if s in _KEYWORDS:
            s += "_"
        out, n = s, 1
        while out in self.used:
            out = f"{s}_{n}"
            n += 1
        self.used.add(out)
        return out


@dataclass(frozen=True)
class SmvModel:
    """One emitted file: its suggested name, full source text, and which
    properties made it in (or were skipped, with reasons)."""

    name: str
    text: str
    properties: tuple[str, ...]
    skipped: tuple[tuple[str, str], ...] = ()

    def filename(self) -> str:
        return re.sub(r"[^A-Za-z0-9_.-]", "_", self.name) + ".smv"


class _Emitter:
    def __init__(self, ts: TransitionSystem, name: str):
        ts.validate()
        self.ts = ts
        self.name = name
        self.syms = _Symbols()
        self.vname: dict[str, str] = {}
        for v in ts.vars:
            raw = "p_" + v.name[1:] if v.name.startswith("$") else v.name
            self.vname[v.name] = self.syms.fresh(raw)
        self.last_cmd = self.syms.fresh("last_cmd")
        self.cnone = self.syms.fresh("c_none")
        self.cconst: dict[str, str] = {}
        self.en: dict[str, str] = {}
        self.go: dict[str, str] = {}
        for c in ts.commands:
            core = self.syms.fresh("c_" + c.name)[2:]
            self.cconst[c.name] = "c_" + core
            self.en[c.name] = self.syms.fresh("en_" + core)
            self.go[c.name] = self.syms.fresh("go_" + core)
        labels = set()
        for v in ts.vars:
            vals = v.domain.values() if isinstance(
                v.domain, (EnumDomain, ExplicitDomain)) else ()
            labels.update(x for x in vals if isinstance(x, str))
        self.label: dict[str, str] = {}
        for lab in sorted(labels):
            self.label[lab] = self.syms.fresh(lab)
        self.urgent_any = self.syms.fresh("urgent_any")
        self.drift_pending = self.syms.fresh("drift_pending")
        self.any_go = self.syms.fresh("any_go")
        self.quiescent = self.syms.fresh("quiescent")

    # -- expressions -------------------------------------------------------

    def value(self, v) -> str:
        if isinstance(v, bool):
            return "TRUE" if v else "FALSE"
        if isinstance(v, int):
            return str(v)
        if isinstance(v, str):
            if v not in self.label:
                raise RuleError(f"value {v!r} not in any declared domain")
            return self.label[v]
        if isinstance(v, ParamRef):
            return self.vname["$" + v.name]
        raise TypeError(f"cannot render value {v!r}")

    def expr(self, e: Expr) -> str:
        if isinstance(e, Atom):
            return f"{self.vname[e.attr]} {e.op} {self.value(e.value)}"
        if isinstance(e, Lit):
            return "TRUE" if e.value else "FALSE"
        if isinstance(e, Not):
            return f"!({self.expr(e.child)})"
        if isinstance(e, And):
            if not e.parts:
                return "TRUE"
            return "(" + " & ".join(self.expr(p) for p in e.parts) + ")"
        if isinstance(e, Or):
            if not e.parts:
                return "FALSE"
            return "(" + " | ".join(self.expr(p) for p in e.parts) + ")"
        raise TypeError(f"not an expression node: {e!r}")

    # -- enabledness: guard plus stay-in-domain side conditions -------------

    def _domain_conds(self, cmd: GuardedCommand) -> list[str]:
        conds = []
        for u in cmd.updates:
            dom = self.ts.var(u.var).domain
            name = self.vname[u.var]
            if isinstance(u, SetConst):
                v = u.value
                if isinstance(v, ParamRef):
                    pdom = self.ts.var("$" + v.name).domain
                    if any(pv not in dom for pv in pdom.values()):
                        good = [pv for pv in pdom.values() if pv in dom]
                        pv_name = self.vname["$" + v.name]
                        conds.append("(" + " | ".join(
                            f"{pv_name} = {self.value(g)}" for g in good
                        ) + ")" if good else "FALSE")
                elif v not in dom:
                    conds.append("FALSE")
            elif isinstance(u, SetParamCode):
                if any(code not in dom for _, code in u.table):
                    raise RuleError(
                        f"command {cmd.name}: coded write leaves {u.var}'s "
                        f"domain")
            elif isinstance(u, CopyFrom):
                src = self.ts.var(u.source).domain
                if isinstance(dom, IntDomain) and isinstance(src, IntDomain):
                    if src.lo < dom.lo:
                        conds.append(f"{self.vname[u.source]} >= {dom.lo}")
                    if src.hi > dom.hi:
                        conds.append(f"{self.vname[u.source]} <= {dom.hi}")
                elif any(x not in dom for x in src.values()):
                    good = [x for x in src.values() if x in dom]
                    sname = self.vname[u.source]
                    conds.append("(" + " | ".join(
                        f"{sname} = {self.value(g)}" for g in good
                    ) + ")" if good else "FALSE")
            elif isinstance(u, (TickDown, SettleStep)):
                # counts down only while positive, so it can fall below a
                # positive floor but never below zero
                if isinstance(dom, IntDomain) and dom.lo > 0:
                    conds.append(f"({name} <= 0 | {name} - 1 >= {dom.lo})")
            elif isinstance(u, DriftMove):
                if u.delta > 0:
                    conds.append(f"{name} + {u.delta} <= {dom.hi}")
                else:
                    conds.append(f"{name} - {-u.delta} >= {dom.lo}")
            else:
                raise TypeError(u)
        return conds

    def enabled_def(self, cmd: GuardedCommand) -> str:
        parts = [self.expr(cmd.guard)] + self._domain_conds(cmd)
        return " & ".join(parts)

    # -- next-state value per update ----------------------------------------

    def next_value(self, u) -> str:
        name = self.vname[u.var]
        if isinstance(u, SetConst):
            return self.value(u.value)
        if isinstance(u, SetParamCode):
            pname = self.vname["$" + u.param]
            pdom = self.ts.var("$" + u.param).domain
            covered = {pv for pv, _ in u.table}
            missing = [pv for pv in pdom.values() if pv not in covered]
            if missing:
                raise RuleError(
                    f"coded write on {u.var} misses parameter values "
                    f"{missing}")
            rows = [f"{pname} = {self.value(pv)} : {code};"
                    for pv, code in u.table[:-1]]
            rows.append(f"TRUE : {u.table[-1][1]};")
            return "case " + " ".join(rows) + " esac"
        if isinstance(u, CopyFrom):
            return self.vname[u.source]
        if isinstance(u, TickDown):
            return f"case {name} > 0 : {name} - 1; TRUE : {name}; esac"
        if isinstance(u, SettleStep):
            active = self.expr(u.active)
            return (f"case !({active}) : {u.reload}; "
                    f"{name} > 0 : {name} - 1; TRUE : {name}; esac")
        if isinstance(u, DriftMove):
            if u.delta > 0:
                return f"{name} + {u.delta}"
            return f"{name} - {-u.delta}"
        raise TypeError(u)

    # -- layout --------------------------------------------------------------

    def _type_of(self, dom) -> str:
        if isinstance(dom, BoolDomain):
            return "boolean"
        if isinstance(dom, EnumDomain):
            return "{" + ", ".join(self.label[x] for x in dom.labels) + "}"
        if isinstance(dom, IntDomain):
            return f"{dom.lo}..{dom.hi}"
        if isinstance(dom, ExplicitDomain):
            vals = dom.values()
            if all(isinstance(x, bool) for x in vals):
                return "boolean"
            return "{" + ", ".join(self.value(x) for x in vals) + "}"
        raise TypeError(dom)

    def emit(self, properties: Sequence[Property]
             ) -> tuple[str, list[str], list[tuple[str, str]]]:
        ts = self.ts
        state_vars = [v for v in ts.vars if v.role is not VarRole.PARAMETER]
        frozen = [v for v in ts.vars if v.role is VarRole.PARAMETER]
        out = [f"-- {self.name}: {len(ts.vars)} variables, "
               f"{len(ts.commands)} commands"]
        out.append("MODULE main")
        out.append("")
        out.append("VAR")
        for v in state_vars:
            out.append(f"  {self.vname[v.name]} : {self._type_of(v.domain)};")
        consts = [self.cnone] + [self.cconst[c.name] for c in ts.commands]
        out.append(f"  {self.last_cmd} : {{{', '.join(consts)}}};")
        if frozen:
            out.append("")
            out.append("FROZENVAR")
            for v in frozen:
                out.append(
                    f"  {self.vname[v.name]} : {self._type_of(v.domain)};")
        out.append("")
        out.append("ASSIGN")
        for v in state_vars:
            out.append(f"  init({self.vname[v.name]}) := "
                       f"{self.value(ts.init[v.name])};")
        out.append(f"  init({self.last_cmd}) := {self.cnone};")
        out.append("")
        out.append("DEFINE")
        for c in ts.commands:
            out.append(f"  {self.en[c.name]} := {self.enabled_def(c)};")
        urgent = [c for c in ts.commands if c.urgent]
        drift = [c for c in ts.commands
                 if not c.urgent and c.tag is Tag.CHANNEL_DRIFT]
        out.append("  %s := %s;" % (self.urgent_any, " | ".join(
            self.en[c.name] for c in urgent) or "FALSE"))
        out.append("  %s := %s;" % (self.drift_pending, " | ".join(
            self.en[c.name] for c in drift) or "FALSE"))
        for c in ts.commands:
            if c.urgent:
                rhs = self.en[c.name]
            elif c.tag is Tag.TIMER_TICK:
                rhs = (f"{self.en[c.name]} & !{self.urgent_any}"
                       f" & !{self.drift_pending}")
            else:
                rhs = f"{self.en[c.name]} & !{self.urgent_any}"
            out.append(f"  {self.go[c.name]} := {rhs};")
        out.append("  %s := %s;" % (self.any_go, " | ".join(
            self.go[c.name] for c in ts.commands) or "FALSE"))
        out.append(f"  {self.quiescent} := !{self.urgent_any};")
        out.append("")
        out.append("TRANS")
        rows = []
        for c in ts.commands:
            written = {u.var: self.next_value(u) for u in c.updates}
            bits = [self.go[c.name],
                    f"next({self.last_cmd}) = {self.cconst[c.name]}"]
            for v in state_vars:
                nxt = written.get(v.name, self.vname[v.name])
                bits.append(f"next({self.vname[v.name]}) = ({nxt})")
            rows.append("(" + " & ".join(bits) + ")")
        stutter = [f"!{self.any_go}", f"next({self.last_cmd}) = {self.cnone}"]
        stutter += [f"next({self.vname[v.name]}) = {self.vname[v.name]}"
                    for v in state_vars]
        rows.append("(" + " & ".join(stutter) + ")")
        out.append("    " + "\n  | ".join(rows) + ";")
        out.append("")
        # a state with nothing runnable only stutters; rule those tails out
        # so fair-path semantics matches the explicit-state search, which
        # treats them as terminal
        out.append(f"JUSTICE {self.any_go};")
        for name in sorted(ts.fairness):
            out.append(f"JUSTICE !{self.go[name]} | "
                       f"{self.last_cmd} = {self.cconst[name]};")
        emitted: list[str] = []
        skipped: list[tuple[str, str]] = []
        for p in properties:
            line, why = self.property_line(p)
            out.append("")
            head = f"-- property {p.id} [{p.origin}]"
            if p.text:
                head += f": {p.text}"
            out.append(head)
            if line is None:
                out.append(f"-- skipped: {why}")
                skipped.append((p.id, why))
            else:
                out.append(line)
                emitted.append(p.id)
        return "\n".join(out) + "\n", emitted, skipped

    # -- properties ------------------------------------------------------------

    def cond_formula(self, cond: Cond) -> str:
        fired, exprs, quiet = _flatten(cond)
        parts = []
        if fired is not None:
            if fired not in self.cconst:
                raise RuleError(f"condition names unknown command {fired}")
            parts.append(f"{self.last_cmd} = {self.cconst[fired]}")
        parts += [self.expr(e) for e in exprs]
        if quiet:
            parts.append(self.quiescent)
        return " & ".join(parts) if parts else "TRUE"

    def property_line(self, p: Property
                      ) -> tuple[Optional[str], str]:
        k = p.kind
        if isinstance(k, SafetyInvariant):
            return f"INVARSPEC !({self.cond_formula(k.bad)});", ""
        if isinstance(k, Eventually):
            return f"LTLSPEC F ({self.cond_formula(k.goal)});", ""
        if isinstance(k, LeadsTo):
            return (f"LTLSPEC G (({self.cond_formula(k.premise)}) -> "
                    f"F ({self.cond_formula(k.goal)}));", "")
        if isinstance(k, BoundedAbsence):
            return None, ("bounded-absence counts clock ticks; not "
                          "expressible here without an auxiliary counter")
        raise TypeError(k)


def emit_model(ts: TransitionSystem, properties: Sequence[Property] = (),
               *, name: str = "model") -> SmvModel:
    """Render one transition system (and its properties) as SMV text."""
    text, emitted, skipped = _Emitter(ts, name).emit(list(properties))
    return SmvModel(name, text, tuple(emitted), tuple(skipped))


def emit_suite(slicers: Sequence[Slicer], properties: Sequence[Property],
               params: Mapping[str, tuple] | None = None, *,
               compress_states: bool = True
               ) -> tuple[list[SmvModel], list[str]]:
    """One SMV model per slicer, with each property routed to the slicer
    that owns it — mirroring how the checker itself would run the suite.

    Cross-slicer or defective properties are not emitted anywhere; they come
    back as warnings.  Pass a single whole-system slicer to emit everything
    into one model.
    """
    params = dict(params or {})
    warnings: list[str] = []
    per: dict[str, list[Property]] = {}
    for p in properties:
        if p.defect:
            warnings.append(f"{p.id}: {p.defect}")
            continue
        sl, why = route_property(slicers, p)
        if sl is None:
            warnings.append(f"{p.id}: {why}")
        else:
            per.setdefault(sl.id, []).append(p)

    models: list[SmvModel] = []
    for sl in slicers:
        plist = per.get(sl.id, [])
        if compress_states:
            extras = [e for p in plist for e in p.exprs()]
            cts, vmap = compress(sl.ts, params, extras=extras)
            plist = [recode_property(p, vmap, params) for p in plist]
        else:
            cts = sl.ts
        m = emit_model(cts, plist, name=sl.id)
        models.append(m)
        for pid, why in m.skipped:
            warnings.append(f"{pid}: {why}")
    return models, warnings
