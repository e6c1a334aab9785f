"""Catalog/deployment loading and name binding.

Three inputs meet here: the parsed rule file, a capability catalog (what
device types can do), and a deployment (which devices exist, how they are
wired, user preference constants).  ``bind`` resolves every name, checks
types and units, substitutes or records preferences, splits delayed and
extended rules, and returns an immutable :class:`BoundRuleSet` for the
analysis stages.

Attribute naming: a device contributes ``device.attribute`` entries; when a
device has exactly one attribute the device name itself is the canonical
form (``insideTemp``, not ``insideTemp.temperature``).  Rules may use any
unambiguous surface form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

from .dsl import ParsedAction, ParsedRule, RuleSet
from .errors import BindError, RuleError, SourceLoc
from .interactions import (
    Affect,
    ChannelDecl,
    ConnectionDecl,
    Direction,
    OfflinePolicy,
    connection_closure,
)
from .ir import (
    And,
    Assignment,
    Atom,
    AttributeDecl,
    BoolDomain,
    Domain,
    EnumDomain,
    Expr,
    Extended,
    Flavor,
    IntDomain,
    Kind,
    Not,
    Or,
    ParamRef,
    Predicate,
    Revert,
    Rule,
    SubjectId,
    TimerVar,
    Value,
    atoms,
    normalize_ruleset,
)

# Bundled physics defaults: channels over these attribute names get their
# kind filled in when the deployment omits it.
DEFAULT_CHANNEL_KINDS = {
    "temperature": Kind.TARDY,
    "humidity": Kind.TARDY,
    "illuminance": Kind.IMMEDIATE,
    "voltage": Kind.IMMEDIATE,
    "water": Kind.IMMEDIATE,
    "motion": Kind.IMMEDIATE,
    "presence": Kind.IMMEDIATE,
}

DEFAULT_STEP_SECONDS = 60


# --------------------------------------------------------------------------
# capability catalog

@dataclass(frozen=True)
class CapCommand:
    name: str
    attribute: str
    value: Value


@dataclass(frozen=True)
class CapAttribute:
    name: str
    domain: Domain
    kind: Kind = Kind.IMMEDIATE


@dataclass(frozen=True)
class Capability:
    name: str
    attributes: tuple[CapAttribute, ...]
    commands: tuple[CapCommand, ...] = ()


@dataclass
class CapabilityCatalog:
    capabilities: dict[str, Capability]

    def __getitem__(self, name: str) -> Capability:
        try:
            return self.capabilities[name]
        except KeyError:
            raise BindError(f"unknown capability {name!r}") from None


def _parse_domain(spec: Mapping, where: str) -> Domain:
    ty = spec.get("type")
    if ty == "bool":
        return BoolDomain()
    if ty == "enum":
        values = spec.get("values")
        if not values or not all(isinstance(v, str) for v in values):
            raise BindError(f"{where}: enum needs a non-empty list of labels")
        return EnumDomain(tuple(values))
    if ty == "int":
        rng = spec.get("range")
        if (
            not isinstance(rng, (list, tuple))
            or len(rng) != 2
            or not all(isinstance(v, int) for v in rng)
        ):
            raise BindError(f"{where}: int needs \"range\": [min, max]")
        return IntDomain(rng[0], rng[1], spec.get("unit", ""))
    raise BindError(f"{where}: unknown attribute type {ty!r}")


def load_capabilities(path) -> CapabilityCatalog:
    """Load a JSON list of capability definitions.

    Each entry: ``{name, attributes: [{name, type, values|range, unit?,
    kind?}], commands: [{name, attribute, value}]}``.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise BindError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(data, list):
        raise BindError(f"{path}: expected a JSON list of capabilities")

    caps: dict[str, Capability] = {}
    for entry in data:
        name = entry.get("name")
        if not name:
            raise BindError(f"{path}: capability without a name")
        if name in caps:
            raise BindError(f"{path}: duplicate capability {name!r}")
        attrs: list[CapAttribute] = []
        for a in entry.get("attributes", ()):
            where = f"{path}: {name}.{a.get('name', '?')}"
            if not a.get("name"):
                raise BindError(f"{path}: {name}: attribute without a name")
            kind = Kind(a["kind"]) if "kind" in a else Kind.IMMEDIATE
            attrs.append(CapAttribute(a["name"], _parse_domain(a, where), kind))
        if not attrs:
            raise BindError(f"{path}: capability {name!r} declares no attributes")
        by_name = {a.name: a for a in attrs}
        if len(by_name) != len(attrs):
            raise BindError(f"{path}: capability {name!r} has duplicate attributes")
        cmds: list[CapCommand] = []
        for c in entry.get("commands", ()):
            cname, target = c.get("name"), c.get("attribute")
            if target not in by_name:
                raise BindError(
                    f"{path}: {name}: command {cname!r} targets unknown "
                    f"attribute {target!r}"
                )
            value = c.get("value")
            if value not in by_name[target].domain:
                raise BindError(
                    f"{path}: {name}: command {cname!r} writes {value!r} "
                    f"outside the {target!r} domain"
                )
            cmds.append(CapCommand(cname, target, value))
        caps[name] = Capability(name, tuple(attrs), tuple(cmds))
    return CapabilityCatalog(caps)


# --------------------------------------------------------------------------
# deployment

@dataclass
class Deployment:
    """Raw deployment file contents; channel/connection entries are resolved
    against the attribute table during ``bind``."""

    devices: dict[str, tuple[str, ...]]  # device name -> capability names
    connections: list[dict] = field(default_factory=list)
    channels: list[dict] = field(default_factory=list)
    preferences: dict[str, object] = field(default_factory=dict)
    step_seconds: int = DEFAULT_STEP_SECONDS
    source: str = "<deployment>"


def load_deployment(path) -> Deployment:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise BindError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(data, dict):
        raise BindError(f"{path}: expected a JSON object")

    raw_devices = data.get("devices")
    if not isinstance(raw_devices, dict) or not raw_devices:
        raise BindError(f"{path}: \"devices\" must be a non-empty object")
    devices: dict[str, tuple[str, ...]] = {}
    for dev, caps in raw_devices.items():
        if isinstance(caps, str):
            caps = [caps]
        if not isinstance(caps, list) or not caps:
            raise BindError(f"{path}: device {dev!r} needs a capability name")
        devices[dev] = tuple(caps)

    step = data.get("step_seconds", DEFAULT_STEP_SECONDS)
    if not isinstance(step, int) or step < 1:
        raise BindError(f"{path}: step_seconds must be a positive integer")

    for key in ("connections", "channels"):
        if not isinstance(data.get(key, []), list):
            raise BindError(f"{path}: \"{key}\" must be a list")
    prefs = data.get("preferences", {})
    if not isinstance(prefs, dict):
        raise BindError(f"{path}: \"preferences\" must be an object")

    return Deployment(
        devices=devices,
        connections=list(data.get("connections", [])),
        channels=list(data.get("channels", [])),
        preferences=dict(prefs),
        step_seconds=step,
        source=str(path),
    )


# --------------------------------------------------------------------------
# binding

@dataclass
class BoundRuleSet:
    """Everything the analysis stages need, fully resolved and immutable by
    convention.

    ``original`` holds the bound rules as written (delays and extended
    actions intact, for threat screening); ``rules`` holds the normalized
    split.  ``params`` maps preference names to their explored value tuples
    (single-valued preferences are substituted away before this point).
    """

    original: list[Rule]
    rules: list[Rule]
    timers: list[TimerVar]
    attributes: dict[str, AttributeDecl]
    init: dict[str, Value]
    params: dict[str, tuple]
    channels: tuple[ChannelDecl, ...]
    connections: tuple[ConnectionDecl, ...]
    step_seconds: int = DEFAULT_STEP_SECONDS
    warnings: list[str] = field(default_factory=list)


class _Resolver:
    """Maps surface attribute references to canonical names."""

    def __init__(self):
        self.exact: dict[str, str] = {}
        self.bare: dict[str, list[str]] = {}
        self.base_name: dict[str, str] = {}  # canonical -> capability attr name

    def add(self, device: str, attr_name: str, canonical: str):
        self.exact[f"{device}.{attr_name}"] = canonical
        self.exact.setdefault(canonical, canonical)
        self.bare.setdefault(attr_name, []).append(canonical)
        self.base_name[canonical] = attr_name

    def resolve(self, ref: str, loc: Optional[SourceLoc] = None) -> str:
        if ref in self.exact:
            return self.exact[ref]
        cands = self.bare.get(ref, [])
        if len(cands) == 1:
            return cands[0]
        if len(cands) > 1:
            raise BindError(
                f"ambiguous attribute reference {ref!r}: {', '.join(sorted(cands))}",
                loc,
            )
        raise BindError(f"unresolved attribute reference {ref!r}", loc)


def _attribute_table(
    dep: Deployment, cat: CapabilityCatalog
) -> tuple[dict[str, AttributeDecl], _Resolver, dict[str, dict[str, CapCommand]]]:
    table: dict[str, AttributeDecl] = {}
    resolver = _Resolver()
    commands: dict[str, dict[str, CapCommand]] = {}
    for dev, cap_names in dep.devices.items():
        caps = [cat[c] for c in cap_names]
        attrs = [(cap, a) for cap in caps for a in cap.attributes]
        names = [a.name for _, a in attrs]
        if len(set(names)) != len(names):
            raise BindError(
                f"device {dev!r}: duplicate attribute names across capabilities"
            )
        single = len(attrs) == 1
        subject = SubjectId(dev, tuple(cap_names))
        for cap, a in attrs:
            canonical = dev if single else f"{dev}.{a.name}"
            if canonical in table:
                raise BindError(f"attribute name collision on {canonical!r}")
            table[canonical] = AttributeDecl(canonical, subject, a.kind, a.domain)
            resolver.add(dev, a.name, canonical)
        cmds: dict[str, CapCommand] = {}
        for cap in caps:
            for c in cap.commands:
                if c.name in cmds:
                    raise BindError(
                        f"device {dev!r}: duplicate command {c.name!r} across "
                        f"capabilities"
                    )
                cmds[c.name] = c
        commands[dev] = cmds
    return table, resolver, commands


def _check_value(
    attr: AttributeDecl, value: Value, loc: Optional[SourceLoc], what: str
) -> None:
    if isinstance(value, (ParamRef, Revert)):
        return
    if value not in attr.domain:
        raise BindError(
            f"{what}: value {value!r} is outside the domain of {attr.name}", loc
        )


class _Binder:
    def __init__(self, dep: Deployment, table, resolver, commands):
        self.dep = dep
        self.table: dict[str, AttributeDecl] = table
        self.resolver: _Resolver = resolver
        self.commands = commands
        self.prefs = self._load_prefs(dep.preferences)
        self.used_params: set[str] = set()

    @staticmethod
    def _load_prefs(raw: Mapping[str, object]) -> dict[str, tuple]:
        out: dict[str, tuple] = {}
        for name, v in raw.items():
            if isinstance(v, dict):
                lo, hi = v.get("min"), v.get("max")
                if not (isinstance(lo, int) and isinstance(hi, int) and lo <= hi):
                    raise BindError(
                        f"preference {name!r}: range needs integer min <= max"
                    )
                out[name] = tuple(range(lo, hi + 1))
            elif isinstance(v, list):
                if not v:
                    raise BindError(f"preference {name!r}: empty value list")
                out[name] = tuple(v)
            else:
                out[name] = (v,)
        return out

    def param_values(self, name: str, loc: Optional[SourceLoc]) -> tuple:
        if name not in self.prefs:
            raise BindError(f"unknown preference ${name}", loc)
        return self.prefs[name]

    def bind_value(self, value: Value, loc: Optional[SourceLoc]) -> Value:
        """Substitute single-valued preferences; record multi-valued ones."""
        if isinstance(value, ParamRef):
            vals = self.param_values(value.name, loc)
            if len(vals) == 1:
                return vals[0]
            self.used_params.add(value.name)
        return value

    def check_unit(self, canonical: str, unit: str, loc, what: str):
        if not unit:
            return
        decl = self.table[canonical]
        declared = decl.domain.unit if isinstance(decl.domain, IntDomain) else ""
        if unit != declared:
            raise BindError(
                f"{what}: unit {unit!r} does not match {canonical} "
                f"({declared or 'no unit'})",
                loc,
            )

    def bind_expr(self, e: Expr, units: Mapping[str, str], loc) -> Expr:
        if isinstance(e, Atom):
            canonical = self.resolver.resolve(e.attr, loc)
            if e.attr in units:
                self.check_unit(canonical, units[e.attr], loc, "comparison")
            decl = self.table[canonical]
            value = self.bind_value(e.value, loc)
            if e.op in ("<", "<=", ">", ">="):
                if not isinstance(decl.domain, IntDomain):
                    raise BindError(
                        f"ordered comparison on non-integer attribute {canonical}",
                        loc,
                    )
                vals = (
                    self.param_values(value.name, loc)
                    if isinstance(value, ParamRef)
                    else [value]
                )
                for v in vals:
                    if not isinstance(v, int) or isinstance(v, bool):
                        raise BindError(
                            f"ordered comparison against non-integer {v!r} "
                            f"on {canonical}",
                            loc,
                        )
                    if v not in decl.domain:
                        raise BindError(
                            f"comparison value {v} is outside the domain of "
                            f"{canonical} [{decl.domain.lo}, {decl.domain.hi}]",
                            loc,
                        )
            else:
                vals = (
                    self.param_values(value.name, loc)
                    if isinstance(value, ParamRef)
                    else [value]
                )
                for v in vals:
                    _check_value(decl, v, loc, "comparison")
            return Atom(canonical, e.op, value)
        if isinstance(e, Not):
            return Not(self.bind_expr(e.child, units, loc))
        if isinstance(e, And):
            return And(tuple(self.bind_expr(p, units, loc) for p in e.parts))
        if isinstance(e, Or):
            return Or(tuple(self.bind_expr(p, units, loc) for p in e.parts))
        raise TypeError(f"not an expression node: {e!r}")

    def steps(self, d, loc, what: str, minimum: int):
        """Convert a parsed duration to base steps (or a kept parameter)."""
        if isinstance(d, ParamRef):
            vals = self.param_values(d.name, loc)
            if len(vals) == 1:
                d = vals[0]
            else:
                self.used_params.add(d.name)
                for v in vals:
                    if not isinstance(v, int) or v < minimum:
                        raise BindError(
                            f"{what}: preference ${d.name} value {v!r} must be "
                            f"an integer >= {minimum}",
                            loc,
                        )
                return d
        if isinstance(d, tuple):
            kind, n, dloc = d
            loc = dloc or loc
            if kind == "seconds":
                if n % self.dep.step_seconds:
                    raise BindError(
                        f"{what}: {n}s is not a whole number of "
                        f"{self.dep.step_seconds}s base steps",
                        loc,
                    )
                d = n // self.dep.step_seconds
            else:
                d = n
        if not isinstance(d, int):
            raise BindError(f"{what}: expected a duration, got {d!r}", loc)
        if d < 0:
            raise RuleError(f"{what}: negative latency {d}", loc)
        if d < minimum:
            raise BindError(f"{what}: duration must be >= {minimum} steps", loc)
        return d

    def bind_assignment(self, pa: ParsedAction) -> Assignment:
        if pa.call is not None:
            dev = pa.target
            if dev not in self.commands:
                raise BindError(f"unknown device {dev!r}", pa.loc)
            cmd = self.commands[dev].get(pa.call)
            if cmd is None:
                raise BindError(
                    f"device {dev!r} has no command {pa.call!r}", pa.loc
                )
            canonical = self.resolver.resolve(f"{dev}.{cmd.attribute}", pa.loc)
            return Assignment(canonical, cmd.value)
        canonical = self.resolver.resolve(pa.target, pa.loc)
        self.check_unit(canonical, pa.unit, pa.loc, "assignment")
        value = self.bind_value(pa.value, pa.loc)
        decl = self.table[canonical]
        vals = (
            self.param_values(value.name, pa.loc)
            if isinstance(value, ParamRef)
            else [value]
        )
        for v in vals:
            _check_value(decl, v, pa.loc, "assignment")
        return Assignment(canonical, value)

    def bind_rule(self, pr: ParsedRule) -> Rule:
        loc = pr.loc
        trigger_expr = self.bind_expr(pr.trigger, pr.units, loc)
        n_atoms = sum(1 for _ in atoms(trigger_expr))
        trigger = Predicate(
            trigger_expr, Flavor.EVENT if n_atoms == 1 else Flavor.STATE
        )
        t_conds = tuple(
            Predicate(self.bind_expr(e, pr.units, loc), Flavor.STATE)
            for e in pr.trigger_conditions
        )
        a_conds = tuple(
            Predicate(self.bind_expr(e, pr.units, loc), Flavor.STATE)
            for e in pr.action_conditions
        )
        latency = self.steps(
            pr.latency_steps, loc, f"rule {pr.id}", minimum=0
        )

        mains = [self.bind_assignment(a) for a in pr.actions]
        targets = [a.target for a in mains]
        if len(set(targets)) != len(targets):
            raise RuleError(
                f"rule {pr.id}: writes the same attribute twice in one step", loc
            )
        if pr.hold is None:
            actions = tuple(mains)
        else:
            dur_raw, term_raw = pr.hold
            dur = self.steps(dur_raw, loc, f"rule {pr.id} hold", minimum=1)
            terms: dict[str, Assignment] = {}
            for pa in term_raw:
                t = self.bind_assignment(pa)
                if t.target in terms:
                    raise RuleError(
                        f"rule {pr.id}: duplicate terminal for {t.target}", loc
                    )
                if t.target not in targets:
                    raise BindError(
                        f"rule {pr.id}: terminal writes {t.target}, which the "
                        f"main action list never touches",
                        pa.loc,
                    )
                terms[t.target] = t
            actions = tuple(
                Assignment(
                    a.target,
                    a.value,
                    Extended(dur, terms.get(a.target, Assignment(a.target, Revert()))),
                )
                for a in mains
            )
        return Rule(
            id=pr.id,
            trigger=trigger,
            trigger_conditions=t_conds,
            action_conditions=a_conds,
            latency=latency,
            actions=actions,
            source=loc,
        )


def _bind_connections(
    dep: Deployment, binder: _Binder
) -> tuple[ConnectionDecl, ...]:
    table, resolver = binder.table, binder.resolver
    out: list[ConnectionDecl] = []
    for raw in dep.connections:
        parent = raw.get("parent")
        children = raw.get("children")
        if parent not in dep.devices:
            raise BindError(f"connection parent {parent!r} is not a device")
        if not isinstance(children, list) or not children:
            raise BindError(f"connection under {parent!r}: children must be a list")
        for c in children:
            if c not in dep.devices:
                raise BindError(
                    f"connection under {parent!r}: child {c!r} is not a device"
                )
        policy = OfflinePolicy(raw.get("policy", "disable"))
        power_ref = raw.get("power_attribute")
        if power_ref:
            power = resolver.resolve(power_ref)
        else:
            cands = [
                name
                for name, decl in table.items()
                if decl.subject.name == parent
                and isinstance(decl.domain, EnumDomain)
                and "on" in decl.domain.labels
            ]
            if len(cands) != 1:
                raise BindError(
                    f"connection under {parent!r}: cannot infer the power "
                    f"attribute, set \"power_attribute\""
                )
            power = cands[0]
        on_value = raw.get("on_value", "on")
        _check_value(table[power], on_value, None, f"connection under {parent!r}")
        out.append(
            ConnectionDecl(parent, power, on_value, tuple(children), policy)
        )
    connection_closure(out)  # validates acyclicity and single-parent
    return tuple(out)


def _bind_channels(dep: Deployment, binder: _Binder) -> tuple[ChannelDecl, ...]:
    table, resolver = binder.table, binder.resolver
    out: list[ChannelDecl] = []
    seen: set[str] = set()
    for raw in dep.channels:
        ref = raw.get("attribute")
        if not ref:
            raise BindError("channel entry without \"attribute\"")
        canonical = resolver.resolve(ref)
        if canonical in seen:
            raise BindError(f"duplicate channel for {canonical}")
        seen.add(canonical)
        if "kind" in raw:
            kind = Kind(raw["kind"])
        else:
            base = binder.resolver.base_name[canonical]
            if base not in DEFAULT_CHANNEL_KINDS:
                raise BindError(
                    f"channel {canonical}: no default kind for {base!r}, "
                    f"set \"kind\""
                )
            kind = DEFAULT_CHANNEL_KINDS[base]
        latency = raw.get("latency", 1)
        if not isinstance(latency, int) or latency < 1:
            raise BindError(f"channel {canonical}: latency must be an integer >= 1")
        affects: list[Affect] = []
        for a in raw.get("affects", ()):
            cause = resolver.resolve(a.get("cause", ""))
            equals = a.get("equals")
            _check_value(table[cause], equals, None, f"channel {canonical} affect")
            direction = Direction(a.get("direction", ""))
            to = a.get("to")
            if direction is Direction.SET:
                _check_value(table[canonical], to, None, f"channel {canonical} set")
            elif to is not None:
                raise BindError(
                    f"channel {canonical}: raise/lower affects take no \"to\""
                )
            if kind is Kind.IMMEDIATE and direction is not Direction.SET:
                raise BindError(
                    f"channel {canonical}: immediate channels propagate whole "
                    f"values, use a \"set\" affect"
                )
            affects.append(Affect(cause, equals, direction, to))
        out.append(ChannelDecl(canonical, kind, latency, tuple(affects)))
    return tuple(out)


def bind(rs: RuleSet, dep: Deployment, cat: CapabilityCatalog) -> BoundRuleSet:
    """Resolve a parsed rule set against a deployment and catalog."""
    table, resolver, commands = _attribute_table(dep, cat)
    binder = _Binder(dep, table, resolver, commands)

    original = [binder.bind_rule(pr) for pr in rs.rules]

    init: dict[str, Value] = {}
    for pi in rs.inits:
        canonical = resolver.resolve(pi.attr, pi.loc)
        if canonical in init:
            raise BindError(f"duplicate init for {canonical}", pi.loc)
        binder.check_unit(canonical, pi.unit, pi.loc, "init")
        value = binder.bind_value(pi.value, pi.loc)
        if isinstance(value, ParamRef):
            raise BindError(
                f"init {canonical}: initial values cannot be preference ranges",
                pi.loc,
            )
        _check_value(table[canonical], value, pi.loc, f"init {canonical}")
        init[canonical] = value
    missing = [a for a in table if a not in init]
    if missing:
        raise BindError(
            f"init missing for: {', '.join(sorted(missing))} "
            f"(every declared attribute needs exactly one init)"
        )

    connections = _bind_connections(dep, binder)
    channels = _bind_channels(dep, binder)
    # a channel declaration overrides the capability's evolution kind
    for ch in channels:
        decl = table[ch.attribute]
        if decl.kind is not ch.kind:
            table[ch.attribute] = replace(decl, kind=ch.kind)

    normalized, timers = normalize_ruleset(original)
    n_latent = sum(
        1
        for r in original
        if isinstance(r.latency, ParamRef) or r.latency > 0
    )
    n_extended = sum(
        1 for r in original for a in r.actions if a.extended is not None
    )
    assert len(normalized) == len(original) + n_latent + n_extended

    params = {
        name: binder.prefs[name] for name in sorted(binder.used_params)
    }
    return BoundRuleSet(
        original=original,
        rules=normalized,
        timers=timers,
        attributes=table,
        init=init,
        params=params,
        channels=channels,
        connections=connections,
        step_seconds=dep.step_seconds,
        warnings=[],
    )


def load_and_bind(rules_path, caps_path, deploy_path) -> BoundRuleSet:
    """One-call front end used by the CLI."""
    from .dsl import parse_rules

    text = Path(rules_path).read_text()
    rs = parse_rules(text, str(rules_path))
    cat = load_capabilities(caps_path)
    dep = load_deployment(deploy_path)
    return bind(rs, dep, cat)
