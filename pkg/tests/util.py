"""Shared helpers for the test suite (no fixtures here, see conftest)."""

import itertools
import json
import pathlib
import tempfile

from tapcheck.dsl import parse_rules
from tapcheck.ir import (
    AttributeDecl,
    Kind,
    ParamRef,
    SubjectId,
    atoms,
    eval_expr,
    expr_attrs,
)
from tapcheck.loader import bind, load_capabilities, load_deployment


def mkattr(name, domain, kind=Kind.IMMEDIATE, subject=None):
    return AttributeDecl(name, SubjectId(subject or name), kind, domain)


def bind_scenario(rules_text, caps, dep):
    """Bind an inline scenario; caps/dep are the plain JSON structures."""
    with tempfile.TemporaryDirectory() as d:
        root = pathlib.Path(d)
        (root / "caps.json").write_text(json.dumps(caps))
        (root / "dep.json").write_text(json.dumps(dep))
        return bind(
            parse_rules(rules_text),
            load_deployment(root / "dep.json"),
            load_capabilities(root / "caps.json"),
        )


def brute_satisfiable(exprs, attrs, params=None):
    """Reference satisfiability: enumerate the FULL joint domain."""
    params = params or {}
    names = sorted(set().union(set(), *(expr_attrs(e) for e in exprs)))
    pnames = sorted(
        {a.value.name for e in exprs for a in atoms(e) if isinstance(a.value, ParamRef)}
    )
    axes = [list(attrs[n].domain.values()) for n in names]
    axes += [list(params[p]) for p in pnames]
    keys = names + ["$" + p for p in pnames]
    for combo in itertools.product(*axes):
        env = dict(zip(keys, combo))
        if all(eval_expr(e, env) for e in exprs):
            return True
    return False


# -- random scenario generation (shared by slicing/compression/perf tests) ----

SWITCH_CAP = {
    "name": "switch",
    "attributes": [{"name": "switch", "type": "enum", "values": ["on", "off"]}],
    "commands": [
        {"name": "on", "attribute": "switch", "value": "on"},
        {"name": "off", "attribute": "switch", "value": "off"},
    ],
}
BOOL_CAP = {
    "name": "boolSensor",
    "attributes": [{"name": "active", "type": "bool"}],
}


def int_cap(hi, name="intSensor", kind=None):
    attr = {"name": "level", "type": "int", "range": [0, hi]}
    if kind:
        attr["kind"] = kind
    return {"name": name, "attributes": [attr]}


def random_scenario(rng, n_rules=4, n_switches=3, n_bools=1, int_his=(6,),
                    p_condition=0.3, p_latency=0.0, max_latency=2):
    """Generate a well-formed random scenario; returns (rules, caps, dep).

    Triggers read sensors or switches, actions drive switches, so every
    model binds cleanly.  All randomness comes from ``rng`` for replay.
    """
    caps = [SWITCH_CAP, BOOL_CAP]
    devices = {}
    for i in range(n_switches):
        devices[f"sw{i}"] = "switch"
    for i in range(n_bools):
        devices[f"b{i}"] = "boolSensor"
    for i, hi in enumerate(int_his):
        cap = int_cap(hi, name=f"intSensor{hi}")
        if all(c["name"] != cap["name"] for c in caps):
            caps.append(cap)
        devices[f"s{i}"] = cap["name"]

    def atom():
        kind = rng.choice(["int", "bool", "switch"]
                          if int_his else ["bool", "switch"])
        if kind == "int":
            i = rng.randrange(len(int_his))
            op = rng.choice([">", "<", ">=", "<=", "=", "!="])
            return f"s{i} {op} {rng.randint(1, max(1, int_his[i] - 1))}"
        if kind == "bool":
            return f"b{rng.randrange(n_bools)} = {rng.choice(['true', 'false'])}"
        return f"sw{rng.randrange(n_switches)} = {rng.choice(['on', 'off'])}"

    lines = []
    for r in range(n_rules):
        parts = [f"rule r{r}: when {atom()}"]
        if rng.random() < p_condition:
            parts.append(f"if {atom()}")
        parts.append(f"then sw{rng.randrange(n_switches)}."
                     f"{rng.choice(['on', 'off'])}()")
        if rng.random() < p_latency:
            parts.append(f"after {rng.randint(1, max_latency)}")
        lines.append(" ".join(parts))
    for i in range(n_switches):
        lines.append(f"init sw{i} := off")
    for i in range(n_bools):
        lines.append(f"init b{i} := false")
    for i, hi in enumerate(int_his):
        lines.append(f"init s{i} := {rng.randint(0, hi)}")
    return "\n".join(lines) + "\n", caps, {"devices": devices}
