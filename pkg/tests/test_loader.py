"""Catalog/deployment loading and rule binding."""

import json

import pytest

from tapcheck.dsl import parse_rules
from tapcheck.errors import BindError, RuleError
from tapcheck.interactions import Direction, OfflinePolicy
from tapcheck.ir import (
    Assignment,
    Atom,
    Flavor,
    IntDomain,
    Kind,
    ParamRef,
    Revert,
    atoms,
)
from tapcheck.loader import (
    Deployment,
    bind,
    load_and_bind,
    load_capabilities,
    load_deployment,
)

CAPS = [
    {
        "name": "switch",
        "attributes": [{"name": "switch", "type": "enum", "values": ["on", "off"]}],
        "commands": [
            {"name": "on", "attribute": "switch", "value": "on"},
            {"name": "off", "attribute": "switch", "value": "off"},
        ],
    },
    {
        "name": "temperatureMeasurement",
        "attributes": [
            {
                "name": "temperature",
                "type": "int",
                "range": [-20, 50],
                "unit": "C",
                "kind": "tardy",
            }
        ],
    },
    {
        "name": "motionSensor",
        "attributes": [{"name": "motion", "type": "bool"}],
    },
    {
        "name": "thermostat",
        "attributes": [
            {"name": "mode", "type": "enum", "values": ["heat", "cool", "off"]},
            {"name": "setpoint", "type": "int", "range": [10, 30], "unit": "C"},
        ],
    },
]

DEP = {
    "devices": {
        "heater": "switch",
        "insideTemp": "temperatureMeasurement",
        "hall": "motionSensor",
        "stat": "thermostat",
    },
    "preferences": {"cut": 25, "band": {"min": 20, "max": 22}},
}

INITS = """
init heater := off
init insideTemp := 21
init hall := false
init stat.mode := off
init stat.setpoint := 20
"""


def write(tmp_path, caps=None, dep=None):
    c = tmp_path / "caps.json"
    d = tmp_path / "dep.json"
    c.write_text(json.dumps(caps if caps is not None else CAPS))
    d.write_text(json.dumps(dep if dep is not None else DEP))
    return c, d


def bind_text(tmp_path, rules_text, caps=None, dep=None):
    c, d = write(tmp_path, caps, dep)
    return bind(
        parse_rules(rules_text + INITS),
        load_deployment(d),
        load_capabilities(c),
    )


# -- capability catalog -------------------------------------------------------

def test_load_capabilities(tmp_path):
    c, _ = write(tmp_path)
    cat = load_capabilities(c)
    sw = cat["switch"]
    assert [a.name for a in sw.attributes] == ["switch"]
    assert sw.commands[0].value == "on"
    tm = cat["temperatureMeasurement"]
    assert tm.attributes[0].kind is Kind.TARDY
    assert tm.attributes[0].domain == IntDomain(-20, 50, "C")
    assert tm.commands == ()  # sensor-only capability


def test_catalog_rejects_duplicates(tmp_path):
    c, _ = write(tmp_path, caps=CAPS + [CAPS[0]])
    with pytest.raises(BindError, match="duplicate capability"):
        load_capabilities(c)


def test_catalog_rejects_command_without_attribute(tmp_path):
    bad = [
        {
            "name": "lockCap",
            "attributes": [{"name": "state", "type": "bool"}],
            "commands": [{"name": "lock", "attribute": "lock", "value": True}],
        }
    ]
    c, _ = write(tmp_path, caps=bad)
    with pytest.raises(BindError, match="unknown attribute"):
        load_capabilities(c)


def test_catalog_rejects_command_value_outside_domain(tmp_path):
    bad = [
        {
            "name": "sw",
            "attributes": [{"name": "s", "type": "enum", "values": ["on", "off"]}],
            "commands": [{"name": "zap", "attribute": "s", "value": "fried"}],
        }
    ]
    c, _ = write(tmp_path, caps=bad)
    with pytest.raises(BindError, match="outside"):
        load_capabilities(c)


def test_catalog_rejects_bad_int_domain(tmp_path):
    bad = [{"name": "x", "attributes": [{"name": "a", "type": "int"}]}]
    c, _ = write(tmp_path, caps=bad)
    with pytest.raises(BindError, match="range"):
        load_capabilities(c)


# -- deployment ----------------------------------------------------------------

def test_load_deployment_defaults(tmp_path):
    _, d = write(tmp_path)
    dep = load_deployment(d)
    assert dep.step_seconds == 60
    assert dep.devices["heater"] == ("switch",)


def test_deployment_requires_devices(tmp_path):
    _, d = write(tmp_path, dep={"devices": {}})
    with pytest.raises(BindError, match="devices"):
        load_deployment(d)


def test_deployment_step_seconds_validated(tmp_path):
    _, d = write(tmp_path, dep={**DEP, "step_seconds": 0})
    with pytest.raises(BindError, match="step_seconds"):
        load_deployment(d)


# -- binding: names, types, units ----------------------------------------------

def test_bind_canonical_names(tmp_path):
    brs = bind_text(tmp_path, "rule r: when insideTemp > 25 then heater.on()\n")
    # single-attribute devices use the bare device name
    assert set(brs.attributes) == {
        "heater",
        "insideTemp",
        "hall",
        "stat.mode",
        "stat.setpoint",
    }
    r = brs.rules[0]
    assert r.trigger.expr == Atom("insideTemp", ">", 25)
    assert r.actions == (Assignment("heater", "on"),)


def test_bind_resolves_dotted_and_bare_forms(tmp_path):
    brs = bind_text(
        tmp_path,
        "rule r: when insideTemp.temperature > 25 and mode = heat "
        "then heater.switch := off\n",
    )
    r = brs.rules[0]
    assert r.trigger.flavor is Flavor.STATE
    attrs = {a.attr for p in r.predicates() for a in atoms(p.expr)}
    assert attrs == {"insideTemp", "stat.mode"}
    assert r.actions == (Assignment("heater", "off"),)


def test_bind_unresolved_name(tmp_path):
    with pytest.raises(BindError, match="unresolved|unknown"):
        bind_text(tmp_path, "rule r: when garageDoor = open then heater.on()\n")


def test_bind_ambiguous_name(tmp_path):
    caps = CAPS + [
        {
            "name": "outdoorTemp",
            "attributes": [
                {"name": "temperature", "type": "int", "range": [-40, 60]}
            ],
        }
    ]
    dep = {**DEP, "devices": {**DEP["devices"], "porch": "outdoorTemp"}}
    with pytest.raises(BindError, match="ambiguous"):
        bind_text(
            tmp_path,
            "rule r: when temperature > 25 then heater.on()\ninit porch := 10\n",
            caps=caps,
            dep=dep,
        )


def test_bind_unknown_command(tmp_path):
    with pytest.raises(BindError, match="no command"):
        bind_text(tmp_path, "rule r: when hall = true then heater.toggle()\n")


def test_bind_unit_checks(tmp_path):
    brs = bind_text(tmp_path, "rule r: when insideTemp > 25C then heater.on()\n")
    assert brs.rules[0].trigger.expr == Atom("insideTemp", ">", 25)
    with pytest.raises(BindError, match="unit"):
        bind_text(tmp_path, "rule r: when insideTemp > 25lx then heater.on()\n")


def test_bind_ordered_comparison_needs_int(tmp_path):
    with pytest.raises(BindError, match="non-integer"):
        bind_text(tmp_path, "rule r: when mode > heat then heater.on()\n")


def test_bind_value_outside_domain(tmp_path):
    with pytest.raises(BindError, match="outside the domain"):
        bind_text(tmp_path, "rule r: when hall = true then heater := open\n")
    with pytest.raises(BindError, match="outside the domain"):
        bind_text(tmp_path, "rule r: when insideTemp > 99 then heater.on()\n")


# -- binding: preferences --------------------------------------------------------

def test_single_valued_preference_substituted(tmp_path):
    brs = bind_text(tmp_path, "rule r: when insideTemp > $cut then heater.off()\n")
    assert brs.rules[0].trigger.expr == Atom("insideTemp", ">", 25)
    assert brs.params == {}


def test_range_preference_recorded(tmp_path):
    brs = bind_text(tmp_path, "rule r: when insideTemp > $band then heater.off()\n")
    assert brs.rules[0].trigger.expr == Atom("insideTemp", ">", ParamRef("band"))
    assert brs.params == {"band": (20, 21, 22)}


def test_unknown_preference(tmp_path):
    with pytest.raises(BindError, match="unknown preference"):
        bind_text(tmp_path, "rule r: when insideTemp > $mystery then heater.off()\n")


def test_preference_value_must_fit_domain(tmp_path):
    dep = {**DEP, "preferences": {"cut": 99}}
    with pytest.raises(BindError, match="outside the domain"):
        bind_text(
            tmp_path, "rule r: when stat.setpoint > $cut then heater.off()\n", dep=dep
        )


# -- binding: durations -----------------------------------------------------------

def test_minutes_to_steps(tmp_path):
    brs = bind_text(
        tmp_path, "rule r: when hall = true then heater.on() after 10m\n"
    )
    assert brs.original[0].latency == 10
    assert brs.timers[0].timeout == 10


def test_non_divisible_duration_rejected(tmp_path):
    with pytest.raises(BindError, match="whole number"):
        bind_text(tmp_path, "rule r: when hall = true then heater.on() after 90s\n")


def test_bare_steps_duration(tmp_path):
    brs = bind_text(tmp_path, "rule r: when hall = true then heater.on() after 3\n")
    assert brs.original[0].latency == 3


def test_param_duration_values_validated(tmp_path):
    dep = {**DEP, "preferences": {"wait": {"min": 0, "max": 2}}}
    with pytest.raises(BindError, match=">= 1"):
        bind_text(
            tmp_path,
            "rule r: when hall = true then heater := on for $wait\n",
            dep=dep,
        )


# -- binding: extended actions ------------------------------------------------------

def test_hold_with_revert_default(tmp_path):
    brs = bind_text(tmp_path, "rule r: when hall = true then heater := on for 5\n")
    act = brs.original[0].actions[0]
    assert act.extended.duration == 5
    assert act.extended.terminal == Assignment("heater", Revert())


def test_hold_terminal_pairing(tmp_path):
    brs = bind_text(
        tmp_path,
        "rule r: when hall = true then heater := on and stat.mode := heat "
        "for 5 then heater := off\n",
    )
    a_heater, a_mode = brs.original[0].actions
    assert a_heater.extended.terminal == Assignment("heater", "off")
    assert a_mode.extended.terminal == Assignment("stat.mode", Revert())


def test_hold_terminal_must_match_main_target(tmp_path):
    with pytest.raises(BindError, match="never touches"):
        bind_text(
            tmp_path,
            "rule r: when hall = true then heater := on for 5 then stat.mode := off\n",
        )


def test_duplicate_write_rejected(tmp_path):
    with pytest.raises(RuleError, match="twice"):
        bind_text(
            tmp_path, "rule r: when hall = true then heater := on and heater := off\n"
        )


# -- binding: inits ---------------------------------------------------------------

def test_init_must_cover_every_attribute(tmp_path):
    c, d = write(tmp_path)
    rs = parse_rules("rule r: when hall = true then heater.on()\ninit heater := off")
    with pytest.raises(BindError, match="init missing"):
        bind(rs, load_deployment(d), load_capabilities(c))


def test_duplicate_init_rejected(tmp_path):
    with pytest.raises(BindError, match="duplicate init"):
        bind_text(
            tmp_path,
            "rule r: when hall = true then heater.on()\ninit heater := on\n",
        )


def test_init_value_checked(tmp_path):
    c, d = write(tmp_path)
    rs = parse_rules(INITS.replace("induction", "x").replace(":= 21", ":= 99C"))
    # 99 is inside [-20, 50]? no: 99 > 50
    with pytest.raises(BindError, match="outside the domain"):
        bind(rs, load_deployment(d), load_capabilities(c))


# -- binding: rule-count arithmetic --------------------------------------------------

def test_split_count_arithmetic(tmp_path):
    text = (
        "rule a: when hall = true then heater.on()\n"
        "rule b: when hall = true then heater.on() after 5\n"
        "rule c: when hall = true then heater := on for 3\n"
        "rule d: when hall = true then heater := on and stat.mode := heat "
        "after 2 for 3\n"
    )
    brs = bind_text(tmp_path, text)
    # 4 originals + 2 delayed + 3 extended assignments
    assert len(brs.original) == 4
    assert len(brs.rules) == 4 + 2 + 3
    assert len(brs.timers) == 5


# -- binding: connections and channels -----------------------------------------------

def co_dep(policy="disable"):
    return {
        "devices": {
            "heater": "switch",
            "outlet": "switch",
            "insideTemp": "temperatureMeasurement",
            "hall": "motionSensor",
            "stat": "thermostat",
        },
        "connections": [
            {"parent": "outlet", "children": ["insideTemp"], "policy": policy}
        ],
        "channels": [
            {
                "attribute": "insideTemp",
                "latency": 2,
                "affects": [
                    {"cause": "heater", "equals": "on", "direction": "raise"}
                ],
            }
        ],
    }


CO_INITS = "init outlet := on\n"


def test_bind_connection_and_channel(tmp_path):
    brs = bind_text(
        tmp_path,
        "rule r: when insideTemp > 28 then heater.off()\n" + CO_INITS,
        dep=co_dep("last"),
    )
    (co,) = brs.connections
    assert co.parent == "outlet" and co.power_attr == "outlet"
    assert co.on_value == "on" and co.policy is OfflinePolicy.LAST_MEASUREMENT
    (ch,) = brs.channels
    assert ch.attribute == "insideTemp" and ch.kind is Kind.TARDY
    assert ch.latency == 2
    assert ch.affects[0] == (
        ch.affects[0].__class__("heater", "on", Direction.RAISE)
    )


def test_channel_kind_defaults_from_attribute_name(tmp_path):
    dep = co_dep()
    del dep["channels"][0]["latency"]
    brs = bind_text(
        tmp_path,
        "rule r: when insideTemp > 28 then heater.off()\n" + CO_INITS,
        dep=dep,
    )
    assert brs.channels[0].kind is Kind.TARDY  # temperature defaults to tardy
    assert brs.channels[0].latency == 1


def test_channel_unknown_kind_needs_explicit(tmp_path):
    dep = co_dep()
    dep["channels"][0]["attribute"] = "stat.setpoint"
    with pytest.raises(BindError, match="no default kind"):
        bind_text(
            tmp_path,
            "rule r: when insideTemp > 28 then heater.off()\n" + CO_INITS,
            dep=dep,
        )


def test_connection_cycle_rejected(tmp_path):
    dep = co_dep()
    dep["devices"]["outletB"] = "switch"
    dep["connections"] = [
        {"parent": "outlet", "children": ["outletB"]},
        {"parent": "outletB", "children": ["outlet"]},
    ]
    with pytest.raises(RuleError, match="cycle"):
        bind_text(
            tmp_path,
            "rule r: when insideTemp > 28 then heater.off()\n"
            + CO_INITS
            + "init outletB := on\n",
            dep=dep,
        )


def test_connection_power_inference_failure(tmp_path):
    dep = co_dep()
    dep["connections"][0]["parent"] = "insideTemp"
    dep["connections"][0]["children"] = ["hall"]
    with pytest.raises(BindError, match="power"):
        bind_text(
            tmp_path,
            "rule r: when insideTemp > 28 then heater.off()\n" + CO_INITS,
            dep=dep,
        )


def test_channel_overrides_attribute_kind(tmp_path):
    # switch (enum) cannot evolve gradually
    dep = co_dep()
    dep["channels"] = [
        {
            "attribute": "heater",
            "kind": "tardy",
            "affects": [{"cause": "outlet", "equals": "on", "direction": "raise"}],
        }
    ]
    with pytest.raises(RuleError, match="integer"):
        bind_text(
            tmp_path,
            "rule r: when insideTemp > 28 then heater.off()\n" + CO_INITS,
            dep=dep,
        )


# -- file front end ---------------------------------------------------------------

def test_load_and_bind(tmp_path):
    c, d = write(tmp_path)
    r = tmp_path / "rules.taprules"
    r.write_text("rule r: when insideTemp > 25 then heater.off()\n" + INITS)
    brs = load_and_bind(r, c, d)
    assert [x.id for x in brs.rules] == ["r"]
    assert brs.init["insideTemp"] == 21
    assert brs.step_seconds == 60
