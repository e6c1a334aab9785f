"""Safety and liveness verdicts cross-checked against independent oracles,
threat-candidate property templates, slicer routing, and trace replay."""

import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tapcheck.checking import (
    HOLDS,
    QUIESCENT,
    REJECTED,
    VIOLATED,
    AllCond,
    BoundedAbsence,
    Eventually,
    ExprCond,
    FiredCond,
    LeadsTo,
    Property,
    SafetyInvariant,
    Trace,
    Verdict,
    check_liveness,
    check_property,
    check_safety,
    instantiate_properties,
    parse_properties,
    recode_property,
    render_trace,
    replay,
    route_property,
    run_suite,
    update_candidates,
)
from tapcheck.engine import Engine
from tapcheck.errors import RuleError
from tapcheck.fsm import And, build, compress, inject_channels, inject_connections
from tapcheck.interactions import (
    CONFIRMED,
    REFUTED,
    SYNTACTIC,
    build_expression_deps,
    build_rule_deps,
    detect_threats,
)
from tapcheck.ir import Atom, Not
from tapcheck.slicing import slice_system
from util import BOOL_CAP, SWITCH_CAP, bind_scenario, int_cap, random_scenario
from oracle import (
    oracle_bounded_violated,
    oracle_liveness_violated,
    oracle_safety_violated,
    oracle_successors,
)

TEMP = {
    "name": "temperatureMeasurement",
    "attributes": [
        {"name": "temperature", "type": "int", "range": [5, 35], "kind": "tardy"}
    ],
}


def full_ts(brs):
    ts = build(brs)
    ts = inject_channels(ts, brs.channels)
    return inject_connections(ts, brs.connections, brs.rules, brs.attributes)


def deps(brs):
    ee = build_expression_deps(brs.rules, brs.channels, brs.attributes)
    return build_rule_deps(brs.rules, ee, brs.channels, brs.connections,
                           brs.attributes)


def threat_props(brs):
    cands = detect_threats(brs.original, brs.attributes, brs.channels,
                           brs.connections, params=brs.params)
    return cands, instantiate_properties(brs, cands)


def chain_model():
    """b0 turns sw1 on, sw1=on turns sw2 on."""
    return bind_scenario(
        "rule first: when b0 = true then sw1.on()\n"
        "rule second: when sw1 = on then sw2.on()\n"
        "init sw1 := off\ninit sw2 := off\ninit b0 := false\n",
        [SWITCH_CAP, BOOL_CAP],
        {"devices": {"sw1": "switch", "sw2": "switch", "b0": "boolSensor"}},
    )


# -- check_safety ---------------------------------------------------------------

def test_safety_unreachable_bad_holds():
    ts = full_ts(chain_model())
    p = Property("s", SafetyInvariant(ExprCond(
        And((Atom("sw1", "=", "off"), Atom("sw2", "=", "on"))))))
    # second only fires after sw1 went on, and nothing turns sw1 back off
    v = check_safety(ts, p)
    assert v.result == HOLDS and v.trace is None
    assert v.explored > 0


def test_safety_violated_shortest_trace():
    ts = full_ts(chain_model())
    p = Property("s", SafetyInvariant(ExprCond(Atom("sw2", "=", "on"))))
    v = check_safety(ts, p)
    assert v.result == VIOLATED
    assert [s.command for s in v.trace.steps] == \
        ["", "env:b0:=true", "first", "second"]
    assert v.trace.steps[-1].state["sw2"] == "on"
    replay(ts, v.trace)


def test_safety_fired_condition_needs_the_edge():
    ts = full_ts(chain_model())
    # sw1 = off is reachable, but evaluated on the post state of "first"
    # the command itself has just set it on
    p = Property("s", SafetyInvariant(AllCond((
        FiredCond("first"), ExprCond(Atom("sw1", "=", "off"))))))
    assert check_safety(ts, p).result == HOLDS
    p2 = Property("s2", SafetyInvariant(AllCond((
        FiredCond("second"), ExprCond(Atom("sw2", "=", "on"))))))
    v = check_safety(ts, p2)
    assert v.result == VIOLATED and v.trace.steps[-1].command == "second"
    replay(ts, v.trace)


def test_safety_quiescent_condition():
    ts = full_ts(chain_model())
    # mid-cascade sw1=on/sw2=off exists but never at quiescence
    p = Property("s", SafetyInvariant(AllCond((
        QUIESCENT,
        ExprCond(And((Atom("sw1", "=", "on"), Atom("sw2", "=", "off"))))))))
    assert check_safety(ts, p).result == HOLDS
    q = Property("q", SafetyInvariant(AllCond((
        QUIESCENT, ExprCond(Atom("sw2", "=", "on"))))))
    assert check_safety(ts, q).result == VIOLATED


def test_safety_budget_rejected():
    ts = full_ts(chain_model())
    v = check_safety(ts, Property(
        "s", SafetyInvariant(ExprCond(Atom("sw2", "=", "on")))), budget=2)
    assert v.result == REJECTED and "budget" in v.reason


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_safety_matches_bruteforce(seed):
    rng = random.Random(seed)
    text, caps, dep = random_scenario(rng, n_rules=rng.randint(2, 5),
                                      int_his=(4,), p_latency=0.3)
    ts = full_ts(bind_scenario(text, caps, dep))
    sw = f"sw{rng.randrange(3)}"
    bad = And((Atom(sw, "=", rng.choice(["on", "off"])),
               Atom("s0", rng.choice([">", "<="]), rng.randint(1, 3))))
    v = check_safety(ts, Property("s", SafetyInvariant(ExprCond(bad))))
    want = VIOLATED if oracle_safety_violated(ts, ExprCond(bad)) else HOLDS
    assert v.result == want
    if v.trace is not None:
        replay(ts, v.trace)


def test_safety_prefix_is_shortest():
    ts = full_ts(chain_model())
    p = Property("s", SafetyInvariant(ExprCond(Atom("sw2", "=", "on"))))
    v = check_safety(ts, p)
    # breadth-first distance computed over the interpreting oracle
    engine = Engine(ts)
    inits = [engine.snapshot(s) for s in engine.initial_states()]
    dist, frontier = 0, inits
    seen = {tuple(sorted(d.items())) for d in inits}
    while not any(d["sw2"] == "on" for d in frontier):
        nxt = []
        for d in frontier:
            for _, ns in oracle_successors(ts, d):
                k = tuple(sorted(ns.items()))
                if k not in seen:
                    seen.add(k)
                    nxt.append(ns)
        frontier, dist = nxt, dist + 1
    assert len(v.trace.steps) - 1 == dist


# -- check_liveness: leads-to and eventually --------------------------------------

def test_liveness_extended_action_completes():
    # sw1 is rule-written, so the carrier trigger rises at most once and
    # timer fairness forces the terminal to fire
    brs = bind_scenario(
        "rule go: when b0 = true then sw1.on()\n"
        "rule bake: when sw1 = on then sw2.on() for 3\n"
        "init sw1 := off\ninit sw2 := off\ninit b0 := false\n",
        [SWITCH_CAP, BOOL_CAP],
        {"devices": {"sw1": "switch", "sw2": "switch", "b0": "boolSensor"}},
    )
    ts = full_ts(brs)
    p = Property("l", LeadsTo(FiredCond("bake"), FiredCond("bake@end0")))
    v = check_liveness(ts, p)
    assert v.result == HOLDS
    assert not oracle_liveness_violated(ts, p.kind)


def test_liveness_retrigger_restarts_the_countdown():
    # arming is an ordinary rule action, so a re-risable trigger lets the
    # environment postpone the timeout forever; the lasso shows the re-arm
    brs = bind_scenario(
        "rule bake: when b0 = true then sw1.on() after 3\n"
        "init sw1 := off\ninit b0 := false\n",
        [SWITCH_CAP, BOOL_CAP],
        {"devices": {"sw1": "switch", "b0": "boolSensor"}},
    )
    ts = full_ts(brs)
    p = Property("l", LeadsTo(FiredCond("bake@arm"), FiredCond("bake@run")))
    v = check_liveness(ts, p)
    assert v.result == VIOLATED
    replay(ts, v.trace)
    assert "bake@arm" in [s.command for s in
                          v.trace.steps[v.trace.loop_start + 1:]]
    assert oracle_liveness_violated(ts, p.kind)


def test_liveness_premise_never_reached_holds():
    ts = full_ts(chain_model())
    p = Property("l", LeadsTo(
        ExprCond(And((Atom("sw1", "=", "off"), Atom("sw2", "=", "on")))),
        FiredCond("first")))
    assert check_liveness(ts, p).result == HOLDS


def test_liveness_eventually_tick_holds():
    brs = bind_scenario(
        "init b0 := false\n", [BOOL_CAP], {"devices": {"b0": "boolSensor"}})
    ts = full_ts(brs)
    # every fair run ticks: the environment alone cannot starve a fair command
    assert check_liveness(
        ts, Property("l", Eventually(FiredCond("tick")))).result == HOLDS
    v = check_liveness(
        ts, Property("l2", Eventually(ExprCond(Atom("b0", "=", True)))))
    assert v.result == VIOLATED  # the environment may simply never flip b0


def test_liveness_violated_lasso_replays():
    brs = bind_scenario(
        "rule gated: when b0 = true if sw2 = on then sw1.on()\n"
        "init sw1 := off\ninit sw2 := off\ninit b0 := false\n",
        [SWITCH_CAP, BOOL_CAP],
        {"devices": {"sw1": "switch", "sw2": "switch", "b0": "boolSensor"}},
    )
    ts = full_ts(brs)
    p = Property("l", LeadsTo(ExprCond(Atom("b0", "=", True)),
                              FiredCond("gated")))
    v = check_liveness(ts, p)
    assert v.result == VIOLATED
    assert v.trace.loop_start is not None
    replay(ts, v.trace)
    # the loop body never takes the goal command
    loop_cmds = [s.command for s in v.trace.steps[v.trace.loop_start + 1:]]
    assert "gated" not in loop_cmds and loop_cmds


def _random_cond(rng, draw_fired):
    sw = f"sw{rng.randrange(2)}"
    choices = [
        ExprCond(Atom(sw, "=", rng.choice(["on", "off"]))),
        ExprCond(Atom("s0", rng.choice([">", "<="]), rng.randint(1, 3))),
    ]
    if draw_fired:
        choices.append(FiredCond(f"r{rng.randrange(3)}"))
        choices.append(AllCond((FiredCond(f"r{rng.randrange(3)}"),
                                choices[0])))
    return rng.choice(choices)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_liveness_matches_product_oracle(seed):
    rng = random.Random(seed)
    text, caps, dep = random_scenario(rng, n_rules=3, n_switches=2,
                                      int_his=(4,), p_latency=0.3)
    ts = full_ts(bind_scenario(text, caps, dep))
    if rng.random() < 0.3:
        kind = Eventually(_random_cond(rng, draw_fired=True))
    else:
        kind = LeadsTo(_random_cond(rng, draw_fired=rng.random() < 0.5),
                       _random_cond(rng, draw_fired=True))
    v = check_liveness(ts, Property("l", kind))
    want = VIOLATED if oracle_liveness_violated(ts, kind) else HOLDS
    assert v.result == want, f"{kind} on:\n{text}"
    if v.trace is not None:
        replay(ts, v.trace)


# -- check_liveness: bounded absence ----------------------------------------------

def hold_model(with_stopper):
    text = "rule keep: when b0 = true then sw1.on() for 3\n"
    if with_stopper:
        text += "rule cut: when b1 = true then sw1.off()\n"
    text += "init sw1 := off\ninit b0 := false\ninit b1 := false\n"
    return full_ts(bind_scenario(
        text, [SWITCH_CAP, BOOL_CAP],
        {"devices": {"sw1": "switch", "b0": "boolSensor", "b1": "boolSensor"}}))


def test_bounded_absence_stopper_found():
    ts = hold_model(with_stopper=True)
    p = Property("b", BoundedAbsence(FiredCond("keep"), 3,
                                     ExprCond(Not(Atom("sw1", "=", "on")))))
    v = check_liveness(ts, p)
    assert v.result == VIOLATED
    replay(ts, v.trace)
    cmds = [s.command for s in v.trace.steps]
    assert "keep" in cmds and cmds.count("tick") < 3
    assert oracle_bounded_violated(ts, p.kind)


def test_bounded_absence_window_boundary():
    ts = hold_model(with_stopper=False)
    # the revert itself lands exactly at 3 ticks: inside a window of 4,
    # outside a window of 3
    forb = ExprCond(Not(Atom("sw1", "=", "on")))
    tight = BoundedAbsence(FiredCond("keep"), 3, forb)
    wide = BoundedAbsence(FiredCond("keep"), 4, forb)
    assert check_liveness(ts, Property("t", tight)).result == HOLDS
    assert check_liveness(ts, Property("w", wide)).result == VIOLATED
    assert not oracle_bounded_violated(ts, tight)
    assert oracle_bounded_violated(ts, wide)


def test_bounded_absence_needs_command_start():
    ts = hold_model(with_stopper=False)
    p = Property("b", BoundedAbsence(ExprCond(Atom("b0", "=", True)), 2,
                                     ExprCond(Atom("sw1", "=", "off"))))
    with pytest.raises(RuleError, match="command event"):
        check_liveness(ts, p)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_bounded_matches_product_oracle(seed):
    rng = random.Random(seed)
    text, caps, dep = random_scenario(rng, n_rules=3, n_switches=2,
                                      int_his=(3,), p_latency=0.4)
    ts = full_ts(bind_scenario(text, caps, dep))
    starts = [c.name for c in ts.commands
              if c.rule and not c.name.endswith("!discard")]
    start = rng.choice(starts)
    kind = BoundedAbsence(
        FiredCond(start), rng.randint(1, 3),
        ExprCond(Atom(f"sw{rng.randrange(2)}", "=", rng.choice(["on", "off"]))))
    v = check_liveness(ts, Property("b", kind))
    want = VIOLATED if oracle_bounded_violated(ts, kind) else HOLDS
    assert v.result == want, f"{kind} on:\n{text}"
    if v.trace is not None:
        replay(ts, v.trace)


# -- compression transparency ------------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_compressed_verdicts_match(seed):
    rng = random.Random(seed)
    text, caps, dep = random_scenario(rng, n_rules=rng.randint(2, 3),
                                      int_his=(25,), p_latency=0.2)
    brs = bind_scenario(text, caps, dep)
    ts = full_ts(brs)
    cut = rng.randint(5, 20)
    kinds = [
        SafetyInvariant(ExprCond(Atom("s0", ">", cut))),
        LeadsTo(ExprCond(Atom("s0", ">", cut)), FiredCond("r0")),
        Eventually(ExprCond(Atom("s0", "<=", cut))),
    ]
    kind = kinds[rng.randrange(len(kinds))]
    prop = Property("p", kind)
    plain = check_property(ts, prop)
    small, vmap = compress(ts, brs.params, extras=tuple(prop.exprs()))
    packed = check_property(small, recode_property(prop, vmap, brs.params))
    assert packed.result == plain.result
    assert packed.explored <= plain.explored
    if packed.trace is not None:
        replay(small, packed.trace)


# -- verdict monotonicity under guard strengthening --------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_guard_strengthening_keeps_safety_holds(seed):
    rng = random.Random(seed)
    text, caps, dep = random_scenario(rng, n_rules=rng.randint(2, 4),
                                      int_his=(4,))
    ts = full_ts(bind_scenario(text, caps, dep))
    bad = ExprCond(And((Atom("sw0", "=", "on"), Atom("s0", ">", 2))))
    base = check_safety(ts, Property("s", SafetyInvariant(bad)))
    extra = Atom(f"sw{rng.randrange(3)}", "=", rng.choice(["on", "off"]))
    cmds = tuple(
        replace(c, guard=And((c.guard, extra))) if c.rule and rng.random() < 0.7
        else c
        for c in ts.commands)
    harder = replace(ts, commands=cmds)
    after = check_safety(harder, Property("s", SafetyInvariant(bad)))
    if base.result == HOLDS:
        assert after.result == HOLDS


# -- property templates from threat candidates --------------------------------------

def test_templates_t1_direct_shape():
    brs = chain_model()
    cands, props = threat_props(brs)
    (c,) = cands
    (p,) = props
    assert c.kind == "T1" and p.id == "T1:first->second"
    assert isinstance(p.kind, SafetyInvariant) and p.confirm_on == "holds"
    assert p.candidate == c.key and p.rules == ("first", "second")
    assert p.origin == "T1" and p.text


def test_templates_t1_tardy_is_leadsto():
    brs = bind_scenario(
        "rule cold: when insideTemp < 18 then heater.on()\n"
        "rule vent: when insideTemp > 28 then window.on()\n"
        "init heater := off\ninit window := off\ninit insideTemp := 21\n",
        [SWITCH_CAP, TEMP],
        {"devices": {"heater": "switch", "window": "switch",
                     "insideTemp": "temperatureMeasurement"},
         "channels": [{"attribute": "insideTemp", "latency": 2,
                       "affects": [{"cause": "heater", "equals": "on",
                                    "direction": "raise"}]}]},
    )
    _, props = threat_props(brs)
    (p,) = props
    assert isinstance(p.kind, LeadsTo) and p.confirm_on == "holds"
    assert p.kind.premise == FiredCond("cold")
    assert p.kind.goal == FiredCond("vent")


def test_templates_t2_and_empty_emit_nothing():
    brs = bind_scenario(
        "rule a: when b0 = true then sw1.on()\n"
        "rule b: when b0 = true then sw1.on()\n"
        "init sw1 := off\ninit b0 := false\n",
        [SWITCH_CAP, BOOL_CAP],
        {"devices": {"sw1": "switch", "b0": "boolSensor"}},
    )
    cands, props = threat_props(brs)
    assert [c.kind for c in cands] == ["T2"]
    assert props == []
    assert instantiate_properties(brs, []) == []


def test_templates_t5_pair_and_latency_commands():
    brs = bind_scenario(
        "rule brew: when b0 = true then sw1.on() after 2 for 4\n"
        "rule cut: when b1 = true then sw1.off()\n"
        "init sw1 := off\ninit b0 := false\ninit b1 := false\n",
        [SWITCH_CAP, BOOL_CAP],
        {"devices": {"sw1": "switch", "b0": "boolSensor", "b1": "boolSensor"}},
    )
    cands, props = threat_props(brs)
    t5 = [p for p in props if p.id.startswith("T5")]
    completes = next(p for p in t5 if p.id.endswith("completes"))
    held = next(p for p in t5 if p.id.endswith("held"))
    # the carrier runs under latency, so the start event is its @run command
    assert completes.kind == LeadsTo(FiredCond("brew@run"),
                                     FiredCond("brew@run@end0"))
    assert isinstance(held.kind, BoundedAbsence) and held.kind.window == 4
    assert held.confirm_on == "violated"


def test_templates_unknown_rule_raises():
    brs = chain_model()
    cands, _ = threat_props(brs)
    broken = replace(cands[0], rule_j="ghost")
    with pytest.raises(RuleError, match="ghost"):
        instantiate_properties(brs, [broken])


# -- candidate status updates -------------------------------------------------------

def fake_prop(pid, cand, confirm_on):
    return Property(pid, SafetyInvariant(ExprCond(Atom("x", "=", 1))),
                    origin="threat", candidate=cand.key, confirm_on=confirm_on)


def test_update_candidates_all_outcomes():
    brs = chain_model()
    cands = detect_threats(brs.original, brs.attributes, brs.channels,
                           brs.connections, params=brs.params)
    c = cands[0]

    def run(verdicts, props):
        c2 = replace(c, status=SYNTACTIC, note="")
        update_candidates([c2], props, verdicts)
        return c2

    p = fake_prop("p1", c, "violated")
    hit = run([Verdict("p1", VIOLATED)], [p])
    assert hit.status == CONFIRMED and "p1" in hit.note
    miss = run([Verdict("p1", HOLDS)], [p])
    assert miss.status == REFUTED
    undecided = run([Verdict("p1", REJECTED, reason="budget: x")], [p])
    assert undecided.status == SYNTACTIC and "undecided" in undecided.note
    # any confirming hit wins over other refuting misses
    p2 = fake_prop("p2", c, "holds")
    both = run([Verdict("p1", HOLDS), Verdict("p2", HOLDS)], [p, p2])
    assert both.status == CONFIRMED
    # candidates without properties (T2) stay syntactic
    untouched = run([], [])
    assert untouched.status == SYNTACTIC and untouched.note == ""


# -- parse_properties ----------------------------------------------------------------

def props_env():
    brs = bind_scenario(
        "rule r: when b0 = true then sw1.on()\n"
        "init sw1 := off\ninit b0 := false\n",
        [SWITCH_CAP, BOOL_CAP],
        {"devices": {"sw1": "switch", "b0": "boolSensor"},
         "preferences": {"cut": 3}},
    )
    return brs.attributes, brs.params


def test_parse_property_forms():
    attrs, params = props_env()
    text = """
    # guard rails
    never sw1 = on and b0 = false
    always b0 = false   # trailing comment
    eventually sw1 = on
    b0 = true leadsto sw1 = on
    """
    ps = parse_properties(text, attrs, params)
    assert [p.id for p in ps] == ["p1", "p2", "p3", "p4"]
    assert isinstance(ps[0].kind, SafetyInvariant)
    # always E is the invariant "never not E"
    assert ps[1].kind == SafetyInvariant(ExprCond(Not(Atom("b0", "=", False))))
    assert isinstance(ps[2].kind, Eventually)
    assert ps[3].kind == LeadsTo(ExprCond(Atom("b0", "=", True)),
                                 ExprCond(Atom("sw1", "=", "on")))
    assert all(p.origin == "user" and not p.defect for p in ps)


def test_parse_property_defects_not_fatal():
    attrs, params = props_env()
    ps = parse_properties(
        "never ghost = on\n"
        "never sw1 > 2\n"
        "never sw1 = dimmed\n"
        "never b0 = $missing\n",
        attrs, params)
    assert [bool(p.defect) for p in ps] == [True] * 4
    assert "unknown-atom" in ps[0].defect
    assert "type-mismatch" in ps[1].defect
    assert "type-mismatch" in ps[2].defect
    assert "unknown-preference" in ps[3].defect


def test_parse_property_malformed_raises():
    attrs, params = props_env()
    with pytest.raises(RuleError):
        parse_properties("sw1 = on leadsto b0 = true leadsto sw1 = off\n",
                         attrs, params)
    with pytest.raises(RuleError):
        parse_properties("whenever sw1 = on\n", attrs, params)


def test_parsed_defect_turns_into_rejected_verdict():
    attrs, params = props_env()
    (p,) = parse_properties("never ghost = on\n", attrs, params)
    v = check_property(full_ts(chain_model()), p)
    assert v.result == REJECTED and "unknown-atom" in v.reason


# -- routing and the suite runner ----------------------------------------------------

def two_cluster():
    text, caps, dep = "", [SWITCH_CAP, BOOL_CAP], {"devices": {}}
    for g in ("a", "b"):
        text += (f"rule {g}1: when {g}_in = true then {g}_sw.on()\n"
                 f"rule {g}2: when {g}_sw = on then {g}_out.on()\n"
                 f"init {g}_sw := off\ninit {g}_out := off\n"
                 f"init {g}_in := false\n")
        dep["devices"].update({f"{g}_in": "boolSensor", f"{g}_sw": "switch",
                               f"{g}_out": "switch"})
    return bind_scenario(text, caps, dep)


def test_route_property_prefers_owner():
    brs = two_cluster()
    slicers = slice_system(full_ts(brs), deps(brs))
    assert len(slicers) == 2
    p = Property("p", SafetyInvariant(ExprCond(Atom("a_out", "=", "on"))))
    hit, why = route_property(slicers, p)
    assert hit is not None and "a1" in hit.rules and why == ""
    pb = Property("p", LeadsTo(FiredCond("b1"), FiredCond("b2")))
    hit_b, _ = route_property(slicers, pb)
    assert hit_b is not None and "b1" in hit_b.rules


def test_route_property_cross_slicer_and_unknown():
    brs = two_cluster()
    slicers = slice_system(full_ts(brs), deps(brs))
    mixed = Property("p", SafetyInvariant(ExprCond(
        And((Atom("a_out", "=", "on"), Atom("b_out", "=", "on"))))))
    hit, why = route_property(slicers, mixed)
    assert hit is None and "monolithic" in why
    ghost = Property("p", SafetyInvariant(ExprCond(Atom("ghost", "=", 1))))
    hit, why = route_property(slicers, ghost)
    assert hit is None and "unknown-atom" in why


def test_run_suite_bookkeeping_and_aggregation():
    brs = two_cluster()
    ts = full_ts(brs)
    cands, props = threat_props(brs)
    users = [
        Property("u1", SafetyInvariant(ExprCond(Atom("a_out", "=", "on")))),
        Property("u2", SafetyInvariant(ExprCond(
            And((Atom("a_out", "=", "on"), Atom("b_out", "=", "on")))))),
    ]
    slicers = slice_system(ts, deps(brs))
    verdicts, runs = run_suite(slicers, props + users, params=brs.params)
    assert [v.property_id for v in verdicts] == [p.id for p in props + users]
    by_id = {v.property_id: v for v in verdicts}
    assert by_id["u1"].result == VIOLATED and by_id["u1"].slicer
    assert by_id["u2"].result == REJECTED and "monolithic" in by_id["u2"].reason
    assert all(v.explored > 0 for v in verdicts if v.result != REJECTED)
    assert [r.slicer_id for r in runs] == sorted({r.slicer_id for r in runs})
    update_candidates(cands, props, verdicts)
    assert {c.status for c in cands} == {CONFIRMED}  # both T1 chains fire
    for v in verdicts:
        if v.trace is not None:
            run = next(r for r in runs if r.slicer_id == v.slicer)
            replay(run.ts, v.trace)


def test_run_suite_parallel_matches_serial():
    brs = two_cluster()
    _, props = threat_props(brs)
    slicers = slice_system(full_ts(brs), deps(brs))
    serial, _ = run_suite(slicers, props, params=brs.params, jobs=1)
    parallel, _ = run_suite(slicers, props, params=brs.params, jobs=2)
    strip = [(v.property_id, v.result, v.explored, v.slicer) for v in serial]
    assert strip == [(v.property_id, v.result, v.explored, v.slicer)
                     for v in parallel]


def test_run_suite_uncompressed_matches():
    brs = two_cluster()
    _, props = threat_props(brs)
    slicers = slice_system(full_ts(brs), deps(brs))
    packed, _ = run_suite(slicers, props, params=brs.params)
    raw, _ = run_suite(slicers, props, params=brs.params,
                       compress_states=False)
    assert [(v.property_id, v.result) for v in packed] == \
        [(v.property_id, v.result) for v in raw]


# -- replay and rendering --------------------------------------------------------------

def test_replay_rejects_tampering():
    ts = full_ts(chain_model())
    p = Property("s", SafetyInvariant(ExprCond(Atom("sw2", "=", "on"))))
    v = check_safety(ts, p)
    steps = list(v.trace.steps)
    bent = steps[-1]
    steps[-1] = replace(bent, state=dict(bent.state, sw1="off"))
    with pytest.raises(RuleError, match="diverged"):
        replay(ts, Trace(tuple(steps)))
    steps = list(v.trace.steps)
    steps[1] = replace(steps[1], command="second")
    with pytest.raises(RuleError, match="diverged"):
        replay(ts, Trace(tuple(steps)))
    with pytest.raises(RuleError, match="initial"):
        replay(ts, Trace(tuple(v.trace.steps[1:])))


def test_render_trace_marks_loop_and_decodes():
    brs = bind_scenario(
        "rule up: when b0 = true then sw1.on()\n"
        "init sw1 := off\ninit b0 := false\n",
        [SWITCH_CAP, BOOL_CAP],
        {"devices": {"sw1": "switch", "b0": "boolSensor"}})
    ts = full_ts(brs)
    p = Property("l", Eventually(ExprCond(Atom("b0", "=", True))))
    v = check_liveness(ts, p)
    assert v.result == VIOLATED
    text = render_trace(v.trace)
    assert "(init)" in text and "<- loop" in text
    assert f"(loops back to step {v.trace.loop_start})" in text
    small, vmap = compress(ts, brs.params)
    v2 = check_liveness(small, recode_property(p, vmap, brs.params))
    decoded = render_trace(v2.trace, vmap=vmap)
    assert "b0=false" in decoded and "sw1=off" in decoded
