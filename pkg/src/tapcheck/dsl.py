"""Parser for the line-oriented rule language (``.taprules`` files).

Grammar, one declaration per line, ``#`` comments::

    rule ID: when EXPR [if EXPR [@trigger|@action]]* then ACTIONS
             [after DURATION] [for DURATION [then ACTIONS]]
    init ATTR := VALUE

    EXPR      := disjunction of 'and'/'not'/parenthesized comparisons
    ACTIONS   := ACTION (and ACTION)*
    ACTION    := ATTR := VALUE | device.command()
    VALUE     := integer [unit] | identifier | true | false | $preference
    DURATION  := integer (s|m|h) | integer          (bare = base steps)

Unannotated ``if`` clauses are checked at action time.  ``after`` sets the
trigger-to-action latency; ``for ... then ...`` holds the written value for a
duration and then runs the terminal action (omitted terminal = restore the
previous value).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from .errors import ParseError, SourceLoc
from .ir import (
    And, Assignment, Atom, Expr, Extended, Flavor, Not, Or, ParamRef,
    Predicate, Revert, Rule, atoms, expr_to_str,
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#.*)
  | (?P<number>-?\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|!=|<=|>=|<|>|=|\(|\)|:|\.|\$|@|,)
    """,
    re.VERBOSE,
)

_KEYWORDS = {
    "rule", "when", "if", "then", "and", "or", "not",
    "after", "for", "init", "true", "false",
}

_DURATION_UNITS = {"s": 1, "m": 60, "h": 3600}


@dataclass(frozen=True)
class Token:
    kind: str  # number | ident | op | end
    text: str
    loc: SourceLoc


@dataclass
class ParsedAction:
    """Surface action before capability binding: either an assignment with a
    raw value token, or a device command call."""

    target: str
    value: object = None  # int | str | bool | ParamRef, or None for calls
    call: Optional[str] = None
    unit: str = ""
    loc: SourceLoc | None = None


@dataclass
class ParsedRule:
    id: str
    trigger: Expr
    trigger_conditions: list[Expr]
    action_conditions: list[Expr]
    actions: list[ParsedAction]
    latency_steps: object = 0  # int steps or ParamRef
    hold: object = None        # None, or (duration steps | ParamRef, terminal actions)
    loc: SourceLoc | None = None
    units: dict = field(default_factory=dict)  # atom unit suffixes, keyed by attr


@dataclass
class ParsedInit:
    attr: str
    value: object
    unit: str = ""
    loc: SourceLoc | None = None


@dataclass
class RuleSet:
    """Surface-level parse result, before catalog binding."""

    rules: list[ParsedRule]
    inits: list[ParsedInit]
    source: str = "<input>"


def _lex(line: str, lineno: int, fname: str) -> list[Token]:
    out: list[Token] = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if m is None:
            raise ParseError(
                f"unexpected character {line[pos]!r}",
                SourceLoc(lineno, pos + 1, fname),
            )
        pos = m.end()
        kind = m.lastgroup
        if kind in ("ws", "comment"):
            continue
        out.append(Token(kind, m.group(), SourceLoc(lineno, m.start() + 1, fname)))
    out.append(Token("end", "", SourceLoc(lineno, len(line) + 1, fname)))
    return out


class _LineParser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.i = 0

    @property
    def cur(self) -> Token:
        return self.toks[self.i]

    def advance(self) -> Token:
        t = self.cur
        if t.kind != "end":
            self.i += 1
        return t

    def at(self, text: str) -> bool:
        return self.cur.text == text and self.cur.kind in ("ident", "op")

    def expect(self, text: str, what: str = "") -> Token:
        if not self.at(text):
            raise ParseError(
                f"expected {what or text!r}, found {self.cur.text!r}",
                self.cur.loc,
            )
        return self.advance()

    def ident(self, what: str) -> Token:
        t = self.cur
        if t.kind != "ident" or t.text in _KEYWORDS:
            raise ParseError(f"expected {what}, found {t.text!r}", t.loc)
        return self.advance()

    # -- leaf pieces --------------------------------------------------

    def attr_ref(self) -> str:
        first = self.ident("an attribute reference").text
        if self.at("."):
            self.advance()
            second = self.ident("an attribute name").text
            return f"{first}.{second}"
        return first

    def value(self) -> tuple[object, str]:
        """Returns (value, unit-suffix)."""
        t = self.cur
        if t.kind == "number":
            self.advance()
            unit = ""
            if self.cur.kind == "ident" and self.cur.text not in _KEYWORDS:
                unit = self.advance().text
            return int(t.text), unit
        if t.text == "$":
            self.advance()
            return ParamRef(self.ident("a preference name").text), ""
        if t.text == "true":
            self.advance()
            return True, ""
        if t.text == "false":
            self.advance()
            return False, ""
        if t.kind == "ident" and t.text not in _KEYWORDS:
            self.advance()
            return t.text, ""
        raise ParseError(f"expected a value, found {t.text!r}", t.loc)

    def duration(self) -> object:
        t = self.cur
        if t.text == "$":
            self.advance()
            return ParamRef(self.ident("a preference name").text)
        if t.kind != "number":
            raise ParseError(f"expected a duration, found {t.text!r}", t.loc)
        self.advance()
        n = int(t.text)
        if n < 0:
            raise ParseError(f"negative latency {t.text}", t.loc)
        if self.cur.kind == "ident" and self.cur.text in _DURATION_UNITS:
            unit = self.advance().text
            return ("seconds", n * _DURATION_UNITS[unit], t.loc)
        if self.cur.kind == "ident" and self.cur.text not in _KEYWORDS:
            raise ParseError(
                f"unknown duration unit {self.cur.text!r} (use s, m or h)",
                self.cur.loc,
            )
        return ("steps", n, t.loc)

    # -- expressions ---------------------------------------------------

    def expr(self, units: dict) -> Expr:
        return self._or(units)

    def _or(self, units) -> Expr:
        parts = [self._and(units)]
        while self.at("or"):
            self.advance()
            parts.append(self._and(units))
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def _and(self, units) -> Expr:
        parts = [self._unary(units)]
        while self.at("and"):
            self.advance()
            parts.append(self._unary(units))
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def _unary(self, units) -> Expr:
        if self.at("not"):
            self.advance()
            return Not(self._unary(units))
        if self.at("("):
            self.advance()
            e = self.expr(units)
            self.expect(")")
            return e
        return self._atom(units)

    def _atom(self, units) -> Expr:
        attr = self.attr_ref()
        t = self.cur
        if t.kind != "op" or t.text not in ("=", "!=", "<", "<=", ">", ">="):
            raise ParseError(
                f"expected a comparison operator, found {t.text!r}", t.loc
            )
        op = self.advance().text
        val, unit = self.value()
        if unit:
            units[attr] = unit
        return Atom(attr, op, val)

    # -- actions ---------------------------------------------------------

    def action(self) -> ParsedAction:
        loc = self.cur.loc
        target = self.attr_ref()
        if self.at("("):
            self.advance()
            self.expect(")")
            if "." not in target:
                raise ParseError(
                    "command calls need a device prefix (device.command())", loc
                )
            dev, cmd = target.split(".", 1)
            return ParsedAction(target=dev, call=cmd, loc=loc)
        self.expect(":=", "':=' or '()' after the action target")
        val, unit = self.value()
        return ParsedAction(target=target, value=val, unit=unit, loc=loc)

    def actions(self) -> list[ParsedAction]:
        out = [self.action()]
        while self.at("and"):
            self.advance()
            out.append(self.action())
        return out


def _parse_rule_line(p: _LineParser, loc: SourceLoc) -> ParsedRule:
    rid = p.ident("a rule id").text
    p.expect(":")
    p.expect("when")
    units: dict = {}
    trigger = p.expr(units)
    trig_conds: list[Expr] = []
    act_conds: list[Expr] = []
    while p.at("if"):
        p.advance()
        cond = p.expr(units)
        bucket = act_conds
        if p.at("@"):
            p.advance()
            tag = p.ident("'trigger' or 'action'")
            if tag.text == "trigger":
                bucket = trig_conds
            elif tag.text == "action":
                bucket = act_conds
            else:
                raise ParseError(
                    f"unknown condition annotation @{tag.text}", tag.loc
                )
        bucket.append(cond)
    p.expect("then")
    acts = p.actions()
    rule = ParsedRule(
        id=rid, trigger=trigger, trigger_conditions=trig_conds,
        action_conditions=act_conds, actions=acts, loc=loc, units=units,
    )
    if p.at("after"):
        p.advance()
        rule.latency_steps = p.duration()
    if p.at("for"):
        p.advance()
        dur = p.duration()
        terminal: list[ParsedAction] = []
        if p.at("then"):
            p.advance()
            terminal = p.actions()
        rule.hold = (dur, terminal)
    if p.cur.kind != "end":
        raise ParseError(f"trailing input {p.cur.text!r}", p.cur.loc)
    return rule


def parse_rules(text: str, filename: str = "<input>") -> RuleSet:
    """Parse rule-file text into a surface :class:`RuleSet`.

    Purely syntactic; names, units and domains are checked later during
    binding.  Raises :class:`ParseError` with line/column on bad input.
    """
    rules: list[ParsedRule] = []
    inits: list[ParsedInit] = []
    ids: dict[str, SourceLoc] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        toks = _lex(line, lineno, filename)
        if toks[0].kind == "end":
            continue
        p = _LineParser(toks)
        head = p.cur
        if p.at("rule"):
            p.advance()
            r = _parse_rule_line(p, head.loc)
            if r.id in ids:
                raise ParseError(
                    f"duplicate rule id {r.id!r} (first defined at {ids[r.id]})",
                    head.loc,
                )
            ids[r.id] = head.loc
            rules.append(r)
        elif p.at("init"):
            p.advance()
            attr = p.attr_ref()
            p.expect(":=")
            val, unit = p.value()
            if p.cur.kind != "end":
                raise ParseError(f"trailing input {p.cur.text!r}", p.cur.loc)
            inits.append(ParsedInit(attr, val, unit, head.loc))
        else:
            raise ParseError(
                f"expected 'rule' or 'init', found {head.text!r}", head.loc
            )
    return RuleSet(rules=rules, inits=inits, source=filename)


def parse_expression(text: str, filename: str = "<expr>") -> Expr:
    """Parse a bare predicate expression (used for property files)."""
    p = _LineParser(_lex(text, 1, filename))
    e = p.expr({})
    if p.cur.kind != "end":
        raise ParseError(f"trailing input {p.cur.text!r}", p.cur.loc)
    return e


# --------------------------------------------------------------------------
# pretty printing (canonical surface form; parse . render . parse is stable)

def _value_str(v, unit: str = "") -> str:
    if isinstance(v, ParamRef):
        return "$" + v.name
    if isinstance(v, bool):
        return "true" if v else "false"
    return f"{v}{unit}"


def _steps_str(d) -> str:
    if isinstance(d, ParamRef):
        return "$" + d.name
    return str(d)


def render_rule(r: ParsedRule) -> str:
    bits = [f"rule {r.id}: when {expr_to_str(r.trigger)}"]
    for c in r.trigger_conditions:
        bits.append(f"if {expr_to_str(c)} @trigger")
    for c in r.action_conditions:
        bits.append(f"if {expr_to_str(c)} @action")
    bits.append(
        "then " + " and ".join(
            f"{a.target}.{a.call}()" if a.call else
            f"{a.target} := {_value_str(a.value, a.unit)}"
            for a in r.actions
        )
    )
    lat = r.latency_steps
    if isinstance(lat, ParamRef):
        bits.append(f"after {_steps_str(lat)}")
    elif isinstance(lat, tuple):
        kind, n, _ = lat
        bits.append(f"after {n}s" if kind == "seconds" else f"after {n}")
    elif lat:
        bits.append(f"after {lat}")
    if r.hold is not None:
        dur, terminal = r.hold
        if isinstance(dur, ParamRef):
            bits.append(f"for {_steps_str(dur)}")
        elif isinstance(dur, tuple):
            kind, n, _ = dur
            bits.append(f"for {n}s" if kind == "seconds" else f"for {n}")
        else:
            bits.append(f"for {dur}")
        if terminal:
            bits.append(
                "then " + " and ".join(
                    f"{a.target}.{a.call}()" if a.call else
                    f"{a.target} := {_value_str(a.value, a.unit)}"
                    for a in terminal
                )
            )
    return " ".join(bits)


def render_ruleset(rs: RuleSet) -> str:
    lines = [render_rule(r) for r in rs.rules]
    lines += [f"init {i.attr} := {_value_str(i.value, i.unit)}" for i in rs.inits]
    return "\n".join(lines) + "\n"
