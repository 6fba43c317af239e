"""Guarded-command modelling language for POPTAs and POMDPs (``.poptam``).

A document declares its kind (``popta`` or ``pomdp``), constants, clocks,
integer/Boolean variables split into ``observable`` and ``hidden`` ones,
actions, invariants, guarded commands, reward structures and labels.
``elaborate`` expands variable valuations into explicit locations (or states);
the observation of a location is the valuation of its observable variables.
See ``docs/format.md`` for the grammar.
"""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Union

from .errors import CapacityError, ModelError, ParseError
from .popta import TRUE, Branch, ClockBound, ClockConstraint, Edge, Popta
from .pomdp import Pomdp, from_json

Pos = tuple[int, int]


def _pos_field():
    return field(default=None, compare=False, repr=False)


# -- expression AST ---------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: Union[int, float]
    pos: Pos | None = _pos_field()


@dataclass(frozen=True)
class BoolLit:
    value: bool
    pos: Pos | None = _pos_field()


@dataclass(frozen=True)
class Name:
    ident: str
    pos: Pos | None = _pos_field()


@dataclass(frozen=True)
class Unary:
    op: str  # "!" or "-"
    arg: "Expr"
    pos: Pos | None = _pos_field()


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    pos: Pos | None = _pos_field()


@dataclass(frozen=True)
class Call:
    func: str  # min, max, floor, ceil
    args: tuple
    pos: Pos | None = _pos_field()


Expr = Union[Num, BoolLit, Name, Unary, Binary, Call]


# -- document AST -----------------------------------------------------------


@dataclass(frozen=True)
class ConstDecl:
    name: str
    type: str  # int, double, bool
    value: Expr | None
    pos: Pos | None = _pos_field()


@dataclass(frozen=True)
class ClockDecl:
    name: str
    bound: int | None = None
    pos: Pos | None = _pos_field()


@dataclass(frozen=True)
class VarDecl:
    name: str
    observable: bool
    type: str  # int or bool
    low: Expr | None = None
    high: Expr | None = None
    init: Expr | None = None
    pos: Pos | None = _pos_field()


@dataclass(frozen=True)
class Assign:
    var: str
    value: Expr
    pos: Pos | None = _pos_field()


@dataclass(frozen=True)
class Uniform:
    """``(v'~[lo..hi])``: pick a value uniformly from the range."""

    var: str
    low: Expr
    high: Expr
    pos: Pos | None = _pos_field()


@dataclass(frozen=True)
class Update:
    prob: Expr | None
    assigns: tuple


@dataclass(frozen=True)
class Command:
    action: str
    guard: Expr
    updates: tuple[Update, ...]
    pos: Pos | None = _pos_field()


@dataclass(frozen=True)
class RewardItem:
    action: str | None
    guard: Expr
    value: Expr
    pos: Pos | None = _pos_field()


@dataclass(frozen=True)
class RewardStruct:
    name: str
    items: tuple[RewardItem, ...]
    pos: Pos | None = _pos_field()


@dataclass(frozen=True)
class LabelDecl:
    name: str
    expr: Expr
    pos: Pos | None = _pos_field()


@dataclass(frozen=True)
class ModelDocument:
    kind: str
    constants: tuple[ConstDecl, ...] = ()
    clocks: tuple[ClockDecl, ...] = ()
    variables: tuple[VarDecl, ...] = ()
    actions: tuple[str, ...] = ()
    invariants: tuple = ()
    commands: tuple[Command, ...] = ()
    rewards: tuple[RewardStruct, ...] = ()
    labels: tuple[LabelDecl, ...] = ()


# -- lexer ------------------------------------------------------------------

_KEYWORDS = {
    "popta", "pomdp", "const", "int", "double", "bool", "clock", "observable", "hidden",
    "init", "action", "invariant", "rewards", "endrewards", "label", "true", "false",
}

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<num>\d+\.\d+(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|\.\d+(?:[eE][-+]?\d+)?|\d+)
  | (?P<str>"[^"\n]*")
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>->|=>|<=|>=|!=|\.\.|[-+*/<>=!&|()\[\]{}:;,'~])
""", re.VERBOSE)


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int

    @property
    def pos(self) -> Pos:
        return (self.line, self.col)


def tokenize(text: str) -> list[Token]:
    out: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            if kind == "name" and m.group() in _KEYWORDS:
                kind = "kw"
            out.append(Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1))
    return out


# -- parser -----------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(msg, tok.line, tok.col)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "kw")

    def accept(self, text: str) -> Token | None:
        if self.at(text):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, text: str) -> Token:
        t = self.accept(text)
        if t is None:
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return t

    def ident(self) -> Token:
        t = self.tok
        if t.kind != "name":
            raise self.error(f"expected an identifier, found {t.text or 'end of input'!r}")
        self.i += 1
        return t

    def string(self) -> Token:
        t = self.tok
        if t.kind != "str":
            raise self.error(f"expected a quoted name, found {t.text or 'end of input'!r}")
        self.i += 1
        return t

    # document

    def document(self) -> ModelDocument:
        t = self.tok
        if not (self.at("popta") or self.at("pomdp")):
            raise self.error("model must start with 'popta' or 'pomdp'")
        kind = t.text
        self.i += 1
        consts, clocks, variables, actions, invariants = [], [], [], [], []
        commands, rewards, labels = [], [], []
        while self.tok.kind != "eof":
            if self.at("const"):
                consts.append(self.const_decl())
            elif self.at("clock"):
                clocks.extend(self.clock_decl())
            elif self.at("observable") or self.at("hidden"):
                variables.append(self.var_decl())
            elif self.at("action"):
                self.i += 1
                actions.append(self.ident())
                while self.accept(","):
                    actions.append(self.ident())
                self.expect(";")
            elif self.at("invariant"):
                self.i += 1
                invariants.append(self.expr())
                self.expect(";")
            elif self.at("["):
                commands.append(self.command())
            elif self.at("rewards"):
                rewards.append(self.reward_struct())
            elif self.at("label"):
                labels.append(self.label_decl())
            else:
                raise self.error(f"unexpected {self.tok.text!r} at top level")
        doc = ModelDocument(
            kind=kind, constants=tuple(consts), clocks=tuple(clocks), variables=tuple(variables),
            actions=tuple(a.text for a in actions), invariants=tuple(invariants),
            commands=tuple(commands), rewards=tuple(rewards), labels=tuple(labels),
        )
        _check_references(doc, actions)
        return doc

    def const_decl(self) -> ConstDecl:
        t = self.expect("const")
        typ = "int"
        for cand in ("int", "double", "bool"):
            if self.accept(cand):
                typ = cand
                break
        name = self.ident()
        value = None
        if self.accept("="):
            value = self.expr()
        self.expect(";")
        return ConstDecl(name.text, typ, value, t.pos)

    def clock_decl(self) -> list[ClockDecl]:
        self.expect("clock")
        out = []
        while True:
            name = self.ident()
            bound = None
            if self.accept("<="):
                num = self.tok
                if num.kind != "num" or not num.text.isdigit():
                    raise self.error("clock bound must be a natural number")
                self.i += 1
                bound = int(num.text)
            out.append(ClockDecl(name.text, bound, name.pos))
            if not self.accept(","):
                break
        self.expect(";")
        return out

    def var_decl(self) -> VarDecl:
        vis = self.tok
        self.i += 1
        if self.accept("bool"):
            name = self.ident()
            init = self.expr() if self.accept("init") else None
            self.expect(";")
            return VarDecl(name.text, vis.text == "observable", "bool", None, None, init, name.pos)
        self.accept("int")
        name = self.ident()
        self.expect(":")
        self.expect("[")
        low = self.expr()
        self.expect("..")
        high = self.expr()
        self.expect("]")
        init = self.expr() if self.accept("init") else None
        self.expect(";")
        return VarDecl(name.text, vis.text == "observable", "int", low, high, init, name.pos)

    def command(self) -> Command:
        start = self.expect("[")
        action = self.ident()
        self.expect("]")
        guard = self.expr()
        self.expect("->")
        updates = [self.update()]
        while self.accept("+"):
            updates.append(self.update())
        self.expect(";")
        return Command(action.text, guard, tuple(updates), start.pos)

    def _at_assignment(self) -> bool:
        return self.at("(") and self.peek().kind == "name" and self.peek(2).text == "'"

    def update(self) -> Update:
        prob = None
        if not (self._at_assignment() or self.at("true")):
            prob = self.expr()
            self.expect(":")
        if self.accept("true"):
            return Update(prob, ())
        assigns = [self.assignment()]
        while self.accept("&"):
            assigns.append(self.assignment())
        return Update(prob, tuple(assigns))

    def assignment(self):
        self.expect("(")
        name = self.ident()
        self.expect("'")
        if self.accept("~"):
            self.expect("[")
            low = self.expr()
            self.expect("..")
            high = self.expr()
            self.expect("]")
            self.expect(")")
            return Uniform(name.text, low, high, name.pos)
        self.expect("=")
        value = self.expr()
        self.expect(")")
        return Assign(name.text, value, name.pos)

    def reward_struct(self) -> RewardStruct:
        start = self.expect("rewards")
        name = self.string()
        items = []
        while not self.accept("endrewards"):
            if self.tok.kind == "eof":
                raise self.error("missing 'endrewards'")
            t = self.tok
            action = None
            if self.accept("["):
                action = self.ident().text
                self.expect("]")
            guard = self.expr()
            self.expect(":")
            value = self.expr()
            self.expect(";")
            items.append(RewardItem(action, guard, value, t.pos))
        return RewardStruct(name.text[1:-1], tuple(items), start.pos)

    def label_decl(self) -> LabelDecl:
        start = self.expect("label")
        name = self.string()
        self.expect("=")
        e = self.expr()
        self.expect(";")
        return LabelDecl(name.text[1:-1], e, start.pos)

    # expressions, loosest binding first: => | & ! comparison + * unary

    def expr(self) -> Expr:
        left = self.disj()
        t = self.accept("=>")
        if t:
            return Binary("=>", left, self.expr(), t.pos)
        return left

    def disj(self) -> Expr:
        e = self.conj()
        while (t := self.accept("|")):
            e = Binary("|", e, self.conj(), t.pos)
        return e

    def conj(self) -> Expr:
        e = self.neg()
        while (t := self.accept("&")):
            e = Binary("&", e, self.neg(), t.pos)
        return e

    def neg(self) -> Expr:
        t = self.accept("!")
        if t:
            return Unary("!", self.neg(), t.pos)
        return self.comparison()

    def comparison(self) -> Expr:
        e = self.additive()
        for op in ("<=", ">=", "!=", "<", ">", "="):
            t = self.accept(op)
            if t:
                return Binary(op, e, self.additive(), t.pos)
        return e

    def additive(self) -> Expr:
        e = self.term()
        while True:
            t = self.accept("+") or self.accept("-")
            if not t:
                return e
            e = Binary(t.text, e, self.term(), t.pos)

    def term(self) -> Expr:
        e = self.unary()
        while True:
            t = self.accept("*") or self.accept("/")
            if not t:
                return e
            e = Binary(t.text, e, self.unary(), t.pos)

    def unary(self) -> Expr:
        t = self.accept("-") or self.accept("!")
        if t:
            return Unary(t.text, self.unary(), t.pos)
        return self.primary()

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            is_int = re.fullmatch(r"\d+", t.text) is not None
            return Num(int(t.text) if is_int else float(t.text), t.pos)
        if self.accept("true"):
            return BoolLit(True, t.pos)
        if self.accept("false"):
            return BoolLit(False, t.pos)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "name":
            self.i += 1
            if t.text in ("min", "max", "floor", "ceil") and self.accept("("):
                args = [self.expr()]
                while self.accept(","):
                    args.append(self.expr())
                self.expect(")")
                return Call(t.text, tuple(args), t.pos)
            return Name(t.text, t.pos)
        raise self.error(f"expected an expression, found {t.text or 'end of input'!r}")


def _names(e: Expr):
    if isinstance(e, Name):
        yield e
    elif isinstance(e, Unary):
        yield from _names(e.arg)
    elif isinstance(e, Binary):
        yield from _names(e.left)
        yield from _names(e.right)
    elif isinstance(e, Call):
        for a in e.args:
            yield from _names(a)


def _check_references(doc: ModelDocument, action_toks: list[Token]) -> None:
    seen: dict[str, str] = {}

    def declare(name: str, what: str, pos):
        if name in seen:
            line, col = pos if pos else (None, None)
            raise ParseError(f"{what} {name!r} is already declared as a {seen[name]}", line, col)
        seen[name] = what

    def check(e: Expr | None, allowed: set[str]):
        if e is None:
            return
        for n in _names(e):
            if n.ident not in allowed:
                raise ParseError(f"undeclared identifier {n.ident!r}", *n.pos)

    if doc.kind == "pomdp" and doc.clocks:
        c = doc.clocks[0]
        raise ParseError("clocks are only allowed in popta models", *(c.pos or (None, None)))
    consts: set[str] = set()
    for c in doc.constants:
        check(c.value, consts)
        declare(c.name, "constant", c.pos)
        consts.add(c.name)
    for c in doc.clocks:
        declare(c.name, "clock", c.pos)
    for v in doc.variables:
        for e in (v.low, v.high):
            check(e, consts)
        declare(v.name, "variable", v.pos)
    actions = set()
    for t in action_toks:
        declare(t.text, "action", t.pos)
        actions.add(t.text)
    variables = {v.name for v in doc.variables}
    clocks = {c.name for c in doc.clocks}
    everything = consts | variables | clocks
    for v in doc.variables:
        check(v.init, consts)
    for e in doc.invariants:
        check(e, everything)
    for cmd in doc.commands:
        if cmd.action not in actions:
            raise ParseError(f"undeclared action {cmd.action!r}", *cmd.pos)
        check(cmd.guard, everything)
        for up in cmd.updates:
            check(up.prob, everything - clocks)
            targets = set()
            for a in up.assigns:
                if a.var not in variables | clocks:
                    raise ParseError(f"assignment to undeclared variable {a.var!r}", *a.pos)
                if a.var in targets:
                    raise ParseError(f"{a.var!r} assigned twice in one update", *a.pos)
                targets.add(a.var)
                if isinstance(a, Uniform):
                    if a.var in clocks:
                        raise ParseError(f"clock {a.var!r} cannot be assigned randomly", *a.pos)
                    check(a.low, everything - clocks)
                    check(a.high, everything - clocks)
                else:
                    check(a.value, everything - clocks)
    names = set()
    for r in doc.rewards:
        if r.name in names:
            raise ParseError(f"reward structure {r.name!r} is already declared", *r.pos)
        names.add(r.name)
        for it in r.items:
            if it.action is not None and it.action not in actions:
                raise ParseError(f"undeclared action {it.action!r}", *it.pos)
            check(it.guard, everything)
            check(it.value, consts)
    hidden = {v.name for v in doc.variables if not v.observable}
    lnames = set()
    for lab in doc.labels:
        if lab.name in lnames:
            raise ParseError(f"label {lab.name!r} is already declared", *lab.pos)
        lnames.add(lab.name)
        check(lab.expr, everything)
        for n in _names(lab.expr):
            if n.ident in hidden:
                raise ParseError(f"label {lab.name!r} refers to hidden variable {n.ident!r}", *n.pos)
            if n.ident in clocks:
                raise ParseError(f"label {lab.name!r} refers to clock {n.ident!r}; "
                                 "use clock constraints in the property instead", *n.pos)


def parse_model(text: str) -> ModelDocument:
    return _Parser(text).document()


# -- printer ----------------------------------------------------------------


def format_expr(e: Expr) -> str:
    if isinstance(e, Num):
        return repr(e.value) if isinstance(e.value, float) else str(e.value)
    if isinstance(e, BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, Name):
        return e.ident
    if isinstance(e, Unary):
        return f"({e.op}({format_expr(e.arg)}))"
    if isinstance(e, Call):
        return f"{e.func}(" + ", ".join(format_expr(a) for a in e.args) + ")"
    return f"({format_expr(e.left)} {e.op} {format_expr(e.right)})"


def _format_assign(a) -> str:
    if isinstance(a, Uniform):
        return f"({a.var}'~[{format_expr(a.low)}..{format_expr(a.high)}])"
    return f"({a.var}'={format_expr(a.value)})"


def format_model(doc: ModelDocument) -> str:
    lines = [doc.kind, ""]
    for c in doc.constants:
        val = f" = {format_expr(c.value)}" if c.value is not None else ""
        lines.append(f"const {c.type} {c.name}{val};")
    for c in doc.clocks:
        lines.append(f"clock {c.name}" + (f" <= {c.bound}" if c.bound is not None else "") + ";")
    for v in doc.variables:
        vis = "observable" if v.observable else "hidden"
        init = f" init {format_expr(v.init)}" if v.init is not None else ""
        if v.type == "bool":
            lines.append(f"{vis} bool {v.name}{init};")
        else:
            lines.append(f"{vis} int {v.name} : [{format_expr(v.low)}..{format_expr(v.high)}]{init};")
    if doc.actions:
        lines.append("action " + ", ".join(doc.actions) + ";")
    for e in doc.invariants:
        lines.append(f"invariant {format_expr(e)};")
    lines.append("")
    for cmd in doc.commands:
        ups = []
        for u in cmd.updates:
            body = " & ".join(_format_assign(a) for a in u.assigns) if u.assigns else "true"
            ups.append(body if u.prob is None else f"{format_expr(u.prob)}:{body}")
        lines.append(f"[{cmd.action}] {format_expr(cmd.guard)} -> " + " + ".join(ups) + ";")
    for r in doc.rewards:
        lines.append("")
        lines.append(f'rewards "{r.name}"')
        for it in r.items:
            act = f"[{it.action}] " if it.action is not None else ""
            lines.append(f"  {act}{format_expr(it.guard)} : {format_expr(it.value)};")
        lines.append("endrewards")
    if doc.labels:
        lines.append("")
    for lab in doc.labels:
        lines.append(f'label "{lab.name}" = {format_expr(lab.expr)};')
    return "\n".join(lines) + "\n"


# -- evaluation -------------------------------------------------------------


@dataclass(frozen=True)
class _Clock:
    name: str


_FALSE_CC = "false"  # marker for an unsatisfiable partial result


def _err(msg: str, e) -> ModelError:
    pos = getattr(e, "pos", None)
    return ModelError(f"{pos[0]}:{pos[1]}: {msg}" if pos else msg)


class _Evaluator:
    """Partial evaluation: variables and constants are concrete, clocks stay symbolic."""

    def __init__(self, env: Mapping[str, object], clocks: set[str]):
        self.env = env
        self.clocks = clocks

    def value(self, e: Expr):
        v = self.partial(e)
        if isinstance(v, (_Clock, ClockConstraint)):
            raise _err("clock used where a number is required", e)
        return v

    def condition(self, e: Expr):
        """True, False or a ClockConstraint."""
        v = self.partial(e)
        if isinstance(v, ClockConstraint):
            return True if v.is_true else v
        if v is _FALSE_CC:
            return False
        if not isinstance(v, bool):
            raise _err("expected a Boolean condition", e)
        return v

    def partial(self, e: Expr):
        if isinstance(e, Num):
            return e.value
        if isinstance(e, BoolLit):
            return e.value
        if isinstance(e, Name):
            if e.ident in self.clocks:
                return _Clock(e.ident)
            try:
                return self.env[e.ident]
            except KeyError:
                raise _err(f"undefined identifier {e.ident!r}", e) from None
        if isinstance(e, Unary):
            a = self.partial(e.arg)
            if e.op == "-":
                if not isinstance(a, (int, float)) or isinstance(a, bool):
                    raise _err("unary minus needs a number", e)
                return -a
            if isinstance(a, bool):
                return not a
            raise _err("negation of clock constraints is not allowed", e)
        if isinstance(e, Call):
            args = [self.value(a) for a in e.args]
            if e.func in ("min", "max"):
                return (min if e.func == "min" else max)(args)
            if len(args) != 1:
                raise _err(f"{e.func} takes one argument", e)
            return int(math.floor(args[0]) if e.func == "floor" else math.ceil(args[0]))
        return self._binary(e)

    def _binary(self, e: Binary):
        op = e.op
        if op in ("&", "|", "=>"):
            a = self.partial(e.left)
            if op == "=>":
                if isinstance(a, bool):
                    return self.partial(e.right) if a else True
                raise _err("clock constraints cannot appear on the left of =>", e)
            b = self.partial(e.right)
            return self._logic(op, a, b, e)
        a, b = self.partial(e.left), self.partial(e.right)
        if isinstance(a, _Clock) or isinstance(b, _Clock):
            return self._clock_compare(op, a, b, e)
        if isinstance(a, (ClockConstraint, str)) or isinstance(b, (ClockConstraint, str)):
            raise _err("clock constraints can only be combined with & and |", e)
        if op in ("+", "-", "*", "/"):
            if isinstance(a, bool) or isinstance(b, bool):
                raise _err(f"arithmetic on Booleans in {op}", e)
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if b == 0:
                raise _err("division by zero", e)
            return a / b
        if op == "=":
            return a == b
        if op == "!=":
            return a != b
        if isinstance(a, bool) or isinstance(b, bool):
            raise _err(f"ordering comparison {op} on Booleans", e)
        return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op]

    @staticmethod
    def _as_cc(v):
        if v is True:
            return TRUE
        if v is False:
            return _FALSE_CC
        return v

    def _logic(self, op, a, b, e):
        for v in (a, b):
            if not isinstance(v, (bool, ClockConstraint)) and v is not _FALSE_CC:
                raise _err(f"operands of {op} must be conditions", e)
        if op == "&":
            if a is False or b is False or a is _FALSE_CC or b is _FALSE_CC:
                return False
            if isinstance(a, bool) and isinstance(b, bool):
                return a and b
            return self._as_cc(a) & self._as_cc(b)
        if a is True or b is True:
            return True
        if isinstance(a, ClockConstraint) and a.is_true or isinstance(b, ClockConstraint) and b.is_true:
            return True
        live = [v for v in (a, b) if v is not False and v is not _FALSE_CC]
        if not live:
            return False
        if len(live) == 1:
            return live[0]
        raise _err("disjunctions of clock constraints are not supported", e)

    def _clock_compare(self, op, a, b, e):
        if isinstance(a, _Clock) and isinstance(b, _Clock):
            raise _err("diagonal constraints (comparing two clocks) are not allowed", e)
        if isinstance(b, _Clock):
            a, b = b, a
            op = {"<=": ">=", ">=": "<=", "<": ">", ">": "<"}.get(op, op)
        if op in ("<", ">"):
            raise _err("strict clock comparisons are not allowed (constraints must be closed)", e)
        if op not in ("<=", ">=", "="):
            raise _err(f"clock comparison {op} is not allowed", e)
        if isinstance(b, bool) or not float(b).is_integer() or b < 0:
            raise _err(f"clocks can only be compared with natural numbers, got {b!r}", e)
        c = int(b)
        if op == "=":
            return ClockConstraint.of([ClockBound(a.name, "<=", c), ClockBound(a.name, ">=", c)])
        return ClockConstraint.of([ClockBound(a.name, op, c)])


def _as_int(v, what, e) -> int:
    if isinstance(v, bool) or not float(v).is_integer():
        raise _err(f"{what} must be an integer, got {v!r}", e)
    return int(v)


# -- elaboration ------------------------------------------------------------


@dataclass
class _Var:
    name: str
    observable: bool
    low: int
    high: int
    init: int
    is_bool: bool

    def show(self, v: int) -> str:
        return ("true" if v else "false") if self.is_bool else str(v)


def _constants(doc: ModelDocument, overrides: Mapping[str, object]) -> dict[str, object]:
    unknown = set(overrides) - {c.name for c in doc.constants}
    if unknown:
        raise ModelError(f"unknown constant(s) {sorted(unknown)}")
    env: dict[str, object] = {}
    for c in doc.constants:
        if c.name in overrides:
            raw = overrides[c.name]
            val = _coerce(raw, c)
        elif c.value is None:
            raise _err(f"constant {c.name!r} has no value; supply one with --const {c.name}=...", c)
        else:
            val = _Evaluator(env, set()).value(c.value)
        if c.type == "int":
            val = _as_int(val, f"constant {c.name}", c)
        elif c.type == "bool" and not isinstance(val, bool):
            raise _err(f"constant {c.name} must be Boolean", c)
        elif c.type == "double":
            val = float(val)
        env[c.name] = val
    return env


def _coerce(raw, c: ConstDecl):
    if not isinstance(raw, str):
        return raw
    s = raw.strip()
    if c.type == "bool":
        if s not in ("true", "false"):
            raise ModelError(f"constant {c.name} expects true or false, got {raw!r}")
        return s == "true"
    try:
        return int(s) if c.type == "int" else float(s)
    except ValueError:
        raise ModelError(f"constant {c.name} expects a number, got {raw!r}") from None


def _variables(doc: ModelDocument, env) -> list[_Var]:
    out = []
    ev = _Evaluator(env, set())
    for v in doc.variables:
        if v.type == "bool":
            low, high = 0, 1
            init = ev.value(v.init) if v.init is not None else False
            if not isinstance(init, bool):
                raise _err(f"initial value of {v.name} must be Boolean", v)
            init = int(init)
        else:
            low = _as_int(ev.value(v.low), f"lower bound of {v.name}", v)
            high = _as_int(ev.value(v.high), f"upper bound of {v.name}", v)
            if low > high:
                raise _err(f"empty range [{low}..{high}] for {v.name}", v)
            init = _as_int(ev.value(v.init), f"initial value of {v.name}", v) if v.init is not None else low
            if not low <= init <= high:
                raise _err(f"initial value {init} of {v.name} outside [{low}..{high}]", v)
        out.append(_Var(v.name, v.observable, low, high, init, v.type == "bool"))
    return out


class _Ground:
    """Shared machinery for expanding commands over reachable valuations."""

    def __init__(self, doc: ModelDocument, constants: Mapping[str, object] | None):
        self.doc = doc
        self.consts = _constants(doc, constants or {})
        self.vars = _variables(doc, self.consts)
        self.clocks = {c.name for c in doc.clocks}
        self.index = {v.name: i for i, v in enumerate(self.vars)}

    def env(self, val: tuple[int, ...]) -> dict[str, object]:
        env = dict(self.consts)
        for v, x in zip(self.vars, val):
            env[v.name] = bool(x) if v.is_bool else x
        return env

    def ev(self, val) -> _Evaluator:
        return _Evaluator(self.env(val), self.clocks)

    def name(self, val) -> str:
        return ",".join(f"{v.name}={v.show(x)}" for v, x in zip(self.vars, val)) or "s"

    def obs_name(self, val) -> str:
        parts = [f"{v.name}={v.show(x)}" for v, x in zip(self.vars, val) if v.observable]
        return ",".join(parts) or "obs"

    def obs_vars(self, val) -> dict[str, int]:
        return {v.name: x for v, x in zip(self.vars, val) if v.observable}

    def branches(self, cmd: Command, val, ev: _Evaluator):
        """Expand a command's updates into (prob, successor valuation, reset clocks)."""
        out = []
        for up in cmd.updates:
            p = 1.0 if up.prob is None else ev.value(up.prob)
            if isinstance(p, bool) or not 0.0 <= p <= 1.0:
                raise _err(f"probability {p!r} outside [0, 1]", up.prob or cmd)
            choices = [(float(p), list(val), frozenset())]
            for a in up.assigns:
                if a.var in self.clocks:
                    if not isinstance(a, Assign) or ev.value(a.value) != 0:
                        raise _err(f"clock {a.var} can only be reset to 0", a)
                    choices = [(q, v, r | {a.var}) for q, v, r in choices]
                    continue
                var = self.vars[self.index[a.var]]
                if isinstance(a, Uniform):
                    lo = _as_int(ev.value(a.low), "range bound", a)
                    hi = _as_int(ev.value(a.high), "range bound", a)
                    if lo > hi:
                        raise _err(f"empty range [{lo}..{hi}]", a)
                    values = list(range(lo, hi + 1))
                    weight = 1.0 / len(values)
                else:
                    values = [ev.value(a.value)]
                    weight = 1.0
                nxt = []
                for q, v, r in choices:
                    for x in values:
                        if var.is_bool:
                            if not isinstance(x, bool):
                                raise _err(f"{var.name} is Boolean", a)
                            x = int(x)
                        else:
                            x = _as_int(x, f"value of {var.name}", a)
                        if not var.low <= x <= var.high:
                            raise _err(f"update sets {var.name}={x}, outside [{var.low}..{var.high}] "
                                       f"(from {self.name(val)})", a)
                        v2 = list(v)
                        v2[self.index[var.name]] = x
                        nxt.append((q * weight, v2, r))
                choices = nxt
            out.extend((q, tuple(v), r) for q, v, r in choices if q > 0.0)
        total = math.fsum(q for q, _, _ in out)
        if abs(total - 1.0) > 1e-12:
            raise _err(f"probabilities of command [{cmd.action}] sum to {total!r} in {self.name(val)}", cmd)
        return out

    def explore(self, state_limit: int):
        """Reachable valuations ignoring clocks, with enabled command instances per valuation."""
        init = tuple(v.init for v in self.vars)
        order = [init]
        seen = {init}
        queue = deque([init])
        found: dict[tuple, list] = {}
        while queue:
            val = queue.popleft()
            ev = self.ev(val)
            inst = []
            for cmd in self.doc.commands:
                g = ev.condition(cmd.guard)
                if g is False:
                    continue
                brs = self.branches(cmd, val, ev)
                inst.append((cmd, g, brs))
                for _, nv, _ in brs:
                    if nv not in seen:
                        if len(order) >= state_limit:
                            raise CapacityError(f"model has more than {state_limit} discrete states")
                        seen.add(nv)
                        order.append(nv)
                        queue.append(nv)
            found[val] = inst
        return order, found

    def hidden_valuations(self) -> int:
        return math.prod(v.high - v.low + 1 for v in self.vars if not v.observable)

    def label_sets(self, vals):
        out = {}
        for lab in self.doc.labels:
            members = set()
            for val in vals:
                if self.ev(val).condition(lab.expr) is True:
                    members.add(self.obs_name(val))
            out[lab.name] = frozenset(members)
        return out

    def reward_tables(self, vals):
        """Per reward structure: (state rate/reward by valuation, action reward by (valuation, action))."""
        out = {}
        for r in self.doc.rewards:
            state: dict[tuple, float] = {}
            act: dict[tuple, float] = {}
            for val in vals:
                ev = self.ev(val)
                for it in r.items:
                    g = ev.condition(it.guard)
                    if isinstance(g, ClockConstraint):
                        raise _err("reward guards may not mention clocks", it)
                    if not g:
                        continue
                    x = ev.value(it.value)
                    if isinstance(x, bool) or not math.isfinite(x) or x < 0:
                        raise _err(f"reward {x!r} must be a finite non-negative number", it)
                    if it.action is None:
                        state[val] = state.get(val, 0.0) + float(x)
                    else:
                        key = (val, it.action)
                        act[key] = act.get(key, 0.0) + float(x)
            out[r.name] = (state, act)
        return out


def elaborate(doc: ModelDocument, constants: Mapping[str, object] | None = None,
              reward: str | None = None, state_limit: int = 2_000_000) -> Popta | Pomdp:
    """Ground a parsed document into a Popta (kind popta) or Pomdp (kind pomdp).

    ``reward`` selects the reward structure used for a pomdp document (default:
    the first declared); popta models keep all structures in
    ``meta['reward_structures']`` and install the first as their rewards.
    """
    g = _Ground(doc, constants)
    vals, found = g.explore(state_limit)
    meta = {
        "observable_vars": tuple(v.name for v in g.vars if v.observable),
        "hidden_vars": tuple(v.name for v in g.vars if not v.observable),
        "hidden_valuations": g.hidden_valuations(),
        "constants": dict(g.consts),
    }
    rewards = g.reward_tables(vals)
    if reward is not None and reward not in rewards:
        raise ModelError(f"unknown reward structure {reward!r}; available: {sorted(rewards)}")
    if doc.kind == "popta":
        return _to_popta(doc, g, vals, found, rewards, meta)
    return _to_pomdp(g, vals, found, rewards, reward, meta)


def _to_popta(doc, g: _Ground, vals, found, rewards, meta) -> Popta:
    names = {val: g.name(val) for val in vals}
    clocks = tuple(c.name for c in doc.clocks)
    invariants = {}
    for val in vals:
        ev = g.ev(val)
        cc = TRUE
        for e in doc.invariants:
            c = ev.condition(e)
            if c is False:
                if not clocks:
                    raise _err(f"invariant is false in location {names[val]}", e)
                # unsatisfiable: no clock valuation may stay here
                c = ClockConstraint.of([ClockBound(clocks[0], "<=", 0), ClockBound(clocks[0], ">=", 1)])
            if isinstance(c, ClockConstraint):
                cc = cc & c
        if not cc.is_true:
            invariants[names[val]] = cc
    edges = []
    for val in vals:
        for cmd, guard, brs in found[val]:
            merged: dict[tuple, float] = {}
            for q, nv, resets in brs:
                key = (nv, resets)
                merged[key] = merged.get(key, 0.0) + q
            edges.append(Edge(
                names[val], cmd.action, guard if isinstance(guard, ClockConstraint) else TRUE,
                tuple(Branch(q, names[nv], r) for (nv, r), q in merged.items()),
            ))
    structures = {
        name: ({names[v]: x for v, x in st.items() if x},
               {(names[v], a): x for (v, a), x in act.items() if x})
        for name, (st, act) in rewards.items()
    }
    meta["reward_structures"] = structures
    meta["obs_vars"] = {g.obs_name(v): g.obs_vars(v) for v in vals}
    rate, act = next(iter(structures.values())) if structures else ({}, {})
    return Popta(
        locations=tuple(names[v] for v in vals),
        initial=names[vals[0]],
        clocks=clocks,
        actions=doc.actions,
        edges=tuple(edges),
        invariants=invariants,
        observation={names[v]: g.obs_name(v) for v in vals},
        rate_rewards=rate,
        action_rewards=act,
        labels=g.label_sets(vals),
        clock_bounds={c.name: c.bound for c in doc.clocks if c.bound is not None},
        meta=meta,
    )


def _to_pomdp(g: _Ground, vals, found, rewards, reward, meta) -> Pomdp:
    index = {val: i for i, val in enumerate(vals)}
    actions = g.doc.actions
    a_index = {a: i for i, a in enumerate(actions)}
    obs_names: list[str] = []
    obs_of: dict[str, int] = {}
    obs = []
    for val in vals:
        o = g.obs_name(val)
        if o not in obs_of:
            obs_of[o] = len(obs_names)
            obs_names.append(o)
        obs.append(obs_of[o])
    trans = {}
    for val in vals:
        s = index[val]
        for cmd, guard, brs in found[val]:
            key = (s, a_index[cmd.action])
            if key in trans:
                raise _err(f"two commands for action {cmd.action} are enabled in {g.name(val)}", cmd)
            dist: dict[int, float] = {}
            for q, nv, _ in brs:
                dist[index[nv]] = dist.get(index[nv], 0.0) + q
            trans[key] = tuple(sorted(dist.items()))
    chosen = reward if reward is not None else (next(iter(rewards)) if rewards else None)
    rew: dict[tuple[int, int], float] = {}
    if chosen is not None:
        st, act = rewards[chosen]
        for (s, a) in trans:
            x = st.get(vals[s], 0.0) + act.get((vals[s], actions[a]), 0.0)
            if x:
                rew[(s, a)] = x
    labels = {name: frozenset(obs_of[o] for o in members if o in obs_of)
              for name, members in g.label_sets(vals).items()}
    meta.update({
        "obs_location": tuple(obs_names),
        "obs_vars": tuple(g.obs_vars(vals[obs.index(o)]) for o in range(len(obs_names))),
        "reward_name": chosen,
        "reward_structures": tuple(rewards),
    })
    return Pomdp(
        states=tuple(g.name(v) for v in vals), initial=0, actions=tuple(actions),
        observations=tuple(obs_names), obs=tuple(obs), trans=trans, rewards=rew,
        labels=labels, meta=meta,
    )


def load_model(text: str, constants: Mapping[str, object] | None = None,
               reward: str | None = None) -> Popta | Pomdp:
    """Parse and elaborate ``.poptam`` source, or read a POMDP JSON document."""
    if text.lstrip().startswith("{"):
        return from_json(text)
    return elaborate(parse_model(text), constants=constants, reward=reward)
