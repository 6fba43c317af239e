"""Property language and its reduction to reachability / expected-reward objectives.

Surface syntax (one property per string)::

    Pmax=? [ F o5 ]            P>=0.5 [ true U<=10 goal ]
    Rmin=? [ F done ]          R{"energy"}<=3 [ C<=20 ]       R{"time"}max=? [ I=4 ]

State formulas are Boolean combinations of observation atoms (labels,
location observations, comparisons on observable variables) and closed clock
comparisons; ``!`` may only negate a single observation atom.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Literal, Union

from .errors import ParseError, PropertyError
from .popta import ClockBound, Popta, digitalize
from .pomdp import Pomdp, TargetSpec
from .solver import ObjectiveSpec

# -- AST --------------------------------------------------------------------


@dataclass(frozen=True)
class TrueF:
    def __str__(self):
        return "true"


@dataclass(frozen=True)
class FalseF:
    def __str__(self):
        return "false"


@dataclass(frozen=True)
class Atom:
    """Label or location-observation name, optionally negated."""

    name: str
    negated: bool = False

    def __str__(self):
        return ("!" if self.negated else "") + self.name


@dataclass(frozen=True)
class Compare:
    """``name op value``: a clock bound (<=, >=) or a test on an observable variable."""

    name: str
    op: str
    value: int
    negated: bool = False

    def __str__(self):
        s = f"{self.name}{self.op}{self.value}"
        return f"!({s})" if self.negated else s


@dataclass(frozen=True)
class And:
    args: tuple

    def __str__(self):
        return "(" + " & ".join(map(str, self.args)) + ")"


@dataclass(frozen=True)
class Or:
    args: tuple

    def __str__(self):
        return "(" + " | ".join(map(str, self.args)) + ")"


StateFormula = Union[TrueF, FalseF, Atom, Compare, And, Or]


@dataclass(frozen=True)
class Eventually:
    target: StateFormula
    bound: int | None = None


@dataclass(frozen=True)
class Until:
    left: StateFormula
    right: StateFormula
    bound: int | None = None


@dataclass(frozen=True)
class Cumulative:
    bound: int


@dataclass(frozen=True)
class Instant:
    time: int


PathFormula = Union[Eventually, Until, Cumulative, Instant]


@dataclass(frozen=True)
class Property:
    operator: Literal["P", "R"]
    path: PathFormula
    query: Literal["min", "max"] | None = None
    relation: str | None = None
    threshold: float | None = None
    reward: str | None = None

    @property
    def is_query(self) -> bool:
        return self.query is not None

    def __str__(self):
        head = self.operator
        if self.reward is not None:
            head += f'{{"{self.reward}"}}'
        head += f"{self.query}=?" if self.query else f"{self.relation}{_num(self.threshold)}"
        return f"{head} [ {format_path(self.path)} ]"


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def format_path(path: PathFormula) -> str:
    if isinstance(path, Eventually):
        b = f"<={path.bound}" if path.bound is not None else ""
        return f"F{b} {path.target}"
    if isinstance(path, Until):
        b = f"<={path.bound}" if path.bound is not None else ""
        return f"{path.left} U{b} {path.right}"
    if isinstance(path, Cumulative):
        return f"C<={path.bound}"
    return f"I={path.time}"


# -- parser -----------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>\d+(?:\.\d+)?(?:[eE][-+]?\d+)?|\.\d+)
  | (?P<str>"[^"]*")
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>=\?|<=|>=|!=|=>|[<>=!&|()\[\]{}])
""", re.VERBOSE)

_OPERATORS = {"P", "R", "Pmin", "Pmax", "Rmin", "Rmax"}


@dataclass
class _Tok:
    kind: str
    text: str
    col: int


def _lex(text: str) -> list[_Tok]:
    toks, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", 1, pos + 1)
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, m.group(), pos + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", len(text) + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _lex(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.tok
        return ParseError(msg, 1, tok.col)

    def take(self, text: str | None = None, kind: str | None = None) -> _Tok:
        t = self.tok
        if (text is not None and t.text != text) or (kind is not None and t.kind != kind):
            want = text if text is not None else kind
            raise self.error(f"expected {want!r}, found {t.text or 'end of input'!r}")
        self.i += 1
        return t

    def accept(self, text: str) -> bool:
        if self.tok.text == text and self.tok.kind != "str":
            self.i += 1
            return True
        return False

    def natural(self) -> int:
        t = self.take(kind="num")
        if not re.fullmatch(r"\d+", t.text):
            raise self.error(f"expected a natural number, found {t.text}", t)
        return int(t.text)

    def parse(self) -> Property:
        prop = self.operator()
        if self.tok.kind != "eof":
            raise self.error(f"unexpected trailing input {self.tok.text!r}")
        return prop

    def operator(self) -> Property:
        t = self.take(kind="name")
        if t.text not in _OPERATORS:
            raise self.error(f"property must start with P or R, found {t.text!r}", t)
        op, query = t.text[0], (t.text[1:] or None)
        reward = None
        if op == "R" and self.accept("{"):
            reward = self.take(kind="str").text[1:-1]
            self.take("}")
        relation = threshold = None
        if query is None and self.tok.text in ("min", "max"):
            query = self.take().text
        if query is not None:
            self.take("=?")
        elif self.tok.text == "=?":
            raise self.error("numeric queries need min or max (e.g. Pmax=?)")
        elif self.tok.text in ("<=", "<", ">=", ">"):
            relation = self.take().text
            threshold = float(self.take(kind="num").text)
            if op == "P" and not 0.0 <= threshold <= 1.0:
                raise self.error(f"probability threshold {threshold} outside [0, 1]")
            if threshold < 0.0:
                raise self.error("reward thresholds must be non-negative")
        else:
            raise self.error(f"expected a relation or =? after {t.text}")
        self.take("[")
        path = self.path(op)
        self.take("]")
        return Property(op, path, query=query, relation=relation, threshold=threshold, reward=reward)

    def bound(self) -> int | None:
        if self.accept("<="):
            return self.natural()
        if self.tok.text in ("<", ">", ">="):
            raise self.error("time bounds must have the form <=t")
        return None

    def path(self, op: str) -> PathFormula:
        t = self.tok
        if t.kind == "name" and t.text == "F":
            self.i += 1
            b = self.bound()
            if b is not None and op == "R":
                raise self.error("reward properties support F, C<=t and I=t only", t)
            return Eventually(self.formula(), b)
        if op == "R" and t.text == "C":
            self.i += 1
            self.take("<=")
            return Cumulative(self.natural())
        if op == "R" and t.text == "I":
            self.i += 1
            self.take("=")
            return Instant(self.natural())
        left = self.formula()
        if op == "R" or not (self.tok.kind == "name" and self.tok.text == "U"):
            raise self.error("expected F, U" + (", C or I" if op == "R" else ""))
        self.i += 1
        b = self.bound()
        return Until(left, self.formula(), b)

    def formula(self) -> StateFormula:
        args = [self.conj()]
        while self.accept("|"):
            args.append(self.conj())
        return args[0] if len(args) == 1 else Or(tuple(args))

    def conj(self) -> StateFormula:
        args = [self.unary()]
        while self.accept("&"):
            args.append(self.unary())
        return args[0] if len(args) == 1 else And(tuple(args))

    def unary(self) -> StateFormula:
        t = self.tok
        if self.accept("!"):
            inner = self.unary()
            if isinstance(inner, Atom):
                return replace(inner, negated=not inner.negated)
            if isinstance(inner, Compare) and inner.op == "=":
                return replace(inner, negated=not inner.negated)
            raise self.error("negation is only allowed on a single observation", t)
        if self.accept("("):
            f = self.formula()
            self.take(")")
            return f
        if t.kind == "str":
            self.i += 1
            return Atom(t.text[1:-1])
        if t.kind != "name":
            raise self.error(f"expected a state formula, found {t.text or 'end of input'!r}")
        if t.text in _OPERATORS and self.peek().text in ("[", "{", "=?", "<=", ">=", "<", ">", "min", "max"):
            raise self.error("nested P/R operators are not supported", t)
        self.i += 1
        if t.text == "true":
            return TrueF()
        if t.text == "false":
            return FalseF()
        nxt = self.tok
        if nxt.text in ("<=", ">=", "=", "!=", "<", ">"):
            self.i += 1
            if nxt.text in ("<", ">"):
                raise self.error("strict comparisons are not allowed (constraints must be closed)", nxt)
            value = self.natural()
            if nxt.text == "!=":
                return Compare(t.text, "=", value, negated=True)
            return Compare(t.text, nxt.text, value)
        return Atom(t.text)


def parse_property(text: str, atoms: set[str] | None = None) -> Property:
    """Parse a property; when ``atoms`` is given, unknown observation names are rejected."""
    prop = _Parser(text).parse()
    if atoms is not None:
        for a in _atoms(prop):
            if a.name not in atoms:
                raise PropertyError(f"unknown observation or label {a.name!r}")
    return prop


def _walk(f):
    if isinstance(f, (And, Or)):
        for g in f.args:
            yield from _walk(g)
    else:
        yield f


def _state_formulas(prop: Property):
    p = prop.path
    if isinstance(p, Eventually):
        return [p.target]
    if isinstance(p, Until):
        return [p.left, p.right]
    return []


def _atoms(prop: Property) -> list[Atom]:
    return [g for f in _state_formulas(prop) for g in _walk(f) if isinstance(g, Atom)]


# -- direction and verdicts -------------------------------------------------


def direction(prop: Property, mode: Literal["verify", "synth"] = "verify") -> str:
    """Optimisation direction needed to answer ``prop``.

    Verifying ``>=``/``>`` needs the minimum over strategies, ``<=``/``<`` the
    maximum; synthesis looks for a witness strategy, so the direction flips.
    """
    if prop.query is not None:
        return prop.query
    lower_bound = prop.relation in (">=", ">")
    if mode == "verify":
        return "min" if lower_bound else "max"
    return "max" if lower_bound else "min"


def verdict(prop: Property, lower: float, upper: float) -> str | None:
    """``holds``, ``fails`` or ``unknown`` from bounds on the relevant optimum; None for queries."""
    if prop.query is not None:
        return None
    p, rel = prop.threshold, prop.relation
    if rel == ">=":
        ok, bad = lower >= p, upper < p
    elif rel == ">":
        ok, bad = lower > p, upper <= p
    elif rel == "<=":
        ok, bad = upper <= p, lower > p
    else:
        ok, bad = upper < p, lower >= p
    return "holds" if ok else "fails" if bad else "unknown"


# -- reduction --------------------------------------------------------------


@dataclass(frozen=True)
class ReducedQuery:
    """Objective still expressed over formulas; ``bind`` resolves it on a concrete POMDP."""

    kind: Literal["prob", "reward"]
    direction: str
    target: StateFormula
    avoid: StateFormula
    clock: str | None = None  # fresh clock introduced by the reduction
    include_dead: bool = False  # deadlocked observations count as target (C and I)

    def bind(self, model: Pomdp) -> ObjectiveSpec:
        target = frozenset(o for o in range(len(model.observations)) if _holds(self.target, model, o))
        if self.include_dead:
            target |= _dead_observations(model)
        avoid = frozenset(o for o in range(len(model.observations))
                          if o not in target and _holds(self.avoid, model, o))
        if not target:
            raise PropertyError(f"target {self.target} holds in no reachable observation")
        return ObjectiveSpec(self.kind, self.direction, TargetSpec(target), avoid)


def _dead_observations(model: Pomdp) -> frozenset[int]:
    if "stutter" not in model.actions:
        return frozenset()
    st = model.actions.index("stutter")
    return frozenset(o for o, en in enumerate(model.class_enabled) if en == (st,))


def _known_atoms(model: Pomdp | Popta) -> set[str]:
    if isinstance(model, Popta):
        return set(model.labels) | {model.obs_of(l) for l in model.locations}
    return set(model.labels) | set(model.observations) | set(model.meta.get("obs_location", ()))


def _holds(f: StateFormula, model: Pomdp, o: int) -> bool:
    if isinstance(f, TrueF):
        return True
    if isinstance(f, FalseF):
        return False
    if isinstance(f, And):
        return all(_holds(g, model, o) for g in f.args)
    if isinstance(f, Or):
        return any(_holds(g, model, o) for g in f.args)
    if isinstance(f, Atom):
        if f.name in model.labels:
            val = o in model.labels[f.name]
        else:
            names = {model.observations[o]}
            if "obs_location" in model.meta:
                names.add(model.meta["obs_location"][o])
            val = f.name in names
        return val != f.negated
    clocks = model.obs_clocks[o] if model.obs_clocks is not None else {}
    if f.name in clocks:
        return ClockBound(f.name, f.op, f.value).holds(clocks)
    obs_vars = model.meta.get("obs_vars")
    if obs_vars is None or f.name not in obs_vars[o]:
        raise PropertyError(f"{f.name!r} is neither a clock nor an observable variable")
    v = obs_vars[o][f.name]
    val = {"<=": v <= f.value, ">=": v >= f.value, "=": v == f.value}[f.op]
    return val != f.negated


def _check_formula(f: StateFormula, model: Popta | Pomdp) -> None:
    atoms = _known_atoms(model)
    clocks = set(model.clocks) if isinstance(model, Popta) else set(model.meta.get("clocks", ()))
    obs_vars = set(model.meta.get("observable_vars", ()))
    hidden = set(model.meta.get("hidden_vars", ()))
    for g in _walk(f):
        if isinstance(g, Atom) and g.name not in atoms:
            raise PropertyError(f"unknown observation or label {g.name!r}")
        if isinstance(g, Compare):
            if g.name in clocks:
                if g.op == "=" or g.negated:
                    raise PropertyError(f"clock {g.name} may only be compared with <= or >=")
            elif g.name in hidden:
                raise PropertyError(f"{g.name} is hidden; properties may only refer to observable state")
            elif g.name not in obs_vars:
                raise PropertyError(f"unknown clock or variable {g.name!r}")


def _fresh_clock(model: Popta) -> str:
    taken = set(model.clocks) | set(model.meta.get("observable_vars", ())) | set(model.meta.get("hidden_vars", ()))
    name, i = "t_prop", 0
    while name in taken:
        i += 1
        name = f"t_prop{i}"
    return name


def _with_clock(model: Popta, bound: int) -> tuple[Popta, str]:
    y = _fresh_clock(model)
    return model.with_changes(clocks=model.clocks + (y,),
                              clock_bounds={**model.clock_bounds, y: bound}), y


def _conj(*fs) -> StateFormula:
    return And(tuple(fs))


def _not_obs(f: StateFormula) -> StateFormula:
    """Negation of a formula over (possibly negated) observation atoms only."""
    if isinstance(f, TrueF):
        return FalseF()
    if isinstance(f, FalseF):
        return TrueF()
    if isinstance(f, Atom):
        return replace(f, negated=not f.negated)
    if isinstance(f, Compare):
        if f.op == "=":
            return replace(f, negated=not f.negated)
        flip = {"<=": ">=", ">=": "<="}[f.op]
        return Compare(f.name, flip, f.value + 1 if f.op == "<=" else f.value - 1) \
            if (f.op == "<=" or f.value > 0) else FalseF()
    if isinstance(f, And):
        return Or(tuple(_not_obs(g) for g in f.args))
    return And(tuple(_not_obs(g) for g in f.args))


def reduce(model: Popta | Pomdp, prop: Property,
           mode: Literal["verify", "synth"] = "verify") -> tuple[Popta | Pomdp, ReducedQuery]:
    """Rewrite ``prop`` into a reachability or reward-to-target objective on a transformed model.

    Time bounds add a fresh clock that is never reset.  The returned query
    refers to formulas; its ``bind`` method maps them to observation indices
    once the model has been digitalized.
    """
    kind = "prob" if prop.operator == "P" else "reward"
    opt = direction(prop, mode)
    path = prop.path
    for f in _state_formulas(prop):
        _check_formula(f, model)
    if isinstance(model, Popta):
        model = _raise_clock_bounds(model, prop)
    bounded = getattr(path, "bound", None) is not None or isinstance(path, (Cumulative, Instant))
    if bounded and not isinstance(model, Popta):
        raise PropertyError("time-bounded operators need a timed model")
    if kind == "reward" and isinstance(model, Popta):
        model = _select_rewards(model, prop.reward)
    elif kind == "reward" and prop.reward is not None and prop.reward != model.meta.get("reward_name"):
        raise PropertyError(f"reward structure {prop.reward!r} is not available for this model")

    if isinstance(path, Eventually):
        if path.bound is None:
            return model, ReducedQuery(kind, opt, path.target, FalseF())
        model, y = _with_clock(model, path.bound)
        return model, ReducedQuery(kind, opt, _conj(path.target, Compare(y, "<=", path.bound)),
                                   Compare(y, ">=", path.bound + 1), clock=y)
    if isinstance(path, Until):
        avoid = _conj(_not_obs(path.left), _not_obs(path.right))
        if path.bound is None:
            return model, ReducedQuery(kind, opt, path.right, avoid)
        model, y = _with_clock(model, path.bound)
        return model, ReducedQuery(kind, opt, _conj(path.right, Compare(y, "<=", path.bound)),
                                   Or((avoid, Compare(y, ">=", path.bound + 1))), clock=y)
    if isinstance(path, Cumulative):
        model, y = _with_clock(model, path.bound)
        return model, ReducedQuery(kind, opt, Compare(y, ">=", path.bound), FalseF(), clock=y,
                                   include_dead=True)
    if path.time == 0:
        raise PropertyError("I=0 is not supported: no delay has elapsed, so no reward is collected")
    model, y = _with_clock(model, path.time)
    model = model.with_changes(instant_at=(y, path.time))
    return model, ReducedQuery(kind, opt, Compare(y, ">=", path.time), FalseF(), clock=y,
                               include_dead=True)


def _raise_clock_bounds(model: Popta, prop: Property) -> Popta:
    # constants in the property count towards k_x, otherwise capping could hide them
    bounds = dict(model.clock_bounds)
    for f in _state_formulas(prop):
        for g in _walk(f):
            if isinstance(g, Compare) and g.name in model.clocks:
                bounds[g.name] = max(bounds.get(g.name, 0), g.value)
    return model.with_changes(clock_bounds=bounds) if bounds != dict(model.clock_bounds) else model


def _select_rewards(model: Popta, name: str | None) -> Popta:
    structures = model.meta.get("reward_structures")
    if not structures:
        if name is not None:
            raise PropertyError(f"model has no reward structure {name!r}")
        return model
    if name is None:
        name = next(iter(structures))
    if name not in structures:
        raise PropertyError(f"unknown reward structure {name!r}; available: {sorted(structures)}")
    rate, act = structures[name]
    return model.with_changes(rate_rewards=rate, action_rewards=act)


def compile_property(model: Popta | Pomdp, prop: Property, mode: str = "verify", **digital_kw):
    """reduce + digitalize + bind.  Returns ``(pomdp, objective, digital_model_or_None)``."""
    reduced_model, query = reduce(model, prop, mode)
    digital = None
    if isinstance(reduced_model, Popta):
        digital = digitalize(reduced_model, **digital_kw)
        pomdp = digital.pomdp
    else:
        pomdp = reduced_model
    return pomdp, query.bind(pomdp), digital
