"""Partially observable probabilistic timed automata and their digital-clocks semantics.

Clock constraints are conjunctions of ``x <= c`` / ``x >= c`` atoms, so closed
and diagonal-free constraints are the only ones representable.  ``digitalize``
explores the integer-time semantics from the initial location with all clocks
at zero and returns a finite POMDP whose observations are pairs of a location
observation and the (observable) clock valuation.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal, Mapping

from .errors import CapacityError, ModelError
from .pomdp import SUM_TOL, Pomdp, validate as validate_pomdp

DELAY = "delay"
STUTTER = "stutter"
DEFAULT_STATE_LIMIT = 2_000_000


@dataclass(frozen=True, order=True)
class ClockBound:
    clock: str
    op: Literal["<=", ">="]
    bound: int

    def __post_init__(self):
        if self.op not in ("<=", ">="):
            raise ModelError(f"clock constraints must be closed (<= or >=), got {self.op!r}")
        if self.bound < 0 or int(self.bound) != self.bound:
            raise ModelError(f"clock bound must be a natural number, got {self.bound!r}")

    def holds(self, valuation: Mapping[str, int]) -> bool:
        v = valuation[self.clock]
        return v <= self.bound if self.op == "<=" else v >= self.bound

    def __str__(self):
        return f"{self.clock}{self.op}{self.bound}"


@dataclass(frozen=True)
class ClockConstraint:
    """Conjunction of clock bounds; the empty conjunction is ``true``."""

    conjuncts: tuple[ClockBound, ...] = ()

    @classmethod
    def of(cls, bounds: Iterable[ClockBound]) -> ClockConstraint:
        return cls(tuple(sorted(set(bounds))))

    @property
    def is_true(self) -> bool:
        return not self.conjuncts

    def holds(self, valuation: Mapping[str, int]) -> bool:
        return all(c.holds(valuation) for c in self.conjuncts)

    def clocks(self) -> set[str]:
        return {c.clock for c in self.conjuncts}

    def __and__(self, other: ClockConstraint) -> ClockConstraint:
        return ClockConstraint.of(self.conjuncts + other.conjuncts)

    def __str__(self):
        return " & ".join(map(str, self.conjuncts)) if self.conjuncts else "true"


TRUE = ClockConstraint()


@dataclass(frozen=True)
class Branch:
    prob: float
    target: str
    resets: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Edge:
    """One probabilistic edge; several edges may share (source, action) if their guards are disjoint."""

    source: str
    action: str
    guard: ClockConstraint
    branches: tuple[Branch, ...]


@dataclass(frozen=True, eq=False)
class Popta:
    locations: tuple[str, ...]
    initial: str
    clocks: tuple[str, ...]
    actions: tuple[str, ...]
    edges: tuple[Edge, ...]
    invariants: Mapping[str, ClockConstraint] = field(default_factory=dict)
    observation: Mapping[str, str] = field(default_factory=dict)  # obs_L; default: location name
    rate_rewards: Mapping[str, float] = field(default_factory=dict)
    action_rewards: Mapping[tuple[str, str], float] = field(default_factory=dict)
    labels: Mapping[str, frozenset[str]] = field(default_factory=dict)  # name -> location observations
    clock_bounds: Mapping[str, int] = field(default_factory=dict)  # lower limits on k_x
    # (clock, t): pay the location rate only on the unit delay that brings the clock to t
    instant_at: tuple[str, int] | None = None
    meta: dict = field(default_factory=dict)

    def obs_of(self, location: str) -> str:
        return self.observation.get(location, location)

    def invariant(self, location: str) -> ClockConstraint:
        return self.invariants.get(location, TRUE)

    def edges_from(self) -> dict[tuple[str, str], list[Edge]]:
        out: dict[tuple[str, str], list[Edge]] = defaultdict(list)
        for e in self.edges:
            out[(e.source, e.action)].append(e)
        return out

    def clock_limits(self) -> dict[str, int]:
        """k_x: the largest constant each clock is compared with."""
        k = {x: 0 for x in self.clocks}
        constraints = list(self.invariants.values()) + [e.guard for e in self.edges]
        for cc in constraints:
            for c in cc.conjuncts:
                k[c.clock] = max(k[c.clock], c.bound)
        for x, b in self.clock_bounds.items():
            k[x] = max(k[x], b)
        return k

    def with_changes(self, **changes) -> Popta:
        return replace(self, **changes)


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    witness: object = None


@dataclass
class RestrictionReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "no restriction violations"
        return "\n".join(f"[{v.kind}] {v.message}" for v in self.violations)


@dataclass
class DigitalModel:
    """Result of ``digitalize``: the POMDP, its state legend and exploration findings."""

    pomdp: Pomdp
    legend: list[tuple[str, dict[str, int]]]
    reset_violations: list[Violation]
    clock_limits: dict[str, int]

    def legend_document(self) -> list[dict]:
        return [{"state": i, "location": loc, "clocks": dict(v)}
                for i, (loc, v) in enumerate(self.legend)]


def _structural_checks(model: Popta) -> list[Violation]:
    out: list[Violation] = []
    locs = set(model.locations)
    if len(locs) != len(model.locations):
        out.append(Violation("structure", "duplicate location names"))
    if model.initial not in locs:
        out.append(Violation("structure", f"initial location {model.initial!r} is not declared"))
    clocks = set(model.clocks)
    acts = set(model.actions)
    for loc, inv in model.invariants.items():
        for x in inv.clocks() - clocks:
            out.append(Violation("structure", f"invariant of {loc} uses undeclared clock {x}"))
    for e in model.edges:
        where = f"edge {e.source} --{e.action}-->"
        if e.source not in locs:
            out.append(Violation("structure", f"{where} leaves undeclared location"))
        if e.action not in acts:
            out.append(Violation("structure", f"{where} uses undeclared action"))
        for x in e.guard.clocks() - clocks:
            out.append(Violation("structure", f"{where} guard uses undeclared clock {x}"))
        total = math.fsum(b.prob for b in e.branches)
        if abs(total - 1.0) > SUM_TOL or any(b.prob < 0 for b in e.branches):
            out.append(Violation("distribution", f"{where} probabilities sum to {total!r}", e))
        for b in e.branches:
            if b.target not in locs:
                out.append(Violation("structure", f"{where} targets undeclared location {b.target}"))
            for x in b.resets - clocks:
                out.append(Violation("structure", f"{where} resets undeclared clock {x}"))
    return out


def _valuations(clocks: tuple[str, ...], limits: Mapping[str, int], cap: int = 200_000):
    sizes = [limits[x] + 2 for x in clocks]
    if math.prod(sizes) > cap:
        return None
    return [dict(zip(clocks, vals)) for vals in itertools.product(*(range(s) for s in sizes))]


def _enabled_somewhere(edges: list[Edge], v: Mapping[str, int]) -> bool:
    return any(e.guard.holds(v) for e in edges)


def _observation_checks(model: Popta) -> list[Violation]:
    out: list[Violation] = []
    groups: dict[str, list[str]] = defaultdict(list)
    for loc in model.locations:
        groups[model.obs_of(loc)].append(loc)
    init_obs = model.obs_of(model.initial)
    if len(groups.get(init_obs, [])) > 1:
        others = [l for l in groups[init_obs] if l != model.initial]
        out.append(Violation("observation",
                             f"initial location shares observation {init_obs} with {others}", others))
    by_pair = model.edges_from()
    limits = model.clock_limits()
    vals = _valuations(model.clocks, limits)
    for o, locs in groups.items():
        ref = locs[0]
        for loc in locs[1:]:
            if model.invariant(loc) != model.invariant(ref):
                same = vals is not None and all(
                    model.invariant(loc).holds(v) == model.invariant(ref).holds(v) for v in vals)
                if not same:
                    out.append(Violation(
                        "observation",
                        f"locations {ref} and {loc} share observation {o} but have invariants "
                        f"{model.invariant(ref)} and {model.invariant(loc)}", (ref, loc)))
            for a in model.actions:
                e1, e2 = by_pair.get((ref, a), []), by_pair.get((loc, a), [])
                if not e1 and not e2:
                    continue
                if vals is None:
                    differ = sorted(str(e.guard) for e in e1) != sorted(str(e.guard) for e in e2)
                else:
                    differ = any(_enabled_somewhere(e1, v) != _enabled_somewhere(e2, v) for v in vals)
                if differ:
                    out.append(Violation(
                        "observation",
                        f"locations {ref} and {loc} share observation {o} but enable {a} "
                        f"under different clock conditions", (ref, loc, a)))
    return out


def check_restrictions(model: Popta, explore: bool = True,
                       state_limit: int = DEFAULT_STATE_LIMIT) -> RestrictionReport:
    """Static structure/observation checks, plus the reset-of-zero-clock check by exploration."""
    report = RestrictionReport(_structural_checks(model))
    if report.violations:
        return report
    report.violations += _observation_checks(model)
    if explore:
        try:
            report.violations += digitalize(model, state_limit=state_limit, validate=False).reset_violations
        except ModelError as exc:
            report.violations.append(Violation("semantics", str(exc)))
    return report


def _fmt_valuation(clocks: tuple[str, ...], v: tuple[int, ...]) -> str:
    return ",".join(f"{x}={c}" for x, c in zip(clocks, v))


def digitalize(model: Popta, state_limit: int = DEFAULT_STATE_LIMIT,
               validate: bool = True) -> DigitalModel:
    """Digital-clocks semantics as a POMDP (unit delays, clocks capped at k_x + 1)."""
    if validate:
        problems = _structural_checks(model) + _observation_checks(model)
        if problems:
            raise ModelError("; ".join(v.message for v in problems))
    clocks = model.clocks
    limits = model.clock_limits()
    cap = tuple(limits[x] + 1 for x in clocks)
    by_pair = model.edges_from()
    actions = (DELAY,) + tuple(model.actions)
    act_index = {a: i for i, a in enumerate(actions)}
    instant = model.instant_at
    if instant is not None and instant[0] not in clocks:
        raise ModelError(f"instant reward clock {instant[0]} is not declared")

    def as_map(v):
        return dict(zip(clocks, v))

    start = (model.initial, (0,) * len(clocks))
    if not model.invariant(model.initial).holds(as_map(start[1])):
        raise ModelError(f"initial location {model.initial} violates its invariant at time 0")
    index = {start: 0}
    order = [start]
    queue = deque([start])
    trans: dict[tuple[int, int], tuple[tuple[int, float], ...]] = {}
    rewards: dict[tuple[int, int], float] = {}
    resets_bad: list[Violation] = []
    dead: list[int] = []

    def intern(st):
        i = index.get(st)
        if i is None:
            if len(order) >= state_limit:
                raise CapacityError(f"digital clocks semantics exceeds {state_limit} states")
            i = index[st] = len(order)
            order.append(st)
            queue.append(st)
        return i

    while queue:
        st = queue.popleft()
        loc, v = st
        s = index[st]
        vm = as_map(v)
        any_enabled = False
        # unit delay
        nv = tuple(min(c + 1, k) for c, k in zip(v, cap))
        if model.invariant(loc).holds(as_map(nv)):
            any_enabled = True
            t = intern((loc, nv))
            trans[(s, 0)] = ((t, 1.0),)
            rate = model.rate_rewards.get(loc, 0.0)
            if instant is not None:
                y = clocks.index(instant[0])
                rate = rate if (v[y] < instant[1] <= nv[y]) else 0.0
            if rate:
                rewards[(s, 0)] = rate
        for a in model.actions:
            live = [e for e in by_pair.get((loc, a), ()) if e.guard.holds(vm)]
            if not live:
                continue
            if len(live) > 1:
                raise ModelError(
                    f"action {a} has {len(live)} enabled edges in location {loc} at "
                    f"{_fmt_valuation(clocks, v)}; guards of edges sharing an action must be disjoint")
            edge = live[0]
            any_enabled = True
            dist: dict[int, float] = defaultdict(float)
            for br in edge.branches:
                if br.prob <= 0.0:
                    continue
                for x in sorted(br.resets):
                    if vm[x] == 0:
                        resets_bad.append(Violation(
                            "reset-zero",
                            f"edge {loc} --{a}--> {br.target} resets clock {x} while it is 0 "
                            f"(state {loc}|{_fmt_valuation(clocks, v)})", (loc, dict(vm), a, x)))
                w = tuple(0 if x in br.resets else c for x, c in zip(clocks, v))
                if not model.invariant(br.target).holds(as_map(w)):
                    raise ModelError(
                        f"edge {loc} --{a}--> {br.target} enters the target at "
                        f"{_fmt_valuation(clocks, w)}, violating its invariant {model.invariant(br.target)}")
                dist[intern((br.target, w))] += br.prob
            trans[(s, act_index[a])] = tuple(sorted(dist.items()))
            r = model.action_rewards.get((loc, a), 0.0)
            if r and instant is None:
                rewards[(s, act_index[a])] = r
        if not any_enabled:
            dead.append(s)

    if dead:
        actions = actions + (STUTTER,)
        for s in dead:
            trans[(s, len(actions) - 1)] = ((s, 1.0),)

    obs_names: list[str] = []
    obs_index: dict[tuple[str, tuple[int, ...]], int] = {}
    obs_loc: list[str] = []
    obs_clocks: list[dict[str, int]] = []
    obs = []
    for loc, v in order:
        key = (model.obs_of(loc), v)
        o = obs_index.get(key)
        if o is None:
            o = obs_index[key] = len(obs_names)
            name = key[0] if not clocks else f"{key[0]}|{_fmt_valuation(clocks, v)}"
            obs_names.append(name)
            obs_loc.append(key[0])
            obs_clocks.append(as_map(v))
        obs.append(o)
    labels = {
        name: frozenset(o for o, lo in enumerate(obs_loc) if lo in members)
        for name, members in model.labels.items()
    }
    state_names = tuple(
        loc if not clocks else f"{loc}|{_fmt_valuation(clocks, v)}" for loc, v in order)
    meta = dict(model.meta)
    meta.update({
        "obs_location": tuple(obs_loc),
        "clocks": clocks,
        "clock_limits": dict(limits),
        "locations": len(model.locations),
        "dead_states": len(dead),
    })
    if "obs_vars" in model.meta:
        meta["obs_vars"] = tuple(model.meta["obs_vars"][lo] for lo in obs_loc)
    pomdp = Pomdp(
        states=state_names, initial=0, actions=actions, observations=tuple(obs_names),
        obs=tuple(obs), trans=trans, rewards=rewards, labels=labels,
        obs_clocks=tuple(obs_clocks), meta=meta,
    )
    if validate:
        problems = validate_pomdp(pomdp)
        if problems:
            raise ModelError("digital semantics is not a valid POMDP: " + "; ".join(problems[:5]))
    legend = [(loc, as_map(v)) for loc, v in order]
    return DigitalModel(pomdp, legend, resets_bad, dict(limits))
