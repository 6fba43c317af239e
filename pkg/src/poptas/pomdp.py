"""POMDP model, validation and belief arithmetic.

Beliefs are kept in factored form: every reachable belief is supported on a
single observation class, so a belief is the class index plus a sparse
distribution over the states of that class.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ImpossibleObservationError, ModelError

PRUNE_TOL = 1e-12
SUM_TOL = 1e-12
DEDUP_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Pomdp:
    """Finite POMDP with a deterministic state labelling ``obs``.

    ``trans`` maps ``(state, action)`` to a tuple of ``(successor, prob)``
    pairs; a missing key means the action is not enabled.  ``rewards`` maps
    ``(state, action)`` to a non-negative reward (absent = 0).

    ``labels`` names sets of observation indices (used as atoms in
    properties) and ``obs_clocks`` optionally gives the clock valuation
    exposed by each observation of a digital-clocks model.
    """

    states: tuple[str, ...]
    initial: int
    actions: tuple[str, ...]
    observations: tuple[str, ...]
    obs: tuple[int, ...]
    trans: Mapping[tuple[int, int], tuple[tuple[int, float], ...]]
    rewards: Mapping[tuple[int, int], float] = field(default_factory=dict)
    labels: Mapping[str, frozenset[int]] = field(default_factory=dict)
    obs_clocks: tuple[Mapping[str, int], ...] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def num_states(self) -> int:
        return len(self.states)

    @cached_property
    def enabled(self) -> tuple[tuple[int, ...], ...]:
        """Enabled action indices per state, ascending."""
        en = [[] for _ in self.states]
        for (s, a) in self.trans:
            en[s].append(a)
        return tuple(tuple(sorted(e)) for e in en)

    @cached_property
    def classes(self) -> tuple[tuple[int, ...], ...]:
        """States of each observation class, sorted by index."""
        groups = [[] for _ in self.observations]
        for s, o in enumerate(self.obs):
            groups[o].append(s)
        return tuple(tuple(g) for g in groups)

    @cached_property
    def class_position(self) -> np.ndarray:
        """Position of each state inside its observation class."""
        pos = np.zeros(len(self.states), dtype=np.int64)
        for members in self.classes:
            for i, s in enumerate(members):
                pos[s] = i
        return pos

    @cached_property
    def class_enabled(self) -> tuple[tuple[int, ...], ...]:
        """Enabled actions of each (non-empty) observation class."""
        return tuple(self.enabled[m[0]] if m else () for m in self.classes)

    @cached_property
    def transition_matrices(self) -> tuple[sp.csr_matrix, ...]:
        """One |S| x |S| sparse matrix per action (rows of disabled pairs are zero)."""
        n = len(self.states)
        rows = [[] for _ in self.actions]
        cols = [[] for _ in self.actions]
        vals = [[] for _ in self.actions]
        for (s, a), succ in self.trans.items():
            for t, p in succ:
                rows[a].append(s)
                cols[a].append(t)
                vals[a].append(p)
        return tuple(
            sp.csr_matrix((vals[a], (rows[a], cols[a])), shape=(n, n))
            for a in range(len(self.actions))
        )

    @cached_property
    def reward_matrix(self) -> np.ndarray:
        r = np.zeros((len(self.states), len(self.actions)))
        for (s, a), v in self.rewards.items():
            r[s, a] = v
        return r

    def action_index(self, name: str) -> int:
        return self.actions.index(name)

    def observation_index(self, name: str) -> int:
        return self.observations.index(name)


@dataclass(frozen=True)
class Belief:
    """Sparse single-class belief; ``states`` ascending, ``probs`` aligned."""

    obs_class: int
    states: tuple[int, ...]
    probs: tuple[float, ...]

    @classmethod
    def point(cls, model: Pomdp, state: int) -> Belief:
        return cls(model.obs[state], (state,), (1.0,))

    @classmethod
    def from_mapping(cls, model: Pomdp, dist: Mapping[int, float]) -> Belief:
        """Build a belief from ``state -> prob``, pruning and renormalising."""
        items = sorted((s, p) for s, p in dist.items() if p > PRUNE_TOL)
        if not items:
            raise ModelError("belief has no mass above the pruning threshold")
        total = math.fsum(p for _, p in items)
        classes = {model.obs[s] for s, _ in items}
        if len(classes) != 1:
            raise ModelError(f"belief support spans observation classes {sorted(classes)}")
        return cls(classes.pop(), tuple(s for s, _ in items), tuple(p / total for _, p in items))

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.states, self.probs))

    def dense(self, model: Pomdp) -> np.ndarray:
        """Vector over the states of the belief's observation class."""
        vec = np.zeros(len(model.classes[self.obs_class]))
        vec[model.class_position[list(self.states)]] = self.probs
        return vec

    def distance(self, other: Belief) -> float:
        """L-infinity distance (beliefs in different classes are at distance 1)."""
        if self.obs_class != other.obs_class:
            return 1.0
        a, b = self.as_dict(), other.as_dict()
        return max(abs(a.get(s, 0.0) - b.get(s, 0.0)) for s in set(a) | set(b))


@dataclass(frozen=True)
class TargetSpec:
    target_observations: frozenset[int]

    def __post_init__(self):
        if not self.target_observations:
            raise ModelError("target observation set must be non-empty")


def validate(model: Pomdp) -> list[str]:
    """Return the list of violated model invariants (empty means valid)."""
    problems: list[str] = []
    n = len(model.states)
    if len(model.obs) != n:
        problems.append(f"obs has {len(model.obs)} entries for {n} states")
        return problems
    if not 0 <= model.initial < n:
        problems.append(f"initial state {model.initial} out of range")
        return problems
    for s, o in enumerate(model.obs):
        if not 0 <= o < len(model.observations):
            problems.append(f"state {model.states[s]} has unknown observation {o}")
    for (s, a), succ in model.trans.items():
        if not (0 <= s < n and 0 <= a < len(model.actions)):
            problems.append(f"transition ({s}, {a}) references unknown state or action")
            continue
        total = math.fsum(p for _, p in succ)
        if abs(total - 1.0) > SUM_TOL:
            problems.append(
                f"distribution of state {model.states[s]} action {model.actions[a]} "
                f"sums to {total!r}, not 1"
            )
        for t, p in succ:
            if not 0 <= t < n:
                problems.append(f"state {model.states[s]} action {model.actions[a]} "
                                f"has unknown successor {t}")
            elif not p >= 0.0:
                problems.append(f"negative probability {p!r} from {model.states[s]} "
                                f"under {model.actions[a]}")
    for (s, a), r in model.rewards.items():
        if not (math.isfinite(r) and r >= 0.0):
            problems.append(f"reward of state {s} action {a} is {r!r}; rewards must be finite and >= 0")
    if problems:
        return problems
    for members in model.classes:
        if not members:
            continue
        ref = members[0]
        for s in members[1:]:
            if model.enabled[s] != model.enabled[ref]:
                diff = sorted(set(model.enabled[s]) ^ set(model.enabled[ref]))
                problems.append(
                    f"states {model.states[ref]} and {model.states[s]} share observation "
                    f"{model.observations[model.obs[s]]} but differ on actions "
                    f"{[model.actions[a] for a in diff]}"
                )
    o_init = model.obs[model.initial]
    if len(model.classes[o_init]) != 1:
        others = [model.states[s] for s in model.classes[o_init] if s != model.initial]
        problems.append(
            f"initial observation {model.observations[o_init]} is shared with {others}; "
            "the initial state must be uniquely observable"
        )
    return problems


def _check_enabled(model: Pomdp, b: Belief, a: int) -> None:
    if a not in model.enabled[b.states[0]]:
        raise ModelError(
            f"action {model.actions[a]} is not enabled in observation "
            f"{model.observations[b.obs_class]}"
        )


def next_state_mass(model: Pomdp, b: Belief, a: int) -> dict[int, float]:
    """Unnormalised successor distribution ``sum_s b(s) P(s,a)(.)``."""
    _check_enabled(model, b, a)
    mass: dict[int, float] = defaultdict(float)
    for s, p in zip(b.states, b.probs):
        for t, q in model.trans[(s, a)]:
            mass[t] += p * q
    return mass


def obs_probability(model: Pomdp, b: Belief, a: int) -> dict[int, float]:
    """``Pr[o | a, b]`` for every observation with positive probability."""
    out: dict[int, float] = defaultdict(float)
    for t, m in next_state_mass(model, b, a).items():
        out[model.obs[t]] += m
    return {o: p for o, p in sorted(out.items()) if p > 0.0}


def _split(model: Pomdp, mass: Mapping[int, float]) -> dict[int, dict[int, float]]:
    by_obs: dict[int, dict[int, float]] = defaultdict(dict)
    for t, m in mass.items():
        by_obs[model.obs[t]][t] = m
    return by_obs


def belief_update(model: Pomdp, b: Belief, a: int, o: int) -> Belief:
    """Belief reached from ``b`` after performing ``a`` and observing ``o``."""
    part = _split(model, next_state_mass(model, b, a)).get(o)
    if not part or math.fsum(part.values()) <= 0.0:
        raise ImpossibleObservationError(
            f"observation {model.observations[o]} has probability 0 after "
            f"{model.actions[a]}"
        )
    return Belief.from_mapping(model, part)


def successors(model: Pomdp, b: Belief, a: int) -> list[tuple[int, float, Belief]]:
    """All ``(o, Pr[o|a,b], b^{a,o})`` triples in one pass, ordered by ``o``."""
    out = []
    for o, part in sorted(_split(model, next_state_mass(model, b, a)).items()):
        p = math.fsum(part.values())
        if p > 0.0:
            out.append((o, p, Belief.from_mapping(model, part)))
    return out


def belief_reward(model: Pomdp, b: Belief, a: int) -> float:
    _check_enabled(model, b, a)
    return math.fsum(p * model.rewards.get((s, a), 0.0) for s, p in zip(b.states, b.probs))


def is_target(b: Belief, target: TargetSpec) -> bool:
    # support is single-class and already pruned at PRUNE_TOL
    return b.obs_class in target.target_observations


def initial_belief(model: Pomdp) -> Belief:
    return Belief.point(model, model.initial)


# -- qualitative graph analysis on the underlying fully observable MDP ------

def _predecessors(model: Pomdp) -> list[list[tuple[int, int]]]:
    pred: list[list[tuple[int, int]]] = [[] for _ in model.states]
    for (s, a), succ in model.trans.items():
        for t, p in succ:
            if p > 0.0:
                pred[t].append((s, a))
    return pred


def prob0_exists(model: Pomdp, target: set[int]) -> set[int]:
    """States from which some strategy avoids ``target`` forever (Pmin = 0)."""
    # greatest fixpoint: Z = {s not in T : exists a with supp P(s,a) within Z}
    z = set(range(len(model.states))) - set(target)
    changed = True
    while changed:
        changed = False
        for s in sorted(z):
            en = model.enabled[s]
            if not en:
                continue  # deadlock: stays put forever
            if not any(all(t in z for t, p in model.trans[(s, a)] if p > 0.0) for a in en):
                z.discard(s)
                changed = True
    return z


def prob1_all(model: Pomdp, target: set[int]) -> tuple[set[int], int | None]:
    """States reaching ``target`` with probability 1 under every strategy.

    Returns the set and, when the initial state is not in it, a witness state
    from which the target can be avoided forever.
    """
    z = prob0_exists(model, target)
    pred = _predecessors(model)
    bad = set(z)
    stack = list(z)
    while stack:
        t = stack.pop()
        for s, _ in pred[t]:
            if s not in bad and s not in target:
                bad.add(s)
                stack.append(s)
    good = set(range(len(model.states))) - bad
    witness = None
    if model.initial in bad:
        reach = reachable_states(model)
        witness = min(s for s in z if s in reach) if z & reach else min(z)
    return good, witness


def reachable_states(model: Pomdp) -> set[int]:
    seen = {model.initial}
    stack = [model.initial]
    while stack:
        s = stack.pop()
        for a in model.enabled[s]:
            for t, p in model.trans[(s, a)]:
                if p > 0.0 and t not in seen:
                    seen.add(t)
                    stack.append(t)
    return seen


# -- JSON document ----------------------------------------------------------

def to_json(model: Pomdp) -> str:
    """Serialise to the POMDP document format (floats keep full precision)."""
    doc = {
        "states": list(model.states),
        "initial": model.initial,
        "actions": list(model.actions),
        "observations": list(model.observations),
        "obs": list(model.obs),
        "trans": [
            {"state": s, "action": a,
             "successors": [{"state": t, "prob": p} for t, p in succ]}
            for (s, a), succ in sorted(model.trans.items())
        ],
        "rewards": [
            {"state": s, "action": a, "reward": r}
            for (s, a), r in sorted(model.rewards.items()) if r != 0.0
        ],
    }
    if model.labels:
        doc["labels"] = {k: sorted(v) for k, v in sorted(model.labels.items())}
    if model.obs_clocks is not None:
        doc["observation_clocks"] = [dict(v) for v in model.obs_clocks]
    return json.dumps(doc, indent=1)


def from_json(text: str) -> Pomdp:
    """Parse a POMDP document; states, actions and observations may be given by index or name."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"invalid JSON: {exc}") from exc
    try:
        states = tuple(str(s) for s in doc["states"])
        actions = tuple(str(a) for a in doc["actions"])
        observations = tuple(str(o) for o in doc["observations"])

        def ref(value, names, what):
            if isinstance(value, str):
                if value not in names:
                    raise ModelError(f"unknown {what} {value!r}")
                return names.index(value)
            return int(value)

        obs_field = doc["obs"]
        if isinstance(obs_field, dict):
            obs = tuple(ref(obs_field[s], observations, "observation") for s in states)
        else:
            obs = tuple(ref(o, observations, "observation") for o in obs_field)
        trans: dict[tuple[int, int], tuple[tuple[int, float], ...]] = {}
        for entry in doc["trans"]:
            key = (ref(entry["state"], states, "state"), ref(entry["action"], actions, "action"))
            if key in trans:
                raise ModelError(f"duplicate transition entry for {key}")
            trans[key] = tuple(
                (ref(x["state"], states, "state"), float(x["prob"])) for x in entry["successors"]
            )
        rewards = {}
        for entry in doc.get("rewards", []):
            key = (ref(entry["state"], states, "state"), ref(entry["action"], actions, "action"))
            rewards[key] = rewards.get(key, 0.0) + float(entry["reward"])
        labels = {name: frozenset(ref(i, observations, "observation") for i in members)
                  for name, members in doc.get("labels", {}).items()}
        clocks = doc.get("observation_clocks")
        return Pomdp(
            states=states,
            initial=ref(doc["initial"], states, "state"),
            actions=actions,
            observations=observations,
            obs=obs,
            trans=trans,
            rewards=rewards,
            labels=labels,
            obs_clocks=tuple(dict(c) for c in clocks) if clocks is not None else None,
        )
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed POMDP document: missing or bad field {exc}") from exc


def build(states: Sequence[str], initial: int, actions: Sequence[str], observations: Sequence[str],
          obs: Sequence[int], trans, rewards=None, labels=None) -> Pomdp:
    """Convenience constructor normalising containers to tuples/dicts."""
    return Pomdp(
        states=tuple(states),
        initial=initial,
        actions=tuple(actions),
        observations=tuple(observations),
        obs=tuple(int(o) for o in obs),
        trans={k: tuple((int(t), float(p)) for t, p in v) for k, v in trans.items()},
        rewards=dict(rewards or {}),
        labels={k: frozenset(v) for k, v in (labels or {}).items()},
    )
