"""Independent reference computations used by the tests.

Nothing here imports the belief, grid or solver code: the brute-force
oracle works on unnormalised state-mass vectors split by observation, and
the MDP solver is textbook value iteration over dictionaries.
"""

from __future__ import annotations

import random
from functools import lru_cache

from poptas.pomdp import Pomdp, build


def coin():
    # s0 -go-> {s1: .7, s2: .3}; s1 and s2 look alike; a wins from s1, b wins from s2
    return build(
        states=["s0", "s1", "s2", "goal", "sink"], initial=0,
        actions=["go", "a", "b"], observations=["init", "mid", "goal", "sink"],
        obs=[0, 1, 1, 2, 3],
        trans={
            (0, 0): [(1, 0.7), (2, 0.3)],
            (1, 1): [(3, 1.0)], (1, 2): [(4, 1.0)],
            (2, 1): [(4, 1.0)], (2, 2): [(3, 1.0)],
            (3, 0): [(3, 1.0)], (4, 0): [(4, 1.0)],
        },
        rewards={(0, 0): 1.0, (1, 1): 2.0, (2, 1): 4.0},
    )


def random_layered_pomdp(rng: random.Random, n_states: int = 8, n_actions: int = 3,
                         n_obs: int = 3, with_sink: bool = True, rewards: bool = False) -> Pomdp:
    """Acyclic POMDP: initial state, middle layers, absorbing target (and sink).

    Observation 0 belongs to the initial state only, the last observation to
    the target; the middle observations are shared by the remaining states.
    Every action is enabled everywhere.
    """
    n_states = max(n_states, 4 if with_sink else 3)
    target = n_states - 1
    sink = n_states - 2 if with_sink else None
    inner = [s for s in range(1, n_states) if s not in (target, sink)]
    n_layers = rng.randint(1, min(4, len(inner)))
    layer = {0: 0}
    for s in inner:
        layer[s] = rng.randint(1, n_layers)
    mids = list(range(1, n_obs - 1)) or [1]
    obs = [0] * n_states
    for s in inner:
        obs[s] = rng.choice(mids)
    if sink is not None:
        obs[sink] = rng.choice(mids)
    obs[target] = n_obs - 1
    trans = {}
    rew = {}
    for s in range(n_states):
        for a in range(n_actions):
            if s in (target, sink):
                trans[(s, a)] = [(s, 1.0)]
                continue
            later = [t for t in inner if layer[t] > layer[s]]
            support = rng.sample(later, k=min(len(later), rng.randint(0, 2))) + [target]
            if sink is not None and rng.random() < 0.7:
                support.append(sink)
            weights = [rng.random() + 0.05 for _ in support]
            total = sum(weights)
            trans[(s, a)] = [(t, w / total) for t, w in zip(support, weights)]
            if rewards:
                rew[(s, a)] = round(rng.uniform(0.0, 3.0), 3)
    model = build(
        states=[f"s{i}" for i in range(n_states)], initial=0,
        actions=[f"a{i}" for i in range(n_actions)],
        observations=[f"o{i}" for i in range(n_obs)], obs=obs, trans=trans, rewards=rew,
    )
    return model


def brute_force_optimum(model: Pomdp, target_obs: set[int], kind: str, direction: str,
                        horizon: int = 10) -> float:
    """Optimum over deterministic observation-based strategies up to ``horizon`` steps.

    Recurses over observation histories; the state of the recursion is the
    unnormalised mass vector of the history, so no belief normalisation or
    grid is involved.  Mass that has not reached the target at the horizon
    contributes 0 (only valid when every path is absorbed before then).
    """
    opt = max if direction == "max" else min
    n = len(model.states)

    @lru_cache(maxsize=None)
    def value(mass: tuple[float, ...], depth: int) -> float:
        support = [s for s in range(n) if mass[s] > 0.0]
        o = model.obs[support[0]]
        if o in target_obs:
            return sum(mass) if kind == "prob" else 0.0
        if depth == horizon:
            return 0.0
        actions = model.enabled[support[0]]
        if not actions:
            return 0.0
        best = []
        for a in actions:
            total = 0.0
            nxt: dict[int, list[float]] = {}
            for s in support:
                if kind == "reward":
                    total += mass[s] * model.rewards.get((s, a), 0.0)
                for t, p in model.trans[(s, a)]:
                    vec = nxt.setdefault(model.obs[t], [0.0] * n)
                    vec[t] += mass[s] * p
            for vec in nxt.values():
                key = tuple(round(x, 15) for x in vec)
                total += value(key, depth + 1)
            best.append(total)
        return opt(best)

    start = [0.0] * n
    start[model.initial] = 1.0
    return value(tuple(start), 0)


def random_mdp(rng: random.Random, n_states: int = 6, n_actions: int = 3,
               reward: bool = False) -> Pomdp:
    """Fully observable model (one observation per state), cycles allowed.

    For reward models every action moves to the target with probability at
    least 0.2, so the target is reached almost surely under any strategy.
    """
    target = n_states - 1
    trans, rew = {}, {}
    for s in range(n_states):
        acts = range(n_actions) if s != target else [0]
        for a in acts:
            if s == target:
                trans[(s, a)] = [(s, 1.0)]
                continue
            succ = rng.sample(range(n_states), k=rng.randint(1, 3))
            w = [rng.random() + 0.05 for _ in succ]
            tot = sum(w)
            dist = {t: x / tot for t, x in zip(succ, w)}
            if reward:
                dist = {t: 0.8 * p for t, p in dist.items()}
                dist[target] = dist.get(target, 0.0) + 0.2
                rew[(s, a)] = round(rng.uniform(0.0, 2.0), 3)
            trans[(s, a)] = sorted(dist.items())
    # the initial state needs its own observation; every state has one here
    return build(
        states=[f"s{i}" for i in range(n_states)], initial=0,
        actions=[f"a{i}" for i in range(n_actions)],
        observations=[f"o{i}" for i in range(n_states)], obs=list(range(n_states)),
        trans=trans, rewards=rew,
    )


def mdp_value_iteration(model: Pomdp, targets: set[int], kind: str, direction: str,
                        eps: float = 1e-13, max_iters: int = 200_000) -> list[float]:
    """Classical value iteration on the underlying MDP (Gauss-Seidel free, plain Jacobi)."""
    opt = max if direction == "max" else min
    n = len(model.states)
    v = [0.0] * n
    for _ in range(max_iters):
        new = []
        for s in range(n):
            if s in targets:
                new.append(1.0 if kind == "prob" else 0.0)
                continue
            acts = [a for (t, a) in model.trans if t == s]
            if not acts:
                new.append(0.0)
                continue
            qs = []
            for a in acts:
                q = model.rewards.get((s, a), 0.0) if kind == "reward" else 0.0
                q += sum(p * v[t] for t, p in model.trans[(s, a)])
                qs.append(q)
            new.append(opt(qs))
        diff = max(abs(x - y) for x, y in zip(new, v))
        v = new
        if diff <= eps:
            break
    return v
