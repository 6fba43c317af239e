"""Strategy synthesis from a value table and exact evaluation of the result.

The synthesized strategy is a finite-memory, observation-based strategy: its
memory is the belief itself, restricted to the beliefs actually reachable
from the initial one.  Evaluating it means solving the induced finite Markov
chain over those beliefs, which yields the bound opposite to the grid value.
"""

from __future__ import annotations

import json
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CapacityError, DivergingValueError, StrategyBudgetError
from .pomdp import DEDUP_TOL, Belief, Pomdp, belief_reward, initial_belief, successors
from .solver import ObjectiveSpec, ValueTable, bound_side, solve

log = logging.getLogger(__name__)

TIE_TOL = 1e-9
DEFAULT_NODE_BUDGET = 1_000_000
DIRECT_SOLVE_LIMIT = 2000


class _BeliefIndex:
    """Deduplicates beliefs with equal support up to an L-infinity tolerance."""

    def __init__(self, tol: float = DEDUP_TOL):
        self.tol = tol
        self._buckets: dict[tuple, list[tuple[Belief, int]]] = {}

    @staticmethod
    def _key(b: Belief) -> tuple:
        return (b.obs_class, b.states)

    def find(self, b: Belief) -> int | None:
        for other, idx in self._buckets.get(self._key(b), ()):
            if max(abs(x - y) for x, y in zip(b.probs, other.probs)) <= self.tol:
                return idx
        return None

    def add(self, b: Belief, idx: int) -> None:
        self._buckets.setdefault(self._key(b), []).append((b, idx))


@dataclass
class StrategyNode:
    belief: Belief
    action: int | None  # None for terminal (target/avoid) or deadlocked nodes
    reward: float = 0.0
    # (observation, probability, successor node)
    edges: list[tuple[int, float, int]] = field(default_factory=list)
    terminal: float | None = None


@dataclass
class BeliefStrategy:
    """Finite-memory strategy: node 0 is the initial belief."""

    model: Pomdp = field(repr=False)
    objective: ObjectiveSpec
    nodes: list[StrategyNode] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.nodes)

    def choose(self, node: int) -> int | None:
        return self.nodes[node].action

    def step(self, node: int, obs: int) -> int:
        for o, _, nxt in self.nodes[node].edges:
            if o == obs:
                return nxt
        raise KeyError(f"observation {obs} is impossible from node {node}")

    def to_document(self) -> dict:
        m = self.model
        nodes = []
        for i, n in enumerate(self.nodes):
            nodes.append({
                "id": i,
                "observation": m.observations[n.belief.obs_class],
                "belief": {m.states[s]: p for s, p in zip(n.belief.states, n.belief.probs)},
                "action": m.actions[n.action] if n.action is not None else None,
                "successors": {m.observations[o]: nxt for o, _, nxt in n.edges},
            })
        return {"initial": 0, "nodes": nodes}

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=1)


@dataclass
class BoundsReport:
    """Lower/upper bounds on the optimum at one resolution."""

    objective: ObjectiveSpec
    resolution: int
    lower: float
    upper: float
    grid_value: float
    strategy_value: float
    grid_points: int
    strategy_nodes: int
    iterations: int
    converged: bool
    build_seconds: float
    solve_seconds: float
    strategy: BeliefStrategy | None = field(default=None, repr=False)
    table: ValueTable | None = field(default=None, repr=False)

    @property
    def gap(self) -> float:
        return self.upper - self.lower

    @property
    def seconds(self) -> float:
        return self.build_seconds + self.solve_seconds

    def as_dict(self) -> dict:
        """Machine-readable summary (no timings, so identical runs give identical output)."""
        return {
            "resolution": self.resolution,
            "lower": self.lower,
            "upper": self.upper,
            "gap": self.gap,
            "grid_points": self.grid_points,
            "strategy_nodes": self.strategy_nodes,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def _continuation(table: ValueTable, obj: ObjectiveSpec, b: Belief) -> float:
    fixed = obj.terminal_value(b.obs_class)
    return fixed if fixed is not None else table.value(b)


def synthesize(table: ValueTable, budget: int = DEFAULT_NODE_BUDGET,
               dedup_tol: float = DEDUP_TOL) -> BeliefStrategy:
    """Greedy strategy w.r.t. the table, explored breadth-first from the initial belief.

    Ties within 1e-9 go to the smallest action index.  Raises
    StrategyBudgetError once more than ``budget`` distinct beliefs are found.
    """
    model, obj = table.model, table.objective
    maximise = obj.direction == "max"
    index = _BeliefIndex(dedup_tol)
    root = initial_belief(model)
    nodes = [StrategyNode(root, None)]
    index.add(root, 0)
    queue = deque([0])
    while queue:
        i = queue.popleft()
        node = nodes[i]
        b = node.belief
        fixed = obj.terminal_value(b.obs_class)
        if fixed is not None:
            node.terminal = fixed
            continue
        enabled = model.class_enabled[b.obs_class]
        if not enabled:
            continue
        best_a, best_q, best_succ = None, 0.0, None
        for a in enabled:
            succ = successors(model, b, a)
            q = belief_reward(model, b, a) if obj.kind == "reward" else 0.0
            q += math.fsum(p * _continuation(table, obj, b2) for _, p, b2 in succ)
            if best_a is None or (q > best_q + TIE_TOL if maximise else q < best_q - TIE_TOL):
                best_a, best_q, best_succ = a, q, succ
        node.action = best_a
        if obj.kind == "reward":
            node.reward = belief_reward(model, b, best_a)
        for o, p, b2 in best_succ:
            j = index.find(b2)
            if j is None:
                j = len(nodes)
                if j >= budget:
                    raise StrategyBudgetError(
                        f"strategy exploration exceeded {budget} belief nodes"
                    )
                nodes.append(StrategyNode(b2, None))
                index.add(b2, j)
                queue.append(j)
            node.edges.append((o, p, j))
    return BeliefStrategy(model, obj, nodes)


def _can_reach_target(strategy: BeliefStrategy) -> np.ndarray:
    n = strategy.size
    pred: list[list[int]] = [[] for _ in range(n)]
    for i, node in enumerate(strategy.nodes):
        for _, p, j in node.edges:
            if p > 0.0:
                pred[j].append(i)
    hit = np.zeros(n, dtype=bool)
    goal = strategy.objective.target.target_observations
    stack = [i for i, nd in enumerate(strategy.nodes) if nd.belief.obs_class in goal]
    for i in stack:
        hit[i] = True
    while stack:
        j = stack.pop()
        for i in pred[j]:
            if not hit[i]:
                hit[i] = True
                stack.append(i)
    return hit


def _solve_linear(a: sp.csr_matrix, rhs: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    n = a.shape[0]
    if n <= DIRECT_SOLVE_LIMIT:
        return np.atleast_1d(spla.spsolve(a.tocsc(), rhs))
    # Gauss-Seidel on (I - P) x = rhs: x <- L^{-1} (rhs - U x)
    lower = sp.tril(a, format="csr")
    upper = sp.triu(a, k=1, format="csr")
    x = np.zeros(n)
    for _ in range(100_000):
        x_new = spla.spsolve_triangular(lower, rhs - upper @ x, lower=True)
        if np.max(np.abs(x_new - x)) <= tol * max(1.0, np.max(np.abs(x_new))):
            return x_new
        x = x_new
    log.warning("Gauss-Seidel did not converge on %d unknowns", n)
    return x


def evaluate(strategy: BeliefStrategy) -> float:
    """Exact value of the strategy from the initial belief."""
    obj = strategy.objective
    nodes = strategy.nodes
    reach = _can_reach_target(strategy)
    if obj.kind == "reward":
        for i, nd in enumerate(nodes):
            if not reach[i]:
                raise DivergingValueError(
                    f"under the synthesized strategy the target is unreachable from belief "
                    f"node {i}; its expected reward is infinite",
                    witness=i,
                )
    if obj.terminal_value(nodes[0].belief.obs_class) is not None:
        return float(obj.terminal_value(nodes[0].belief.obs_class))
    # unknowns: non-terminal nodes that can reach the target
    unknown = [i for i, nd in enumerate(nodes) if nd.terminal is None and reach[i]]
    if not reach[0]:
        return 0.0
    pos = {i: k for k, i in enumerate(unknown)}
    rows, cols, vals = [], [], []
    rhs = np.zeros(len(unknown))
    for k, i in enumerate(unknown):
        nd = nodes[i]
        rows.append(k)
        cols.append(k)
        vals.append(1.0)
        rhs[k] += nd.reward
        for _, p, j in nd.edges:
            tj = nodes[j].terminal
            if tj is not None:
                rhs[k] += p * tj
            elif j in pos:
                rows.append(k)
                cols.append(pos[j])
                vals.append(-p)
    a = sp.csr_matrix((vals, (rows, cols)), shape=(len(unknown), len(unknown)))
    x = _solve_linear(a, rhs)
    return float(x[pos[0]])


def bounds(model: Pomdp, obj: ObjectiveSpec, resolution: int, engine: str = "j1",
           eps: float = 1e-6, max_iters: int | None = None, budget: int = DEFAULT_NODE_BUDGET,
           dedup_tol: float = DEDUP_TOL, **kw) -> BoundsReport:
    """Grid value, synthesized strategy and its exact value at one resolution."""
    t0 = time.perf_counter()
    table = solve(model, obj, resolution, engine=engine, eps=eps, max_iters=max_iters, **kw)
    t1 = time.perf_counter()
    strat = synthesize(table, budget=budget, dedup_tol=dedup_tol)
    s_val = evaluate(strat)
    t2 = time.perf_counter()
    g_val = table.initial_value
    if bound_side(obj) == "upper":
        lower, upper = s_val, g_val
    else:
        lower, upper = g_val, s_val
    if lower > upper + 1e-6:
        log.warning("bounds crossed at M=%d: lower %.9g > upper %.9g", resolution, lower, upper)
    return BoundsReport(
        objective=table.objective, resolution=resolution, lower=lower, upper=upper, grid_value=g_val, strategy_value=s_val,
        grid_points=table.num_points, strategy_nodes=strat.size, iterations=table.iterations,
        converged=table.converged, build_seconds=t1 - t0, solve_seconds=t2 - t1,
        strategy=strat, table=table,
    )


@dataclass
class Refinement:
    """Per-resolution history of a refinement run."""

    history: list[BoundsReport]
    gap_target: float | None
    stopped_by: CapacityError | None = None

    @property
    def final(self) -> BoundsReport:
        return self.history[-1]

    @property
    def gap_met(self) -> bool:
        return self.gap_target is not None and self.final.gap <= self.gap_target


def refine(model: Pomdp, obj: ObjectiveSpec, resolutions, gap: float | None = None,
           engine: str = "j1", **kw) -> Refinement:
    """Run ``bounds`` for increasing resolutions until the gap is at most ``gap``.

    If a later resolution runs out of capacity, the history so far is kept
    and the error is recorded in ``stopped_by``; failing at the first
    resolution re-raises.
    """
    resolutions = list(resolutions)
    if not resolutions:
        raise ValueError("resolution schedule is empty")
    run = Refinement([], gap)
    for m in resolutions:
        try:
            rep = bounds(model, obj, m, engine=engine, **kw)
        except CapacityError as exc:
            if not run.history:
                raise
            run.stopped_by = exc
            break
        run.history.append(rep)
        if gap is not None and rep.gap <= gap:
            break
    return run
