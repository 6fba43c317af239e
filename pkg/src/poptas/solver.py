"""Grid-based approximate value iteration over the belief MDP.

Both engines work on a per-observation-class Lovejoy grid.  Everything that
does not depend on the current value estimate (observation probabilities,
successor beliefs and their triangulations) is computed once up front and
stored as one sparse matrix per action, so each sweep is a handful of
sparse matrix-vector products.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
import scipy.sparse as sp

from . import grid as gridmod
from .errors import CapacityError, DivergingValueError, ModelError
from .pomdp import PRUNE_TOL, Belief, Pomdp, TargetSpec, prob1_all

log = logging.getLogger(__name__)

Kind = Literal["prob", "reward"]
Direction = Literal["min", "max"]


@dataclass(frozen=True)
class ObjectiveSpec:
    """Reachability probability or expected reward until ``target``.

    ``avoid`` lists observations whose beliefs are absorbing with value 0
    (used for until-formulas).  ``reach_certain`` records the outcome of the
    qualitative prerequisite for reward objectives (None = not yet checked).
    """

    kind: Kind
    direction: Direction
    target: TargetSpec
    avoid: frozenset[int] = frozenset()
    reach_certain: bool | None = None

    def __post_init__(self):
        if self.kind not in ("prob", "reward"):
            raise ModelError(f"unknown objective kind {self.kind!r}")
        if self.direction not in ("min", "max"):
            raise ModelError(f"unknown direction {self.direction!r}")

    @property
    def pinned(self) -> float:
        return 1.0 if self.kind == "prob" else 0.0

    def terminal_value(self, obs_class: int) -> float | None:
        if obs_class in self.target.target_observations:
            return self.pinned
        if obs_class in self.avoid:
            return 0.0
        return None


def bound_side(obj: ObjectiveSpec) -> Literal["lower", "upper"]:
    """Which side of the optimum the grid value lies on."""
    return "upper" if obj.direction == "max" else "lower"


def check_prerequisite(model: Pomdp, obj: ObjectiveSpec) -> ObjectiveSpec:
    """Gate expected-reward objectives on almost-sure reachability of the target.

    Checked on the underlying fully observable MDP, which is stronger than
    needed for observation-based strategies and hence conservative.
    """
    if obj.kind != "reward":
        return obj
    targets = {s for s, o in enumerate(model.obs) if o in obj.target.target_observations}
    _, witness = prob1_all(model, targets)
    if witness is not None:
        raise DivergingValueError(
            f"target is not reached with probability 1 under every strategy; from state "
            f"{model.states[witness]} it can be avoided forever, so expected reward is infinite",
            witness=witness,
        )
    return replace(obj, reach_certain=True)


@dataclass
class ClassGrid:
    obs_class: int
    states: tuple[int, ...]
    counts: np.ndarray  # (K, N) count vectors, lexicographic
    offset: int  # position of the first point in the global value vector

    @property
    def size(self) -> int:
        return len(self.counts)


@dataclass
class _Setup:
    """Value-independent data shared by both engines."""

    model: Pomdp
    obj: ObjectiveSpec
    resolution: int
    grids: dict[int, ClassGrid]
    num_points: int
    enabled: np.ndarray  # (G, A) bool
    reward: np.ndarray  # (G, A) immediate reward (0 for probability objectives)
    const: np.ndarray  # (G, A) pinned-successor contribution
    trans: list[sp.csr_matrix]  # per action, (G, G): Pr[o|a,g] * lambda_j
    # dual engine only
    succ_weights: sp.csr_matrix | None = None  # (B, G) corner weights of successor beliefs
    succ_hit: list[sp.csr_matrix] | None = None  # per action, (G, B): Pr[o|a,g]
    succ_class: np.ndarray | None = None  # (B,) observation class of each successor


@dataclass
class ValueTable:
    """Converged (or budget-limited) grid values for one resolution."""

    model: Pomdp = field(repr=False)
    objective: ObjectiveSpec
    resolution: int
    engine: str
    grids: dict[int, ClassGrid] = field(repr=False)
    values: np.ndarray = field(repr=False)  # per grid point
    q_values: np.ndarray | None = field(default=None, repr=False)  # (G, A), dual engine
    iterations: int = 0
    residual: float = float("inf")
    converged: bool = False
    initial_value: float = float("nan")

    @property
    def num_points(self) -> int:
        return len(self.values)

    def class_values(self, obs_class: int) -> dict[tuple[int, ...], float]:
        g = self.grids[obs_class]
        vals = self.values[g.offset:g.offset + g.size]
        return {tuple(int(c) for c in row): float(v) for row, v in zip(g.counts, vals)}

    def value(self, b: Belief) -> float:
        """Approximate value of an arbitrary belief."""
        fixed = self.objective.terminal_value(b.obs_class)
        if fixed is not None:
            return fixed
        g = self.grids.get(b.obs_class)
        if g is None:
            raise KeyError(f"observation class {b.obs_class} has no grid")
        corners, lam = gridmod.triangulate_batch(b.dense(self.model), self.resolution)
        idx = g.offset + gridmod.rank(corners[0], self.resolution)
        if self.q_values is None:
            return float(lam[0] @ self.values[idx])
        enabled = list(self.model.class_enabled[b.obs_class])
        if not enabled:
            return 0.0
        q = lam[0] @ self.q_values[np.ix_(idx, enabled)]
        return float(q.max() if self.objective.direction == "max" else q.min())

    def to_document(self) -> dict:
        """Value-table export: observation -> list of {counts, value}."""
        out = {}
        for o in sorted(self.grids):
            g = self.grids[o]
            vals = self.values[g.offset:g.offset + g.size]
            out[self.model.observations[o]] = {
                "states": [self.model.states[s] for s in g.states],
                "points": [{"counts": [int(c) for c in row], "value": float(v)}
                           for row, v in zip(g.counts, vals)],
            }
        return {
            "resolution": self.resolution,
            "engine": self.engine,
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "classes": out,
        }


def _reachable_classes(model: Pomdp, obj: ObjectiveSpec) -> list[int]:
    """Observation classes reachable from the initial state, stopping at terminal ones.

    Closed over whole classes: grid beliefs put mass on every member of a
    class, so all members' successors need grids too.
    """
    seen = {model.initial}
    stack = [model.initial]
    classes = set()
    while stack:
        s = stack.pop()
        o = model.obs[s]
        if obj.terminal_value(o) is not None:
            continue
        if o not in classes:
            classes.add(o)
            for t in model.classes[o]:
                if t not in seen:
                    seen.add(t)
                    stack.append(t)
        for a in model.enabled[s]:
            for t, p in model.trans[(s, a)]:
                if p > 0.0 and t not in seen:
                    seen.add(t)
                    stack.append(t)
    return sorted(classes)


def _prepare(model: Pomdp, obj: ObjectiveSpec, resolution: int, dual: bool,
             grid_limit: int) -> _Setup:
    if resolution < 1:
        raise ModelError("resolution must be >= 1")
    classes = _reachable_classes(model, obj)
    grids: dict[int, ClassGrid] = {}
    total = 0
    for o in classes:
        members = model.classes[o]
        spec = gridmod.GridSpec(len(members), resolution)
        total += gridmod.grid_count(spec)
        if total > grid_limit:
            raise CapacityError(f"grid at M={resolution} exceeds {grid_limit} points")
        grids[o] = ClassGrid(o, members, gridmod.enumerate_grid(spec, grid_limit), 0)
    offset = 0
    for o in classes:
        grids[o].offset = offset
        offset += grids[o].size
    n_pts, n_act = offset, len(model.actions)

    enabled = np.zeros((n_pts, n_act), dtype=bool)
    reward = np.zeros((n_pts, n_act))
    const = np.zeros((n_pts, n_act))
    tri = [([], [], []) for _ in range(n_act)]
    hit = [([], [], []) for _ in range(n_act)]
    w_rows, w_cols, w_vals, succ_cls = [], [], [], []
    n_succ = 0
    tmats = model.transition_matrices
    pos = model.class_position

    for o in classes:
        g = grids[o]
        rows = np.arange(g.offset, g.offset + g.size)
        beliefs = g.counts / resolution
        members = list(g.states)
        for a in model.class_enabled[o]:
            enabled[rows, a] = True
            if obj.kind == "reward":
                reward[rows, a] = beliefs @ model.reward_matrix[members, a]
            sub = tmats[a][members]
            cols = np.unique(sub.indices)
            mass = beliefs @ sub[:, cols].toarray()
            col_obs = np.asarray(model.obs)[cols]
            for o2 in np.unique(col_obs):
                sel = col_obs == o2
                part = mass[:, sel]
                p_o = part.sum(axis=1)
                live = p_o > 0.0
                if not live.any():
                    continue
                fixed = obj.terminal_value(int(o2))
                if fixed is not None:
                    const[rows[live], a] += p_o[live] * fixed
                    continue
                part = part[live] / p_o[live, None]
                part[part < PRUNE_TOL] = 0.0
                part /= part.sum(axis=1, keepdims=True)
                g2 = grids[int(o2)]
                full = np.zeros((part.shape[0], len(g2.states)))
                full[:, pos[cols[sel]]] = part
                corners, lam = gridmod.triangulate_batch(full, resolution)
                n_live, dim = lam.shape
                target_idx = g2.offset + gridmod.rank(corners.reshape(-1, dim), resolution)
                src = np.repeat(rows[live], dim)
                weight = (lam * p_o[live, None]).ravel()
                nz = weight > 0.0
                tri[a][0].append(src[nz])
                tri[a][1].append(target_idx[nz])
                tri[a][2].append(weight[nz])
                if dual:
                    succ_ids = np.arange(n_succ, n_succ + n_live)
                    n_succ += n_live
                    hit[a][0].append(rows[live])
                    hit[a][1].append(succ_ids)
                    hit[a][2].append(p_o[live])
                    lam_flat = lam.ravel()
                    keep = lam_flat > 0.0
                    w_rows.append(np.repeat(succ_ids, dim)[keep])
                    w_cols.append(target_idx[keep])
                    w_vals.append(lam_flat[keep])
                    succ_cls.append(np.full(n_live, int(o2)))

    def assemble(parts, shape):
        if not parts[0]:
            return sp.csr_matrix(shape)
        return sp.csr_matrix(
            (np.concatenate(parts[2]), (np.concatenate(parts[0]), np.concatenate(parts[1]))),
            shape=shape,
        )

    setup = _Setup(
        model=model, obj=obj, resolution=resolution, grids=grids, num_points=n_pts,
        enabled=enabled, reward=reward, const=const,
        trans=[assemble(t, (n_pts, n_pts)) for t in tri],
    )
    if dual:
        setup.succ_hit = [assemble(h, (n_pts, n_succ)) for h in hit]
        setup.succ_weights = assemble((w_rows, w_cols, w_vals), (n_succ, n_pts))
        setup.succ_class = np.concatenate(succ_cls) if succ_cls else np.zeros(0, dtype=np.int64)
    return setup


def _optimise(q: np.ndarray, enabled: np.ndarray, direction: str) -> np.ndarray:
    if direction == "max":
        out = np.where(enabled, q, -np.inf).max(axis=1)
    else:
        out = np.where(enabled, q, np.inf).min(axis=1)
    # classes without enabled actions are deadlocks: they never reach the target
    return np.where(enabled.any(axis=1), out, 0.0)


def _initial_index(setup: _Setup) -> int | None:
    model = setup.model
    o = model.obs[model.initial]
    if o not in setup.grids:
        return None
    g = setup.grids[o]
    counts = np.zeros(len(g.states), dtype=np.int64)
    counts[model.class_position[model.initial]] = setup.resolution
    return int(g.offset + gridmod.rank(counts, setup.resolution)[0])


def _default_max_iters(model: Pomdp, resolution: int) -> int:
    return max(10 * resolution * len(model.states), 1000)


def value_iteration(model: Pomdp, obj: ObjectiveSpec, resolution: int, eps: float = 1e-6,
                    max_iters: int | None = None,
                    grid_limit: int = gridmod.DEFAULT_GRID_LIMIT) -> ValueTable:
    """Approximate value iteration on the resolution-M grid (interpolate successors).

    Sweeps are synchronous; iteration stops once the sup-norm change is at most
    ``eps`` or after ``max_iters`` sweeps (the table is then flagged as not
    converged).
    """
    obj = check_prerequisite(model, obj)
    if max_iters is None:
        max_iters = _default_max_iters(model, resolution)
    setup = _prepare(model, obj, resolution, dual=False, grid_limit=grid_limit)
    v = np.zeros(setup.num_points)
    base = setup.reward + setup.const
    residual, it, converged = float("inf"), 0, False
    while it < max_iters:
        q = base + np.column_stack([t @ v for t in setup.trans]) if setup.trans else base
        v_new = _optimise(q, setup.enabled, obj.direction)
        residual = float(np.max(np.abs(v_new - v))) if len(v) else 0.0
        v = v_new
        it += 1
        if residual <= eps:
            converged = True
            break
    if not converged:
        log.warning("value iteration at M=%d stopped after %d sweeps (residual %.3g)",
                    resolution, it, residual)
    table = ValueTable(model, obj, resolution, "j1", setup.grids, v,
                       iterations=it, residual=residual, converged=converged)
    table.initial_value = _initial_value(table, setup)
    return table


def value_iteration_dual(model: Pomdp, obj: ObjectiveSpec, resolution: int, eps: float = 1e-6,
                         max_iters: int | None = None,
                         grid_limit: int = gridmod.DEFAULT_GRID_LIMIT) -> ValueTable:
    """Alternative engine: interpolate the current belief instead of the successor.

    Values live on the finite set of successor beliefs ``g^{a,o}``; the value of
    a belief ``b`` is ``opt_a sum_j gamma_j(b) (R(g_j,a) + sum_o Pr[o|a,g_j] V(g_j^{a,o}))``.
    """
    obj = check_prerequisite(model, obj)
    if max_iters is None:
        max_iters = _default_max_iters(model, resolution)
    setup = _prepare(model, obj, resolution, dual=True, grid_limit=grid_limit)
    n_succ = setup.succ_weights.shape[0]
    base = setup.reward + setup.const
    succ_enabled = model_class_enabled_mask(model, setup.succ_class)
    w = setup.succ_weights
    v = np.zeros(n_succ)
    residual, it, converged = float("inf"), 0, False
    q_grid = base.copy()
    while it < max_iters:
        q_grid = base + np.column_stack([h @ v for h in setup.succ_hit]) if setup.succ_hit else base
        v_new = _optimise(w @ q_grid, succ_enabled, obj.direction)
        residual = float(np.max(np.abs(v_new - v))) if n_succ else 0.0
        v = v_new
        it += 1
        if residual <= eps:
            converged = True
            break
    q_grid = base + np.column_stack([h @ v for h in setup.succ_hit]) if setup.succ_hit else base
    grid_values = _optimise(q_grid, setup.enabled, obj.direction)
    table = ValueTable(model, obj, resolution, "j2", setup.grids, grid_values, q_values=q_grid,
                       iterations=it, residual=residual, converged=converged)
    table.initial_value = _initial_value(table, setup)
    return table


def model_class_enabled_mask(model: Pomdp, classes: np.ndarray) -> np.ndarray:
    mask = np.zeros((len(classes), len(model.actions)), dtype=bool)
    for o in np.unique(classes):
        sel = classes == o
        for a in model.class_enabled[int(o)]:
            mask[sel, a] = True
    return mask


def _initial_value(table: ValueTable, setup: _Setup) -> float:
    model = setup.model
    fixed = table.objective.terminal_value(model.obs[model.initial])
    if fixed is not None:
        return fixed
    return float(table.values[_initial_index(setup)])


ENGINES = {"j1": value_iteration, "j2": value_iteration_dual}


def solve(model: Pomdp, obj: ObjectiveSpec, resolution: int, engine: str = "j1", **kw) -> ValueTable:
    try:
        fn = ENGINES[engine]
    except KeyError:
        raise ModelError(f"unknown engine {engine!r}; choose from {sorted(ENGINES)}") from None
    return fn(model, obj, resolution, **kw)
