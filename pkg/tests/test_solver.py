import random

import numpy as np
import pytest

from oracles import brute_force_optimum, coin, mdp_value_iteration, random_layered_pomdp, random_mdp
from poptas.errors import CapacityError, DivergingValueError
from poptas.grid import GridSpec, grid_count
from poptas.pomdp import Belief, TargetSpec, build
from poptas.solver import ObjectiveSpec, bound_side, check_prerequisite, solve

GOAL = TargetSpec(frozenset({2}))


def test_bound_side():
    assert bound_side(ObjectiveSpec("prob", "max", GOAL)) == "upper"
    assert bound_side(ObjectiveSpec("reward", "min", GOAL)) == "lower"


@pytest.mark.parametrize("engine", ["j1", "j2"])
def test_coin_exact_at_fine_grid(engine):
    m = coin()
    # belief (0.7, 0.3) is a grid point at M = 10
    assert solve(m, ObjectiveSpec("prob", "max", GOAL), 10, engine=engine).initial_value == pytest.approx(0.7)
    assert solve(m, ObjectiveSpec("prob", "min", GOAL), 10, engine=engine).initial_value == pytest.approx(0.3)


def test_coarse_grid_overestimates_max():
    # at M = 1 only the vertices exist, and each vertex can reach the goal surely
    t = solve(coin(), ObjectiveSpec("prob", "max", GOAL), 1)
    assert t.initial_value == pytest.approx(1.0)
    assert t.converged


def test_dual_engine_tighter_at_vertices():
    # interpolating q-values per action keeps the action commitment: max(0.7, 0.3)
    t = solve(coin(), ObjectiveSpec("prob", "max", GOAL), 1, engine="j2")
    assert t.initial_value == pytest.approx(0.7)


def test_reward_gate():
    m = coin()
    obj = ObjectiveSpec("reward", "min", GOAL)
    with pytest.raises(DivergingValueError) as exc:
        check_prerequisite(m, obj)
    assert exc.value.witness is not None
    with pytest.raises(DivergingValueError):
        solve(m, obj, 2)


def test_reward_gate_passes():
    m = build(["s0", "s1", "g"], 0, ["a"], ["o0", "o1", "g"], [0, 1, 2],
              {(0, 0): [(1, 0.5), (2, 0.5)], (1, 0): [(0, 0.5), (2, 0.5)], (2, 0): [(2, 1.0)]},
              rewards={(0, 0): 1.0, (1, 0): 1.0})
    obj = check_prerequisite(m, ObjectiveSpec("reward", "min", GOAL))
    assert obj.reach_certain is True
    # expected number of steps of a geometric(1/2) variable
    assert solve(m, obj, 2, eps=1e-10).initial_value == pytest.approx(2.0, abs=1e-8)


def test_value_table_contents():
    m = coin()
    t = solve(m, ObjectiveSpec("prob", "max", GOAL), 4)
    vals = t.class_values(1)
    assert len(vals) == grid_count(GridSpec(2, 4))
    # value at a stored grid point reads back exactly
    b = Belief.from_mapping(m, {1: 0.25, 2: 0.75})
    assert t.value(b) == pytest.approx(vals[(1, 3)])
    assert t.value(Belief.point(m, 3)) == 1.0
    doc = t.to_document()
    assert doc["resolution"] == 4 and "mid" in doc["classes"]
    assert len(doc["classes"]["mid"]["points"]) == 5


def test_iteration_budget():
    m = build(["s0", "s1", "g"], 0, ["a"], ["o0", "o1", "g"], [0, 1, 2],
              {(0, 0): [(1, 1.0)], (1, 0): [(1, 0.99), (2, 0.01)], (2, 0): [(2, 1.0)]})
    t = solve(m, ObjectiveSpec("prob", "max", GOAL), 2, max_iters=5)
    assert not t.converged and t.iterations == 5
    t = solve(m, ObjectiveSpec("prob", "max", GOAL), 2)
    assert t.converged and t.initial_value == pytest.approx(1.0, abs=1e-3)


def test_deadlock_has_value_zero():
    m = build(["s0", "dead", "g"], 0, ["a"], ["o0", "d", "g"], [0, 1, 2],
              {(0, 0): [(1, 0.4), (2, 0.6)], (2, 0): [(2, 1.0)]})
    assert solve(m, ObjectiveSpec("prob", "max", GOAL), 2).initial_value == pytest.approx(0.6)


def test_grid_limit():
    with pytest.raises(CapacityError):
        solve(coin(), ObjectiveSpec("prob", "max", GOAL), 50, grid_limit=10)


def test_avoid_set_is_absorbing():
    m = coin()
    obj = ObjectiveSpec("prob", "max", GOAL, avoid=frozenset({1}))
    assert solve(m, obj, 4).initial_value == 0.0


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("engine", ["j1", "j2"])
def test_fully_observable_matches_mdp(seed, engine):
    rng = random.Random(seed)
    reward = seed % 3 == 0
    m = random_mdp(rng, n_states=rng.randint(3, 7), reward=reward)
    kind = "reward" if reward else "prob"
    for direction in ("max", "min"):
        target = {len(m.states) - 1}
        ref = mdp_value_iteration(m, target, kind, direction)[0]
        obj = ObjectiveSpec(kind, direction, TargetSpec(frozenset(target)))
        for res in (1, 3):
            t = solve(m, obj, res, engine=engine, eps=1e-11, max_iters=100_000)
            assert t.initial_value == pytest.approx(ref, abs=1e-6)


def test_engines_agree_on_grid_points_for_mdps():
    rng = random.Random(99)
    m = random_mdp(rng, 5)
    obj = ObjectiveSpec("prob", "max", TargetSpec(frozenset({4})))
    a = solve(m, obj, 2, engine="j1", eps=1e-12, max_iters=100_000)
    b = solve(m, obj, 2, engine="j2", eps=1e-12, max_iters=100_000)
    for o in range(4):
        b_o = Belief.point(m, o)
        assert a.value(b_o) == pytest.approx(b.value(b_o), abs=1e-8)
    assert np.isfinite(a.values).all()


@pytest.mark.parametrize("seed", range(25))
def test_both_engines_bound_brute_force(seed):
    rng = random.Random(1000 + seed)
    m = random_layered_pomdp(rng, n_states=6, n_obs=rng.randint(3, 4))
    target = {len(m.observations) - 1}
    for direction in ("max", "min"):
        opt = brute_force_optimum(m, target, "prob", direction)
        obj = ObjectiveSpec("prob", direction, TargetSpec(frozenset(target)))
        for engine in ("j1", "j2"):
            v = solve(m, obj, 4, engine=engine).initial_value
            assert (v >= opt - 1e-9) if direction == "max" else (v <= opt + 1e-9)
