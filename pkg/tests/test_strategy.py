import json
import math
import random

import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from oracles import coin, mdp_value_iteration, random_layered_pomdp, random_mdp
from poptas.errors import CapacityError, DivergingValueError, StrategyBudgetError
from poptas.pomdp import TargetSpec, build
from poptas.solver import ObjectiveSpec, solve
from poptas.strategy import bounds, evaluate, refine, synthesize

GOAL = TargetSpec(frozenset({2}))


def test_coin_strategy():
    m = coin()
    strat = synthesize(solve(m, ObjectiveSpec("prob", "max", GOAL), 10))
    # initial, the mixed belief, goal and sink
    assert strat.size == 4
    assert strat.choose(0) == 0
    mid = strat.step(0, 1)
    assert m.actions[strat.choose(mid)] == "a"
    assert evaluate(strat) == pytest.approx(0.7)
    with pytest.raises(KeyError):
        strat.step(0, 3)


def test_coarse_table_still_gives_a_sound_strategy():
    # at M = 1 the table cannot tell a from b; the tie goes to the smaller index (a)
    rep = bounds(coin(), ObjectiveSpec("prob", "max", GOAL), 1)
    assert rep.upper == pytest.approx(1.0)
    assert rep.lower == pytest.approx(0.7)
    assert rep.lower <= rep.upper


def test_initial_belief_in_target():
    m = build(["g"], 0, ["a"], ["g"], [0], {(0, 0): [(0, 1.0)]})
    obj = ObjectiveSpec("prob", "max", TargetSpec(frozenset({0})))
    strat = synthesize(solve(m, obj, 2))
    assert strat.size == 1 and strat.choose(0) is None
    assert evaluate(strat) == 1.0


def test_node_budget():
    with pytest.raises(StrategyBudgetError):
        synthesize(solve(coin(), ObjectiveSpec("prob", "max", GOAL), 4), budget=2)


def test_reward_strategy_must_reach_target():
    # action "stay" is free and loops forever; a greedy min-reward strategy would diverge
    m = build(["s0", "s1", "g"], 0, ["go", "stay"], ["o0", "o1", "g"], [0, 1, 2],
              {(0, 0): [(1, 1.0)], (1, 0): [(2, 1.0)], (1, 1): [(1, 1.0)], (2, 0): [(2, 1.0)]},
              rewards={(1, 0): 1.0})
    obj = ObjectiveSpec("reward", "min", GOAL)
    with pytest.raises(DivergingValueError):
        bounds(m, obj, 2)


def test_strategy_document():
    m = coin()
    strat = synthesize(solve(m, ObjectiveSpec("prob", "max", GOAL), 10))
    doc = json.loads(strat.to_json())
    assert doc["initial"] == 0
    assert doc["nodes"][0]["action"] == "go"
    mid = doc["nodes"][doc["nodes"][0]["successors"]["mid"]]
    assert mid["belief"] == pytest.approx({"s1": 0.7, "s2": 0.3})
    assert mid["action"] == "a"


def test_synthesis_is_deterministic():
    rng = random.Random(5)
    m = random_layered_pomdp(rng, 8, n_obs=4)
    obj = ObjectiveSpec("prob", "max", TargetSpec(frozenset({3})))
    t = solve(m, obj, 4)
    assert synthesize(t).to_json() == synthesize(t).to_json()


def test_refine_stops_at_gap():
    # the optimum max(b1, b2) only bends at (1/2, 1/2), so M = 2 is already exact
    run = refine(coin(), ObjectiveSpec("prob", "max", GOAL), [1, 2, 10, 20], gap=1e-6)
    assert [r.resolution for r in run.history] == [1, 2]
    assert run.gap_met
    assert run.final.lower == pytest.approx(0.7) and run.final.upper == pytest.approx(0.7)


def test_refine_keeps_history_on_capacity():
    run = refine(coin(), ObjectiveSpec("prob", "max", GOAL), [1, 10_000], gap=1e-9, grid_limit=100)
    assert [r.resolution for r in run.history] == [1]
    assert isinstance(run.stopped_by, CapacityError)
    with pytest.raises(CapacityError):
        refine(coin(), ObjectiveSpec("prob", "max", GOAL), [10_000], grid_limit=100)


def test_report_dict_has_no_timings():
    rep = bounds(coin(), ObjectiveSpec("prob", "max", GOAL), 2)
    assert "seconds" not in json.dumps(rep.as_dict())
    assert rep.seconds >= 0.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), res=st.sampled_from([1, 2, 3, 5]))
@example(seed=47150, res=1)  # class member whose successor class is unreachable from the initial state
def test_strategy_chain_is_stochastic(seed, res):
    rng = random.Random(seed)
    m = random_layered_pomdp(rng, rng.randint(4, 8), n_obs=rng.randint(3, 4))
    obj = ObjectiveSpec("prob", rng.choice(["min", "max"]),
                        TargetSpec(frozenset({len(m.observations) - 1})))
    rep = bounds(m, obj, res)
    for node in rep.strategy.nodes:
        if node.action is not None:
            assert math.fsum(p for _, p, _ in node.edges) == pytest.approx(1.0, abs=1e-12)
    assert rep.lower <= rep.upper + 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_fully_observable_strategy_is_mdp_optimal(seed):
    rng = random.Random(seed)
    m = random_mdp(rng, n_states=6)
    target = {5}
    ref = mdp_value_iteration(m, target, "prob", "max")
    rep = bounds(m, ObjectiveSpec("prob", "max", TargetSpec(frozenset(target))), 2, eps=1e-12,
                 max_iters=100_000)
    for node in rep.strategy.nodes:
        if node.action is None:
            continue
        (s,) = node.belief.states
        q = sum(p * ref[t] for t, p in m.trans[(s, node.action)])
        assert q == pytest.approx(ref[s], abs=1e-8)
