import pytest

from poptas.cli import load
from poptas.errors import CapacityError, ModelError
from poptas.pomdp import validate
from poptas.popta import (
    DELAY,
    STUTTER,
    TRUE,
    Branch,
    ClockBound,
    ClockConstraint,
    Edge,
    Popta,
    check_restrictions,
    digitalize,
)


def cc(*bounds):
    return ClockConstraint.of(ClockBound(*b) for b in bounds)


def single(inv=2):
    return Popta(locations=("l",), initial="l", clocks=("x",), actions=(), edges=(),
                 invariants={"l": cc(("x", "<=", inv))})


def test_single_location_chain():
    d = digitalize(single(2))
    m = d.pomdp
    assert len(m.states) == 3
    assert [c["x"] for _, c in d.legend] == [0, 1, 2]
    assert m.trans[(0, 0)] == ((1, 1.0),) and m.trans[(1, 0)] == ((2, 1.0),)
    # x = 2 cannot delay: the state is dead and only stutters
    assert m.actions == (DELAY, STUTTER)
    assert m.enabled[2] == (1,)
    assert m.meta["dead_states"] == 1
    assert validate(m) == []


def test_clock_capping():
    # no invariant: clocks stop at k_x + 1 where k_x = 1 comes from the guard
    p = Popta(locations=("a", "b"), initial="a", clocks=("x",), actions=("go",),
              edges=(Edge("a", "go", cc(("x", ">=", 1)), (Branch(1.0, "b"),)),))
    d = digitalize(p)
    xs = sorted(c["x"] for loc, c in d.legend if loc == "a")
    assert xs == [0, 1, 2]
    assert d.clock_limits == {"x": 1}
    names = d.pomdp.observations
    assert "a|x=0" in names and "b|x=2" in names


def test_observation_classes_group_locations():
    p = Popta(locations=("s", "l1", "l2", "g"), initial="s", clocks=(), actions=("go", "win"),
              edges=(Edge("s", "go", TRUE, (Branch(0.5, "l1"), Branch(0.5, "l2"))),
                     Edge("l1", "win", TRUE, (Branch(1.0, "g"),)),
                     Edge("l2", "win", TRUE, (Branch(1.0, "s"),))),
              observation={"l1": "mid", "l2": "mid"})
    m = digitalize(p).pomdp
    mid = m.observations.index("mid")
    assert len(m.classes[mid]) == 2
    assert validate(m) == []


def test_reset_of_zero_clock_is_reported():
    p = Popta(locations=("a", "b"), initial="a", clocks=("x",), actions=("go",),
              edges=(Edge("a", "go", TRUE, (Branch(1.0, "b", frozenset({"x"})),)),),
              invariants={"a": cc(("x", "<=", 1))})
    report = check_restrictions(p)
    bad = [v for v in report.violations if v.kind == "reset-zero"]
    assert bad and bad[0].witness == ("a", {"x": 0}, "go", "x")
    assert not report.ok
    # still digitalizable; the violation is a warning
    assert digitalize(p).reset_violations


def test_fig1a_is_clean():
    model, _ = load("bundled:fig1a", {})
    report = check_restrictions(model)
    assert report.ok, str(report)


def test_observation_equal_invariants_differ():
    p = Popta(locations=("s", "l1", "l2"), initial="s", clocks=("x",), actions=("go",),
              edges=(Edge("s", "go", cc(("x", ">=", 1)), (Branch(0.5, "l1"), Branch(0.5, "l2"))),),
              invariants={"l1": cc(("x", "<=", 1)), "l2": cc(("x", "<=", 2))},
              observation={"l1": "o", "l2": "o"})
    kinds = [v.kind for v in check_restrictions(p, explore=False).violations]
    assert "observation" in kinds
    with pytest.raises(ModelError):
        digitalize(p)


def test_observation_equal_guards_differ():
    p = Popta(locations=("s", "l1", "l2", "g"), initial="s", clocks=("x",), actions=("go", "w"),
              edges=(Edge("s", "go", TRUE, (Branch(0.5, "l1"), Branch(0.5, "l2"))),
                     Edge("l1", "w", cc(("x", ">=", 1)), (Branch(1.0, "g"),)),
                     Edge("l2", "w", cc(("x", ">=", 2)), (Branch(1.0, "g"),))),
              observation={"l1": "o", "l2": "o"})
    v = [v for v in check_restrictions(p, explore=False).violations if v.kind == "observation"]
    assert v and v[0].witness == ("l1", "l2", "w")


def test_bad_distribution_reported():
    p = Popta(locations=("a",), initial="a", clocks=(), actions=("go",),
              edges=(Edge("a", "go", TRUE, (Branch(0.999, "a"),)),))
    assert [v.kind for v in check_restrictions(p).violations] == ["distribution"]


def test_overlapping_guards_rejected():
    p = Popta(locations=("a", "b"), initial="a", clocks=("x",), actions=("go",),
              edges=(Edge("a", "go", cc(("x", "<=", 1)), (Branch(1.0, "b"),)),
                     Edge("a", "go", cc(("x", ">=", 1)), (Branch(1.0, "a"),))),
              invariants={"a": cc(("x", "<=", 2))})
    with pytest.raises(ModelError, match="disjoint"):
        digitalize(p)


def test_disjoint_guards_allowed():
    p = Popta(locations=("a", "b"), initial="a", clocks=("x",), actions=("go",),
              edges=(Edge("a", "go", cc(("x", "<=", 0)), (Branch(1.0, "b"),)),
                     Edge("a", "go", cc(("x", ">=", 1)), (Branch(1.0, "a", frozenset({"x"})),))),
              invariants={"a": cc(("x", "<=", 2))})
    assert validate(digitalize(p).pomdp) == []


def test_entering_violated_invariant():
    p = Popta(locations=("a", "b"), initial="a", clocks=("x",), actions=("go",),
              edges=(Edge("a", "go", cc(("x", ">=", 2)), (Branch(1.0, "b"),)),),
              invariants={"b": cc(("x", "<=", 1))})
    with pytest.raises(ModelError, match="invariant"):
        digitalize(p)


def test_strict_clock_bound_rejected():
    with pytest.raises(ModelError):
        ClockBound("x", "<", 2)
    with pytest.raises(ModelError):
        ClockBound("x", "<=", -1)


def test_state_limit():
    with pytest.raises(CapacityError):
        digitalize(single(50), state_limit=10)


def test_rewards_on_delay_and_actions():
    p = Popta(locations=("a", "b"), initial="a", clocks=("x",), actions=("go",),
              edges=(Edge("a", "go", cc(("x", ">=", 1)), (Branch(1.0, "b"),)),),
              invariants={"a": cc(("x", "<=", 1))},
              rate_rewards={"a": 2.0}, action_rewards={("a", "go"): 3.0})
    m = digitalize(p).pomdp
    assert m.rewards[(0, 0)] == 2.0
    go = m.actions.index("go")
    assert m.rewards[(1, go)] == 3.0


def test_instant_reward_only_on_crossing():
    p = Popta(locations=("a",), initial="a", clocks=("y",), actions=(), edges=(),
              invariants={"a": cc(("y", "<=", 3))}, rate_rewards={"a": 1.0}, instant_at=("y", 2))
    m = digitalize(p).pomdp
    # only the delay from y=1 to y=2 pays
    assert m.rewards == {(1, 0): 1.0}


def test_legend_is_a_bijection():
    model, _ = load("bundled:fig1a", {})
    d = digitalize(model)
    keys = [(loc, tuple(sorted(c.items()))) for loc, c in d.legend]
    assert len(set(keys)) == len(keys) == len(d.pomdp.states)
    assert [e["state"] for e in d.legend_document()] == list(range(len(keys)))
