import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgfn.env import Action, State, Trajectory
from pgfn.planner import (
    DecisionState,
    Planner,
    ScoreTable,
    action_distribution,
    decide,
    observe_iteration,
    select_region,
    should_switch,
    update_scores,
)
from pgfn.region import RegionConfig
from pgfn.streams import substream


def traj(astars, reward):
    acts = tuple(Action(a, 0) for a in astars)
    states = tuple(State(i, i) for i in range(len(acts) + 1))
    return Trajectory(states, acts, reward)


def test_score_updates():
    t = update_scores(ScoreTable.fresh(4), [traj([1], 2.0)])
    assert t.hr[1] == pytest.approx(2.01) and t.cnt[1] == pytest.approx(1.01)
    assert t.scores()[1] == pytest.approx(2.98020, abs=1e-5)
    t = update_scores(ScoreTable.fresh(4), [traj([1, 1], 2.0)])
    assert t.hr[1] == pytest.approx(4.01) and t.cnt[1] == pytest.approx(2.01)
    assert t.scores()[1] == pytest.approx(2.49254, abs=1e-5)
    assert t.scores()[0] == pytest.approx(101.0)


def test_update_does_not_mutate():
    fresh = ScoreTable.fresh(2)
    update_scores(fresh, [traj([0], 1.0)])
    assert fresh.hr[0] == 0.01


def test_action_distribution():
    t = ScoreTable(np.array([0.0, 2.0]), np.array([1.0, 1.0]))
    assert action_distribution(t) == pytest.approx([0.25, 0.75])
    np.testing.assert_allclose(action_distribution(ScoreTable.fresh(16)), np.full(16, 1 / 16), atol=1e-12)


def test_distribution_under_constant_reward_shift():
    # proportional (not softmax) normalization: a shift in hr is only harmless when every score is equal
    same = ScoreTable(np.full(3, 2.0), np.full(3, 2.0))
    np.testing.assert_allclose(action_distribution(ScoreTable(same.hr + 4.0, same.cnt)), action_distribution(same))
    base = ScoreTable(np.array([1.0, 3.0, 5.0]), np.full(3, 2.0))
    shifted = ScoreTable(base.hr + 4.0, base.cnt)
    want = base.hr + 4.0 + 1.0
    np.testing.assert_allclose(action_distribution(shifted), want / want.sum())
    assert not np.allclose(action_distribution(shifted), action_distribution(base))


def test_scale_relation():
    rng = np.random.default_rng(0)
    rewards = rng.uniform(0.5, 1.5, size=20000)
    for c in (0.5, 3.0):
        t = update_scores(ScoreTable.fresh(1), [traj([0], c * r) for r in rewards])
        assert t.scores()[0] == pytest.approx((c * rewards.sum() + 0.01 + 1) / t.cnt[0], rel=1e-12)
        assert t.scores()[0] == pytest.approx(c * rewards.mean(), rel=1e-3)


def test_ranking_converges_to_best_word():
    rng = np.random.default_rng(1)
    t = ScoreTable.fresh(16)
    for _ in range(300):
        words = rng.integers(16, size=3)
        r = 1.0 if 15 in words else 0.1
        t = update_scores(t, [traj(list(words), r)])
    assert t.ranking()[0] == 15


def test_select_region():
    t = ScoreTable.fresh(16)
    assert select_region(t, RegionConfig(p=1.0), substream(0, "s")).is_full
    assert select_region(t, RegionConfig(p=0.25), substream(0, "s")).popcount == 4
    assert select_region(t, RegionConfig(p=0.01), substream(0, "s")).popcount == 1
    dom = ScoreTable(np.array([1e6] + [0.0] * 15), np.ones(16))
    picks = [select_region(dom, RegionConfig(p=1 / 16), substream(i, "s")).indices for i in range(50)]
    assert all(p == [0] for p in picks)


# Every outcome of the switch rule, plus the equality boundaries of each strict comparison.
DECISIONS = [
    # step, min_steps, current, previous, avg, expected
    (2, 5, 0, 0, 2, False),  # too few steps in the region
    (4, 5, 0, 0, 0, False),  # one short of min_steps
    (10, 5, 3, 0, 2, False),  # current above average
    (10, 5, 3, 2, 3, False),  # current not above average but above previous
    (10, 5, 1, 4, 2, False),  # recent sum above twice the average
    (10, 5, 0, 0, 2, True),  # no guard fires
    (5, 5, 0, 0, 2, True),  # step == min_steps passes the first guard
    (10, 5, 2, 2, 2, True),  # current == avg and == previous, sum == 2 avg: no strict guard fires
    (10, 5, 1, 3, 2, True),  # current + previous == 2 avg exactly
    (10, 5, 2, 3, 2, False),  # current == avg passes, but sum 5 > 4
]


@pytest.mark.parametrize("step,min_steps,cur,prev,avg,want", DECISIONS)
def test_decision_table(step, min_steps, cur, prev, avg, want):
    assert decide(step, min_steps, cur, prev, avg) is want


def test_observe_iteration():
    ds = observe_iteration(DecisionState(min_steps=0), 3)
    assert ds.his == [3] and ds.diff == [3]
    ds = observe_iteration(ds, 5)
    assert ds.diff[-1] == 2
    ds = observe_iteration(ds, 5)
    assert ds.diff[-1] == 0 and ds.iter == 3 and ds.step == 3
    with pytest.raises(ValueError):
        observe_iteration(ds, -1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 20), max_size=30))
def test_diff_invariant(counts):
    ds = DecisionState(min_steps=0)
    for c in counts:
        ds = observe_iteration(ds, c)
    assert len(ds.diff) == len(ds.his)
    if counts:
        assert ds.diff[0] == ds.his[0]
        assert all(ds.diff[i] == ds.his[i] - ds.his[i - 1] for i in range(1, len(counts)))
        assert np.cumsum(ds.diff).tolist() == ds.his
    assert should_switch(ds) == should_switch(DecisionState(**vars(ds)))


def test_switch_needs_history():
    assert not should_switch(DecisionState(min_steps=0))
    assert not should_switch(observe_iteration(DecisionState(min_steps=0), 0))


def test_avg_sources():
    ds = DecisionState(min_steps=0, his=[4, 4], diff=[4, 0])
    assert ds.avg() == 2.0
    assert DecisionState(min_steps=0, avg_source="his", his=[4, 4], diff=[4, 0]).avg() == 4.0
    with pytest.raises(ValueError):
        DecisionState(min_steps=0, avg_source="other")


def test_planner_switch_resets_step_and_roundtrips():
    p = Planner(4, RegionConfig(p=0.5), min_steps=1)
    first = p.choose(substream(0, "a"))
    assert first.id == 0
    switched = []
    for i in range(6):
        switched.append(p.update([traj([0, 1], 0.5)], 0, lambda: substream(0, "b", i)))
    assert any(switched)
    assert p.region.id > 0
    q = Planner(4, RegionConfig(p=0.5), min_steps=1)
    q.load_state_dict(p.state_dict())
    assert q.state_dict() == p.state_dict()
