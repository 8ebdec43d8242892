import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import dp_levenshtein
from pgfn.env import Action, State, Trajectory, check_trajectory, trajectory_from_actions
from pgfn.errors import BadSpec, Exhausted, IllegalAction, InvalidTrajectory, MissingReward, NoParent, NotTerminal
from pgfn.oracle import enumerate_space
from pgfn.streams import substream
from pgfn.tasks import (
    DEFAULT_BASIS,
    BitSeqSpec,
    PamdpSpec,
    ToyTreeSpec,
    bitseq_reward,
    default_mode_distance,
    levenshtein,
    load_modes,
    load_reward_table,
    make_bitseq,
    make_pamdp,
    make_toytree,
    synth_modes,
)


def test_fill_action(bitseq8):
    s = bitseq8.apply(bitseq8.s0, Action(0b1111, 0))
    assert bitseq8.render(s) == "1111...."
    assert s.depth == 1


def test_prepend(pamdp3):
    s = State("CG", 2)
    assert pamdp3.apply(s, Action(0, pamdp3.PREPEND)).payload == "ACG"


def test_illegal_action(bitseq8):
    s = bitseq8.apply(bitseq8.s0, Action(3, 0))
    with pytest.raises(IllegalAction):
        bitseq8.apply(s, Action(5, 0))


def test_valid_action_counts(bitseq8):
    assert len(bitseq8.valid_actions(bitseq8.s0)) == 32
    x = bitseq8.apply(bitseq8.apply(bitseq8.s0, Action(1, 0)), Action(2, 1))
    assert bitseq8.valid_actions(x) == []
    env = make_pamdp(PamdpSpec(length=14, default_reward=1.0))
    assert len(env.valid_actions(env.s0)) == 4


def test_parents(bitseq8, pamdp3):
    x = State((0b1111, 0b0000), 2)
    assert len(bitseq8.parents(x)) == 2
    got = set(pamdp3.parents(State("ACG", 3)))
    assert got == {(State("CG", 2), Action(0, pamdp3.PREPEND)), (State("AC", 2), Action(2, pamdp3.APPEND))}
    with pytest.raises(NoParent):
        bitseq8.parents(bitseq8.s0)


def test_rewards(bitseq8):
    env = make_bitseq(BitSeqSpec(8, 4, ["11111111"]))
    assert env.reward(State((15, 15), 2)) == 1.0
    assert env.reward(State((15, 0), 2)) == pytest.approx(math.exp(-dp_levenshtein("11110000", "11111111")))
    assert env.reward(State((15, 0), 2)) == pytest.approx(0.018316, abs=1e-6)
    with pytest.raises(NotTerminal):
        env.reward(env.s0)
    with pytest.raises(NotTerminal):
        env.rewards([env.s0])


@pytest.mark.parametrize("env_name", ["tree", "bitseq8", "pamdp3"])
def test_parents_invert_apply(env_name, request):
    env = request.getfixturevalue(env_name)
    for s in enumerate_space(env).all_states():
        for a in env.valid_actions(s):
            child = env.apply(s, a)
            assert child.depth == s.depth + 1
            assert env.parents(child).count((s, a)) == 1
            assert env.apply(s, a) == child
        if s.depth:
            ps = env.parents(s)
            assert len(set(ps)) == len(ps) == env.n_parents(s)
            assert all(env.apply(p, a) == s for p, a in ps)


def test_distinct_actions_distinct_children(bitseq8, pamdp3):
    for env in (bitseq8, pamdp3):
        for s in enumerate_space(env).all_states():
            children = [env.apply(s, a) for a in env.valid_actions(s)]
            assert len(set(children)) == len(children)


def test_trajectory_checks(bitseq8):
    tau = trajectory_from_actions(bitseq8, [Action(15, 1), Action(15, 0)])
    check_trajectory(bitseq8, tau)
    assert tau.reward == 1.0 and len(tau) == 2
    bad = Trajectory(tau.states, (Action(15, 1), Action(14, 0)), tau.reward)
    with pytest.raises(InvalidTrajectory):
        check_trajectory(bitseq8, bad)


def test_encoding(bitseq8):
    e = bitseq8.encode(bitseq8.s0)
    assert e.shape == (34,)
    assert e[16] == 1 and e[33] == 1 and e.sum() == 2
    s = State((3, 7), 2)
    assert np.array_equal(bitseq8.encode(s), bitseq8.encode(State((3, 7), 2)))


def test_action_masks_batch_matches_single(bitseq8, pamdp3):
    for env in (bitseq8, pamdp3):
        states = enumerate_space(env).all_states()
        batch = env.action_masks(states)
        for row, s in zip(batch, states):
            want = np.zeros(env.n_actions, bool)
            want[[env.action_index(a) for a in env.valid_actions(s)]] = True
            assert np.array_equal(row, want)


@pytest.mark.parametrize("a,b,d", [("kitten", "sitting", 3), ("0000", "1111", 4), ("abc", "abc", 0)])
def test_levenshtein_examples(a, b, d):
    assert levenshtein(a, b) == d == dp_levenshtein(a, b)


@settings(max_examples=200, deadline=None)
@given(st.text("01", max_size=12), st.text("01", max_size=12), st.text("01", max_size=12))
def test_levenshtein_metric(a, b, c):
    assert levenshtein(a, b) == dp_levenshtein(a, b)
    assert levenshtein(a, b) == levenshtein(b, a)
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.text("01", min_size=8, max_size=8), min_size=1, max_size=4), st.text("01", min_size=8, max_size=8))
def test_adding_a_mode_never_lowers_reward(modes, extra):
    x = "01100110"
    before = bitseq_reward(BitSeqSpec(8, 4, modes), x)
    after = bitseq_reward(BitSeqSpec(8, 4, modes + [extra]), x)
    assert after >= before
    assert 0 < before <= 1


def test_bitseq_spaces():
    env = make_bitseq(BitSeqSpec(8, 4, ["11111111"]))
    e = enumerate_space(env)
    assert env.n_astar == 16 and env.n_aprime == 2 and len(e.terminals) == 256
    for s in e.all_states():
        assert env.n_parents(s) == sum(w >= 0 for w in s.payload)
    with pytest.raises(BadSpec):
        make_bitseq(BitSeqSpec(10, 4, ["1" * 10]))
    with pytest.raises(BadSpec):
        make_bitseq(BitSeqSpec(8, 4, ["1111"]))


def test_bitseq_reward_bounds(bitseq8):
    e = enumerate_space(bitseq8)
    r = bitseq8.rewards(e.terminals)
    assert np.all(r > 0) and np.all(r <= 1)
    modes = set(bitseq8.spec.modes)
    for x, v in zip(e.terminals, r):
        assert (v == 1.0) == (bitseq8.render(x) in modes)


def test_mode_distance_default():
    assert default_mode_distance(120) == 28
    assert default_mode_distance(24) == 6
    assert BitSeqSpec(24, 4, ["0" * 24]).mode_distance == 6


def test_synth_modes():
    assert synth_modes(["11111111"], 1, 16, substream(0, "m")) == ["1" * 16]
    modes = synth_modes(DEFAULT_BASIS, 20, 24, substream(0, "m"))
    assert len(set(modes)) == 20 and all(len(m) == 24 for m in modes)
    with pytest.raises(Exhausted):
        synth_modes(["11111111"], 2, 16, substream(0, "m"))
    with pytest.raises(BadSpec):
        synth_modes(DEFAULT_BASIS, 1, 12, substream(0, "m"))


def test_basis_word_frequency():
    counts = {}
    for b in DEFAULT_BASIS:
        for i in range(0, 8, 4):
            counts[b[i:i + 4]] = counts.get(b[i:i + 4], 0) + 1
    assert max(counts, key=counts.get) == "1111"
    assert sum("1111" in (b[:4], b[4:]) for b in DEFAULT_BASIS) == 3


def test_pamdp_structure():
    env = make_pamdp(PamdpSpec(length=2, default_reward=1.0))
    e = enumerate_space(env)
    assert len(e.terminals) == 16
    assert len(env.parents(State("AC", 2))) == 2
    for L in range(2, 5):
        env = make_pamdp(PamdpSpec(length=L, default_reward=1.0))
        for x in enumerate_space(env).terminals:
            uniform = len(set(x.payload)) == 1
            assert env.n_parents(x) == (1 if uniform else 2)


def test_pamdp_reward_sources(tmp_path):
    with pytest.raises(MissingReward):
        make_pamdp(PamdpSpec(length=2, reward_table={"AA": 1.0}))
    table = {"".join(p): 1.0 + i for i, p in enumerate(product("ACGU", repeat=2))}
    path = tmp_path / "r.csv"
    path.write_text("sequence,reward\n" + "".join(f"{k},{v}\n" for k, v in table.items()))
    env = make_pamdp(PamdpSpec(length=2, reward_table=load_reward_table(path)))
    assert env.reward(State("AC", 2)) == table["AC"]
    env = make_pamdp(PamdpSpec(length=3, reward_table={"AAA": 2.0}, default_reward=0.5))
    assert env.reward(State("AAA", 3)) == 2.0 and env.reward(State("CCC", 3)) == 0.5


def test_load_modes(tmp_path):
    p = tmp_path / "modes.txt"
    p.write_text("1111\n\n0000\n")
    assert load_modes(p) == ["1111", "0000"]


def test_toytree():
    env = make_toytree(ToyTreeSpec(2, 3))
    e = enumerate_space(env)
    assert [len(l) for l in e.states_by_depth] == [1, 2, 4, 8]
    assert all(len(env.parents(s)) == 1 for s in e.all_states() if s.depth)
    deep = make_toytree(ToyTreeSpec(3, 2, "uniform", "per_depth"))
    assert deep.n_astar == 6
    assert [a.astar for a in deep.valid_actions(State((1,), 1))] == [3, 4, 5]
    with pytest.raises(BadSpec):
        make_toytree(ToyTreeSpec(1, 3))
