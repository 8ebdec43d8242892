import math

import numpy as np
import pytest
import torch

from pgfn.env import Trajectory
from pgfn.errors import EmptyBatch, NonFinite
from pgfn.local_search import rollout
from pgfn.objectives import KINDS, ObjectiveConfig, loss, loss_db, loss_fm, loss_subtb, loss_tb, make_loss_fn
from pgfn.oracle import exact_policy, solve_exact_flows
from pgfn.policy import TabularPolicy, gradcheck, init_params
from pgfn.region import RegionMask
from pgfn.streams import substream


def random_table(env, rng, states):
    rows = {s: (rng.normal(size=env.n_actions), float(rng.normal()), rng.normal(size=env.n_actions)) for s in states}
    return TabularPolicy(rows, float(rng.normal()), env.n_actions)


def log_pf(env, pol, s, a):
    logits = pol.rows[s][0]
    idx = [env.action_index(b) for b in env.valid_actions(s)]
    m = max(logits[i] for i in idx)
    lse = m + math.log(sum(math.exp(logits[i] - m) for i in idx))
    return logits[env.action_index(a)] - lse


def log_f(env, pol, s, tau):
    return math.log(tau.reward) if s == tau.terminal else pol.rows[s][1]


def ref_tb(env, pol, batch):
    out = []
    for tau in batch:
        r = float(pol.log_z) - math.log(tau.reward)
        for t, a in enumerate(tau.actions):
            r += log_pf(env, pol, tau.states[t], a) + math.log(env.n_parents(tau.states[t + 1]))
        out.append(r * r)
    return sum(out) / len(out)


def ref_db(env, pol, batch):
    out = []
    for tau in batch:
        for t, a in enumerate(tau.actions):
            s, c = tau.states[t], tau.states[t + 1]
            r = log_f(env, pol, s, tau) + log_pf(env, pol, s, a) - log_f(env, pol, c, tau) + math.log(env.n_parents(c))
            out.append(r * r)
    return sum(out) / len(out)


def ref_subtb(env, pol, batch, lam):
    per = []
    for tau in batch:
        n = len(tau)
        num = den = 0.0
        for i in range(n):
            for j in range(i + 1, n + 1):
                r = log_f(env, pol, tau.states[i], tau) - log_f(env, pol, tau.states[j], tau)
                for t in range(i, j):
                    r += log_pf(env, pol, tau.states[t], tau.actions[t]) + math.log(env.n_parents(tau.states[t + 1]))
                w = lam ** (j - i)
                num += w * r * r
                den += w
        per.append(num / den)
    return sum(per) / len(per)


def ref_fm(env, pol, batch, eps):
    num = den = 0.0
    for tau in batch:
        for s in tau.states[1:]:
            inflow = sum(math.exp(pol.rows[p][2][env.action_index(a)]) for p, a in env.parents(s))
            if env.is_terminal(s):
                outflow = tau.reward
            else:
                outflow = sum(math.exp(pol.rows[s][2][env.action_index(a)]) for a in env.valid_actions(s))
            r = math.log(eps + inflow) - math.log(eps + outflow)
            num += r * r
            den += 1
    return num / den


def sample_batch(env, model, seed, n=6, eps=0.5):
    return [rollout(env, model, RegionMask.full(env.n_astar), substream(seed, "b", i), eps) for i in range(n)]


@pytest.mark.parametrize("env_name", ["tree", "bitseq8", "pamdp3"])
def test_losses_match_reference(env_name, request):
    env = request.getfixturevalue(env_name)
    from pgfn.oracle import enumerate_space

    states = enumerate_space(env).all_states()
    for seed in range(4):
        rng = np.random.default_rng(seed)
        pol = random_table(env, rng, states)
        batch = sample_batch(env, pol, seed)
        assert float(loss_tb(env, pol, batch)) == pytest.approx(ref_tb(env, pol, batch), rel=1e-10)
        assert float(loss_db(env, pol, batch)) == pytest.approx(ref_db(env, pol, batch), rel=1e-10)
        cfg = ObjectiveConfig("SubTB", lam=0.7)
        assert float(loss_subtb(env, pol, batch, cfg)) == pytest.approx(ref_subtb(env, pol, batch, 0.7), rel=1e-10)
        cfg = ObjectiveConfig("FM", log_epsilon=1e-3)
        assert float(loss_fm(env, pol, batch, cfg)) == pytest.approx(ref_fm(env, pol, batch, 1e-3), rel=1e-10)


@pytest.mark.parametrize("env_name", ["tree", "bitseq8", "pamdp3"])
def test_exact_flows_zero_loss(env_name, request):
    env = request.getfixturevalue(env_name)
    pol = exact_policy(env)
    batch = sample_batch(env, pol, 0, n=20)
    for kind in KINDS:
        assert float(loss(env, pol, batch, ObjectiveConfig(kind))) < 1e-8


def test_exact_policy_samples_in_proportion_to_reward(tree):
    pol = exact_policy(tree)
    flows = solve_exact_flows(tree)
    assert math.exp(float(pol.log_z)) == pytest.approx(flows.state_flow[tree.s0])


@pytest.mark.parametrize("kind", KINDS)
def test_gradcheck_small(kind, bitseq8):
    p = init_params(bitseq8, substream(1, "g"), hidden=(6,), log_z=0.4)
    batch = sample_batch(bitseq8, p, 1, n=3)
    assert gradcheck(make_loss_fn(bitseq8, batch, ObjectiveConfig(kind)), p) <= 1e-4


def test_terminal_flow_pinned_to_reward(tree):
    from pgfn.oracle import enumerate_space

    rng = np.random.default_rng(0)
    pol = random_table(tree, rng, enumerate_space(tree).all_states())
    batch = sample_batch(tree, pol, 0)
    before = float(loss_db(tree, pol, batch))
    for tau in batch:
        row = pol.rows[tau.terminal]
        pol.rows[tau.terminal] = (row[0], row[1] + 100.0, row[2])
    assert float(loss_db(tree, pol, batch)) == pytest.approx(before)


def test_lambda_one_weights_uniformly(tree):
    p = init_params(tree, substream(0, "l"), hidden=(4,))
    batch = sample_batch(tree, p, 0)
    a = float(loss_subtb(tree, p, batch, ObjectiveConfig("SubTB", lam=1.0)))
    assert a > 0


def test_errors(tree):
    p = init_params(tree, substream(0, "e"), hidden=(4,))
    with pytest.raises(EmptyBatch):
        loss_tb(tree, p, [])
    batch = sample_batch(tree, p, 0, n=2)
    p.tensors["log_z"] = torch.tensor(math.inf, dtype=torch.float64)
    with pytest.raises(NonFinite):
        loss_tb(tree, p, batch)
    for bad in (dict(kind="XX"), dict(lam=0.0), dict(log_epsilon=0.0)):
        with pytest.raises(ValueError):
            ObjectiveConfig(**bad)
