"""Exact ground truth on enumerable instances."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping

import numpy as np

from .env import Action, Environment, State
from .errors import BadDistribution, BudgetExceeded
from .policy import TabularPolicy
from .region import RegionConfig, RegionMask, sample_bernoulli_region

DEFAULT_BUDGET = 10**6


@dataclass
class Enumeration:
    states_by_depth: list[list[State]]
    terminals: list[State]

    @property
    def n_states(self) -> int:
        return sum(len(level) for level in self.states_by_depth)

    def all_states(self) -> list[State]:
        return [s for level in self.states_by_depth for s in level]


def enumerate_space(
    env: Environment, mask: RegionMask | None = None, budget: int = DEFAULT_BUDGET
) -> Enumeration:
    """Breadth-first enumeration from ``s0``, optionally through mask-valid actions only.

    States left without a mask-valid action are kept (they belong to the
    region) but simply not expanded.
    """
    level = [env.s0]
    levels = [level]
    terminals: list[State] = []
    total = 1
    while level:
        nxt: dict[State, None] = {}
        for s in level:
            if env.is_terminal(s):
                terminals.append(s)
                continue
            for a in env.valid_actions(s):
                if mask is None or mask.valid[a.astar]:
                    nxt[env._step(s, a)] = None
            if total + len(nxt) > budget:
                raise BudgetExceeded(f"more than {budget} states")
        total += len(nxt)
        level = list(nxt)
        if level:
            levels.append(level)
    return Enumeration(levels, terminals)


def depth_profile(
    env: Environment, mask: RegionMask | None = None, budget: int = DEFAULT_BUDGET
) -> list[int]:
    levels = enumerate_space(env, mask, budget).states_by_depth
    counts = [len(level) for level in levels]
    return counts + [0] * (env.max_depth + 1 - len(counts))


@dataclass
class ExactTarget:
    terminals: list[State]
    rewards: np.ndarray
    z: float
    probs: np.ndarray

    def as_dict(self, env: Environment) -> dict[str, float]:
        return {env.render(x): float(p) for x, p in zip(self.terminals, self.probs)}


def exact_target(
    env: Environment, mask: RegionMask | None = None, budget: int = DEFAULT_BUDGET
) -> ExactTarget:
    terminals = enumerate_space(env, mask, budget).terminals
    rewards = env.rewards(terminals)
    z = float(rewards.sum())
    return ExactTarget(terminals, rewards, z, rewards / z)


@dataclass
class ExactFlows:
    state_flow: dict[State, float]
    edge_flow: dict[tuple[State, Action], float]
    log_z: float


def solve_exact_flows(env: Environment, budget: int = DEFAULT_BUDGET) -> ExactFlows:
    """Backward dynamic programme under the uniform-over-parents backward rule.

    ``F(x) = R(x)`` at terminals; each state splits its flow evenly among its
    parents, so ``F(p -> s) = F(s) / |parents(s)|`` and ``F(p)`` is the sum of
    its outgoing edge flows.
    """
    levels = enumerate_space(env, None, budget).states_by_depth
    state_flow: dict[State, float] = {}
    edge_flow: dict[tuple[State, Action], float] = {}
    for level in reversed(levels):
        terminal = [s for s in level if env.is_terminal(s)]
        for s, r in zip(terminal, env.rewards(terminal)):
            state_flow[s] = float(r)
        for s in level:
            if env.is_terminal(s):
                continue
            total = 0.0
            for a in env.valid_actions(s):
                child = env._step(s, a)
                f = state_flow[child] / env.n_parents(child)
                edge_flow[(s, a)] = f
                total += f
            state_flow[s] = total
    return ExactFlows(state_flow, edge_flow, math.log(state_flow[env.s0]))


def exact_policy(env: Environment, flows: ExactFlows | None = None) -> TabularPolicy:
    """Heads that reproduce the exact flows: logits and edge outputs are log edge flows."""
    flows = flows or solve_exact_flows(env)
    rows = {}
    for s, f in flows.state_flow.items():
        edges = np.zeros(env.n_actions)
        for a in env.valid_actions(s):
            edges[env.action_index(a)] = math.log(flows.edge_flow[(s, a)])
        rows[s] = (edges.copy(), math.log(f), edges)
    return TabularPolicy(rows, flows.log_z, env.n_actions)


def _check_normalized(p: Mapping[Hashable, float], name: str) -> None:
    values = np.fromiter(p.values(), dtype=np.float64, count=len(p))
    if np.any(values < 0) or abs(values.sum() - 1.0) > 1e-9:
        raise BadDistribution(f"{name} is not a normalized distribution")


def tv_distance(p: Mapping[Hashable, float], q: Mapping[Hashable, float]) -> float:
    """Total variation ``0.5 * sum |p - q|`` over the union of supports."""
    _check_normalized(p, "p")
    _check_normalized(q, "q")
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def empirical_distribution(samples: Iterable[Hashable]) -> dict[Hashable, float]:
    counts: dict[Hashable, int] = {}
    for x in samples:
        counts[x] = counts.get(x, 0) + 1
    n = sum(counts.values())
    return {k: c / n for k, c in counts.items()}


def region_size_table(
    env: Environment,
    p: float,
    n_masks: int,
    rng: np.random.Generator,
    budget: int = DEFAULT_BUDGET,
) -> list[dict]:
    """Mean exact ``|R_l|`` over Bernoulli masks against ``p**l * |S_l|``."""
    full = depth_profile(env, None, budget)
    cfg = RegionConfig(p=p, selection_mode="bernoulli")
    totals = np.zeros(len(full))
    for i in range(n_masks):
        mask = sample_bernoulli_region(env.n_astar, cfg, rng, id=i)
        totals += depth_profile(env, mask, budget)
    rows = []
    for depth, size in enumerate(full):
        expected = p**depth * size
        mc = totals[depth] / n_masks
        rows.append(
            {
                "depth": depth,
                "expected_size": expected,
                "mc_mean_size": mc,
                "rel_err": abs(mc - expected) / expected if expected else 0.0,
            }
        )
    return rows
