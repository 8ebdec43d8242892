"""Partial local search: region-restricted sampling, refinement, training, planner update.

Forward sampling runs in lockstep over a batch of rows so the scorer is
evaluated once per construction step; each row owns its random stream, so a
row's draws do not depend on how many other rows share the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
import torch

from .env import Action, Environment, State, Trajectory
from .errors import DeadEnd, DepthUnderflow
from .objectives import FlowModel, ObjectiveConfig, make_loss_fn
from .planner import Planner
from .policy import OptimizerState, PolicyParams, adam_step, masked_log_softmax, sample_actions, value_and_gradient
from .region import RegionMask
from .streams import substream

ACCEPT_RULES = ("strict_improve",)
MAX_REGION_RETRIES = 100


@dataclass(frozen=True)
class LocalSearchConfig:
    K: int = 2
    I: int = 0
    m: int = 16
    accept: str = "strict_improve"

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.I < 0:
            raise ValueError("I must be >= 0")
        if self.m < 1:
            raise ValueError("batch size m must be >= 1")
        if self.accept not in ACCEPT_RULES:
            raise ValueError(f"accept must be one of {ACCEPT_RULES}")


def _forward_batch(
    env: Environment,
    model: FlowModel,
    mask: RegionMask,
    starts: Sequence[State],
    rngs: Sequence[np.random.Generator],
    eps: float,
) -> list[tuple[list[State], list[Action]] | None]:
    """Sample each row forward to a terminal; rows that hit a dead end come back as ``None``."""
    region = mask.action_mask(env.n_aprime)
    paths: list = [([s], []) for s in starts]
    active = [i for i, s in enumerate(starts) if not env.is_terminal(s)]
    while active:
        states = [paths[i][0][-1] for i in active]
        allowed = env.action_masks(states) & region
        ok = allowed.any(axis=1)
        for i in (r for r, good in zip(active, ok) if not good):
            paths[i] = None
        rows = [r for r, good in zip(active, ok) if good]
        if not rows:
            break
        live = [s for s, good in zip(states, ok) if good]
        with torch.no_grad():
            logits = model.evaluate(env, live).action_logits
        logp = masked_log_softmax(logits, torch.from_numpy(allowed[ok])).numpy()
        picks = sample_actions(logp, [rngs[r] for r in rows], eps)
        still = []
        for r, s, i in zip(rows, live, picks):
            a = env.index_action(i)
            nxt = env._step(s, a)
            paths[r][0].append(nxt)
            paths[r][1].append(a)
            if not env.is_terminal(nxt):
                still.append(r)
        active = still
    return paths


def rollout_batch(
    env: Environment,
    model: FlowModel,
    mask: RegionMask,
    rngs: Sequence[np.random.Generator],
    eps: float = 0.0,
) -> list[Trajectory | None]:
    paths = _forward_batch(env, model, mask, [env.s0] * len(rngs), rngs, eps)
    done = [p for p in paths if p is not None]
    rewards = iter(env.rewards([p[0][-1] for p in done]))
    return [None if p is None else Trajectory(tuple(p[0]), tuple(p[1]), float(next(rewards))) for p in paths]


def rollout(
    env: Environment, model: FlowModel, mask: RegionMask, rng: np.random.Generator, eps: float = 0.0
) -> Trajectory:
    tau = rollout_batch(env, model, mask, [rng], eps)[0]
    if tau is None:
        raise DeadEnd("rollout left the region without a valid action")
    return tau


def backtrack_k(
    env: Environment, terminal: State, K: int, rng: np.random.Generator
) -> tuple[State, list[State]]:
    """K uniform backward steps; returns the anchor and the chain ``terminal .. anchor``."""
    if terminal.depth < K:
        raise DepthUnderflow(f"cannot backtrack {K} steps from depth {terminal.depth}")
    chain = [terminal]
    s = terminal
    for _ in range(K):
        ps = env.parents(s)
        s = ps[int(rng.integers(len(ps)))][0]
        chain.append(s)
    return s, chain


def reconstruct_k(
    env: Environment,
    model: FlowModel,
    mask: RegionMask,
    anchor: State,
    rng: np.random.Generator,
    eps: float = 0.0,
) -> tuple[list[State], list[Action]]:
    path = _forward_batch(env, model, mask, [anchor], [rng], eps)[0]
    if path is None:
        raise DeadEnd("reconstruction left the region without a valid action")
    return path


def complete_backtrack(
    env: Environment, anchor: State, rng: np.random.Generator
) -> tuple[list[State], list[Action]]:
    """Uniform backward walk over all parents down to ``s0``, returned in forward order."""
    states, actions = [anchor], []
    s = anchor
    while s.depth > 0:
        ps = env.parents(s)
        s, a = ps[int(rng.integers(len(ps)))]
        states.append(s)
        actions.append(a)
    states.reverse()
    actions.reverse()
    return states, actions


@dataclass
class RefineResult:
    accepted: list[list[Trajectory]]
    n_reconstructed: int


def refine_batch(
    env: Environment,
    model: FlowModel,
    mask: RegionMask,
    batch: Sequence[Trajectory],
    cfg: LocalSearchConfig,
    rng_for: Callable[[int, int], np.random.Generator],
    eps: float = 0.0,
) -> RefineResult:
    """``cfg.I`` refinement rounds for every trajectory; ``rng_for(i, j)`` gives row i's stream at repetition j."""
    accepted: list[list[Trajectory]] = [[] for _ in batch]
    produced = 0
    for j in range(cfg.I):
        rngs = [rng_for(i, j) for i in range(len(batch))]
        anchors = [backtrack_k(env, tau.terminal, cfg.K, r)[0] for tau, r in zip(batch, rngs)]
        suffixes = _forward_batch(env, model, mask, anchors, rngs, eps)
        built = []
        for i, suffix in enumerate(suffixes):
            if suffix is None:
                continue
            prefix_states, prefix_actions = complete_backtrack(env, anchors[i], rngs[i])
            built.append((i, prefix_states + suffix[0][1:], prefix_actions + suffix[1]))
        produced += len(built)
        rewards = env.rewards([states[-1] for _, states, _ in built])
        for (i, states, actions), r in zip(built, rewards):
            if r > batch[i].reward:
                accepted[i].append(Trajectory(tuple(states), tuple(actions), float(r)))
    return RefineResult(accepted, produced)


def refine(
    env: Environment,
    model: FlowModel,
    mask: RegionMask,
    tau: Trajectory,
    cfg: LocalSearchConfig,
    rng: np.random.Generator,
    eps: float = 0.0,
) -> list[Trajectory]:
    return refine_batch(env, model, mask, [tau], cfg, lambda i, j: rng, eps).accepted[0]


class ModeTracker(Protocol):
    modes_total: int

    def observe(self, env: Environment, batch: Sequence[Trajectory]) -> int:
        """Record a batch of terminals; return how many modes were found for the first time."""


@dataclass
class RunState:
    env: Environment
    params: PolicyParams
    opt: OptimizerState
    planner: Planner
    objective: ObjectiveConfig
    ls: LocalSearchConfig
    tracker: ModeTracker
    seed: int
    eps: float = 0.05
    iter: int = 0
    samples_total: int = 0
    last_batch: list[Trajectory] = field(default_factory=list)
    last_accepted: list[Trajectory] = field(default_factory=list)
    # accepted refinements grouped by the Step A row they came from
    last_accepted_by_row: list[list[Trajectory]] = field(default_factory=list)


@dataclass
class IterationMetrics:
    iter: int
    samples_total: int
    loss: float
    modes_total: int
    modes_new: int
    region_id: int
    switched: bool
    max_reward_a: float
    max_reward_b: float
    n_accepted: int


def _step_a(state: RunState) -> tuple[list[Trajectory], bool]:
    """Sample ``m`` rollouts inside the current region, switching region on a dead end."""
    forced = False
    for attempt in range(MAX_REGION_RETRIES):
        tag = () if attempt == 0 else ("retry", attempt)
        rngs = [substream(state.seed, "rollout", state.iter, i, *tag) for i in range(state.ls.m)]
        batch = rollout_batch(state.env, state.params, state.planner.region, rngs, state.eps)
        if all(tau is not None for tau in batch):
            return batch, forced
        state.planner.choose(substream(state.seed, "region", state.iter, "deadend", attempt))
        forced = True
    raise DeadEnd(f"no region admitted complete trajectories after {MAX_REGION_RETRIES} attempts")


def training_round(state: RunState) -> tuple[RunState, IterationMetrics]:
    it = state.iter
    env = state.env

    # Step A
    batch, forced = _step_a(state)
    region = state.planner.region
    state.samples_total += len(batch)

    # Step B
    res = refine_batch(
        env, state.params, region, batch, state.ls,
        lambda i, j: substream(state.seed, "refine", it, i, j), state.eps,
    )
    accepted = [t for row in res.accepted for t in row]
    state.samples_total += res.n_reconstructed

    # Step C
    train = batch + accepted
    loss_fn = make_loss_fn(env, train, state.objective)
    loss, grads = value_and_gradient(loss_fn, state.params)
    state.opt, state.params = adam_step(state.opt, state.params, grads)

    # Step D
    new_modes = state.tracker.observe(env, train)
    switched = state.planner.update(batch, new_modes, lambda: substream(state.seed, "region", it))

    state.last_batch, state.last_accepted = batch, accepted
    state.last_accepted_by_row = res.accepted
    state.iter += 1
    metrics = IterationMetrics(
        iter=it,
        samples_total=state.samples_total,
        loss=loss,
        modes_total=state.tracker.modes_total,
        modes_new=new_modes,
        region_id=region.id,
        switched=switched or forced,
        max_reward_a=max(t.reward for t in batch),
        max_reward_b=max(t.reward for t in train),
        n_accepted=len(accepted),
    )
    return state, metrics
