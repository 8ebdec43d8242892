"""Flow Matching, Detailed Balance, Trajectory Balance and Sub-Trajectory Balance.

All four losses normalize the forward policy over the full action set
``A(s)`` even when the batch was sampled inside a region, and use the
uniform-over-parents backward policy. Terminal state flows are pinned to the
reward. Losses are means (over states, transitions or trajectories) so the
learning rate does not depend on batch size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np
import torch

from .env import Environment, State, Trajectory
from .errors import EmptyBatch, NonFinite
from .policy import DTYPE, PolicyOutput, masked_log_softmax

KINDS = ("FM", "DB", "TB", "SubTB")


class FlowModel(Protocol):
    log_z: torch.Tensor

    def evaluate(self, env: Environment, states: Sequence[State]) -> PolicyOutput: ...


@dataclass(frozen=True)
class ObjectiveConfig:
    kind: str = "TB"
    lam: float = 0.9
    log_epsilon: float = 1e-6

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"objective kind must be one of {KINDS}")
        if not 0 < self.lam <= 1:
            raise ValueError("lambda must lie in (0, 1]")
        if not self.log_epsilon > 0:
            raise ValueError("log_epsilon must be positive")


class Prepared:
    """Parameter-independent index bookkeeping for one batch."""

    def __init__(self, env: Environment, batch: Sequence[Trajectory], with_parents: bool = False):
        if not batch:
            raise EmptyBatch("cannot compute a loss on an empty batch")
        self.env = env
        self.batch = list(batch)
        self.states: list[State] = []
        self.index: dict[State, int] = {}
        for tau in batch:
            for s in tau.states:
                self._add(s)
        if with_parents:
            # FM needs edge flows out of every parent, including off-trajectory ones
            for tau in batch:
                for s in tau.states[1:]:
                    for p, _ in env.parents(s):
                        self._add(p)

        src, dst, act, lpb = [], [], [], []
        for tau in batch:
            for t, a in enumerate(tau.actions):
                src.append(self.index[tau.states[t]])
                dst.append(self.index[tau.states[t + 1]])
                act.append(env.action_index(a))
                lpb.append(-math.log(env.n_parents(tau.states[t + 1])))
        self.src = torch.tensor(src, dtype=torch.long)
        self.dst = torch.tensor(dst, dtype=torch.long)
        self.act = torch.tensor(act, dtype=torch.long)
        self.lpb = torch.tensor(lpb, dtype=DTYPE)
        self.lengths = [len(tau) for tau in batch]
        self.log_rewards = torch.tensor([math.log(tau.reward) for tau in batch], dtype=DTYPE)

        # reward of every terminal state in the batch, by state index
        self.terminal = torch.zeros(len(self.states), dtype=torch.bool)
        self.state_log_reward = torch.zeros(len(self.states), dtype=DTYPE)
        for tau in batch:
            i = self.index[tau.terminal]
            self.terminal[i] = True
            self.state_log_reward[i] = math.log(tau.reward)

        # rows that need a forward-policy normalization
        self.src_rows = torch.unique(self.src)
        self.src_pos = torch.zeros(len(self.states), dtype=torch.long)
        self.src_pos[self.src_rows] = torch.arange(len(self.src_rows))
        self.src_masks = torch.from_numpy(
            np.stack([env.action_mask(self.states[i]) for i in self.src_rows.tolist()])
        ) if len(self.src_rows) else torch.zeros((0, env.n_actions), dtype=torch.bool)

        if with_parents:
            self._prepare_fm()

    def _add(self, s: State) -> int:
        i = self.index.get(s)
        if i is None:
            i = self.index[s] = len(self.states)
            self.states.append(s)
        return i

    def _prepare_fm(self) -> None:
        env = self.env
        counts: dict[int, int] = {}
        for tau in self.batch:
            for s in tau.states[1:]:
                i = self.index[s]
                counts[i] = counts.get(i, 0) + 1
        targets = sorted(counts)
        parent_rows = []
        for i in targets:
            parent_rows.append([(self.index[p], env.action_index(a)) for p, a in env.parents(self.states[i])])
        width = max(len(r) for r in parent_rows)
        pidx = np.zeros((len(targets), width), dtype=np.int64)
        pact = np.zeros((len(targets), width), dtype=np.int64)
        pok = np.zeros((len(targets), width), dtype=bool)
        for r, row in enumerate(parent_rows):
            for c, (pi, ai) in enumerate(row):
                pidx[r, c], pact[r, c], pok[r, c] = pi, ai, True
        self.fm_parent_idx = torch.from_numpy(pidx)
        self.fm_parent_act = torch.from_numpy(pact)
        self.fm_parent_ok = torch.from_numpy(pok)

        is_term = np.array([env.is_terminal(self.states[i]) for i in targets])
        mult = np.array([counts[i] for i in targets], dtype=np.float64)
        targets_t = torch.tensor(targets, dtype=torch.long)
        self.fm_inner = targets_t[torch.from_numpy(~is_term)]
        self.fm_inner_masks = torch.from_numpy(
            np.stack([env.action_mask(self.states[i]) for i in self.fm_inner.tolist()])
        ) if len(self.fm_inner) else torch.zeros((0, env.n_actions), dtype=torch.bool)
        self.fm_term = targets_t[torch.from_numpy(is_term)]
        self.fm_rows_inner = torch.from_numpy(np.flatnonzero(~is_term))
        self.fm_rows_term = torch.from_numpy(np.flatnonzero(is_term))
        self.fm_mult = torch.tensor(mult, dtype=DTYPE)

    def forward_log_probs(self, out: PolicyOutput) -> torch.Tensor:
        """``log P_F(s_{t+1} | s_t)`` for every transition, normalized over ``A(s_t)``."""
        logp = masked_log_softmax(out.action_logits[self.src_rows], self.src_masks)
        return logp[self.src_pos[self.src], self.act]

    def log_flows(self, out: PolicyOutput) -> torch.Tensor:
        """Per-state log flow with terminals pinned to log reward."""
        return torch.where(self.terminal, self.state_log_reward, out.log_state_flow)


def _finite(loss: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(loss):
        raise NonFinite(f"loss evaluated to {loss.item()}")
    return loss


def _tb(model: FlowModel, prep: Prepared, cfg: ObjectiveConfig) -> torch.Tensor:
    out = model.evaluate(prep.env, prep.states)
    traj = torch.repeat_interleave(torch.arange(len(prep.batch)), torch.tensor(prep.lengths))
    per_step = prep.forward_log_probs(out) - prep.lpb
    sums = torch.zeros(len(prep.batch), dtype=DTYPE).index_add(0, traj, per_step)
    res = model.log_z + sums - prep.log_rewards
    return (res**2).mean()


def _db(model: FlowModel, prep: Prepared, cfg: ObjectiveConfig) -> torch.Tensor:
    out = model.evaluate(prep.env, prep.states)
    log_f = prep.log_flows(out)
    res = log_f[prep.src] + prep.forward_log_probs(out) - log_f[prep.dst] - prep.lpb
    return (res**2).mean()


def _subtb(model: FlowModel, prep: Prepared, cfg: ObjectiveConfig) -> torch.Tensor:
    out = model.evaluate(prep.env, prep.states)
    log_f = prep.log_flows(out)
    step = prep.forward_log_probs(out) - prep.lpb
    offsets = np.concatenate([[0], np.cumsum(prep.lengths)])
    per_traj = []
    by_len: dict[int, list[int]] = {}
    for b, n in enumerate(prep.lengths):
        by_len.setdefault(n, []).append(b)
    for n, members in sorted(by_len.items()):
        rows = torch.tensor([list(range(offsets[b], offsets[b] + n)) for b in members], dtype=torch.long)
        nodes = torch.cat([prep.src[rows], prep.dst[rows[:, -1:]]], dim=1)
        lf = log_f[nodes]
        cum = torch.cat([torch.zeros(len(members), 1, dtype=DTYPE), torch.cumsum(step[rows], dim=1)], dim=1)
        # res[b, i, j] for sub-trajectory s_i .. s_j
        res = lf[:, :, None] - lf[:, None, :] + cum[:, None, :] - cum[:, :, None]
        i, j = torch.triu_indices(n + 1, n + 1, offset=1)
        w = torch.tensor(cfg.lam, dtype=DTYPE) ** (j - i).to(DTYPE)
        per_traj.append((res[:, i, j] ** 2 * w).sum(dim=1) / w.sum())
    return torch.cat(per_traj).mean()


def _fm(model: FlowModel, prep: Prepared, cfg: ObjectiveConfig) -> torch.Tensor:
    out = model.evaluate(prep.env, prep.states)
    edges = out.edge_log_flows
    log_eps = torch.tensor(math.log(cfg.log_epsilon), dtype=DTYPE)
    incoming = edges[prep.fm_parent_idx, prep.fm_parent_act].masked_fill(~prep.fm_parent_ok, -math.inf)
    lhs = torch.logaddexp(log_eps, torch.logsumexp(incoming, dim=1))

    res = torch.zeros(len(prep.fm_mult), dtype=DTYPE)
    if len(prep.fm_inner):
        outgoing = edges[prep.fm_inner].masked_fill(~prep.fm_inner_masks, -math.inf)
        rhs = torch.logaddexp(log_eps, torch.logsumexp(outgoing, dim=1))
        res = res.index_put((prep.fm_rows_inner,), lhs[prep.fm_rows_inner] - rhs)
    if len(prep.fm_term):
        rhs = torch.logaddexp(log_eps, prep.state_log_reward[prep.fm_term])
        res = res.index_put((prep.fm_rows_term,), lhs[prep.fm_rows_term] - rhs)
    return (prep.fm_mult * res**2).sum() / prep.fm_mult.sum()


_LOSSES = {"FM": _fm, "DB": _db, "TB": _tb, "SubTB": _subtb}


def make_loss_fn(
    env: Environment, batch: Sequence[Trajectory], cfg: ObjectiveConfig
) -> Callable[[FlowModel], torch.Tensor]:
    """Prepare ``batch`` once and return ``model -> scalar loss``."""
    prep = Prepared(env, batch, with_parents=cfg.kind == "FM")
    fn = _LOSSES[cfg.kind]
    return lambda model: _finite(fn(model, prep, cfg))


def loss_fm(env, params, batch, cfg: ObjectiveConfig = ObjectiveConfig("FM")) -> torch.Tensor:
    return make_loss_fn(env, batch, ObjectiveConfig("FM", cfg.lam, cfg.log_epsilon))(params)


def loss_db(env, params, batch, cfg: ObjectiveConfig = ObjectiveConfig("DB")) -> torch.Tensor:
    return make_loss_fn(env, batch, ObjectiveConfig("DB", cfg.lam, cfg.log_epsilon))(params)


def loss_tb(env, params, batch, cfg: ObjectiveConfig = ObjectiveConfig("TB")) -> torch.Tensor:
    return make_loss_fn(env, batch, ObjectiveConfig("TB", cfg.lam, cfg.log_epsilon))(params)


def loss_subtb(env, params, batch, cfg: ObjectiveConfig = ObjectiveConfig("SubTB")) -> torch.Tensor:
    return make_loss_fn(env, batch, ObjectiveConfig("SubTB", cfg.lam, cfg.log_epsilon))(params)


def loss(env, params, batch, cfg: ObjectiveConfig) -> torch.Tensor:
    return make_loss_fn(env, batch, cfg)(params)
