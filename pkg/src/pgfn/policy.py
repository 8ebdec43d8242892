"""Differentiable scorer: shared MLP trunk with logit, state-flow and edge-flow heads.

Parameters live in a flat ``name -> float64 tensor`` dict so they can be
checkpointed as named arrays, perturbed entry by entry for finite-difference
checks, and updated by a plain Adam step. Reverse-mode derivatives come from
torch autograd.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .env import Environment, State
from .errors import EmptyMask, NoParent, NonFinite, ShapeMismatch

DTYPE = torch.float64

ACTIVATIONS: dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "tanh": torch.tanh,
    "sigmoid": torch.sigmoid,
    "softplus": F.softplus,
    "silu": F.silu,
}

HEADS = ("logits", "flow", "edge")


class PolicyOutput(NamedTuple):
    action_logits: torch.Tensor
    log_state_flow: torch.Tensor
    edge_log_flows: torch.Tensor


class PolicyParams:
    """Named parameter tensors plus the (static) nonlinearity choice."""

    def __init__(self, tensors: Mapping[str, torch.Tensor], activation: str = "tanh"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.tensors = dict(tensors)
        self.activation = activation

    @property
    def log_z(self) -> torch.Tensor:
        return self.tensors["log_z"]

    @property
    def n_trunk(self) -> int:
        return sum(1 for k in self.tensors if k.startswith("trunk.") and k.endswith(".weight"))

    @property
    def input_dim(self) -> int:
        first = "trunk.0.weight" if self.n_trunk else "logits.weight"
        return self.tensors[first].shape[1]

    @property
    def n_actions(self) -> int:
        return self.tensors["logits.weight"].shape[0]

    def clone(self, requires_grad: bool = False) -> "PolicyParams":
        return PolicyParams(
            {k: v.detach().clone().requires_grad_(requires_grad) for k, v in self.tensors.items()},
            self.activation,
        )

    def evaluate(self, env: Environment, states: Sequence[State]) -> PolicyOutput:
        return policy_forward(self, env.encode_batch(states))

    def arrays(self) -> dict[str, list]:
        return {k: v.detach().tolist() for k, v in self.tensors.items() if k != "log_z"}

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, list], log_z: float, activation: str) -> "PolicyParams":
        tensors = {k: torch.tensor(v, dtype=DTYPE) for k, v in arrays.items()}
        tensors["log_z"] = torch.tensor(float(log_z), dtype=DTYPE)
        return cls(tensors, activation)

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}={tuple(v.shape)}" for k, v in self.tensors.items())
        return f"PolicyParams({self.activation}; {shapes})"


def init_params(
    env: Environment,
    rng: np.random.Generator,
    hidden: Sequence[int] = (128, 128),
    activation: str = "tanh",
    log_z: float = 0.0,
) -> PolicyParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for every linear map."""

    def linear(fan_in: int, fan_out: int) -> tuple[torch.Tensor, torch.Tensor]:
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        return torch.tensor(w, dtype=DTYPE), torch.tensor(b, dtype=DTYPE)

    tensors: dict[str, torch.Tensor] = {}
    width = env.feature_dim
    for i, h in enumerate(hidden):
        tensors[f"trunk.{i}.weight"], tensors[f"trunk.{i}.bias"] = linear(width, h)
        width = h
    for name, out in zip(HEADS, (env.n_actions, 1, env.n_actions)):
        tensors[f"{name}.weight"], tensors[f"{name}.bias"] = linear(width, out)
    tensors["log_z"] = torch.tensor(float(log_z), dtype=DTYPE)
    return PolicyParams(tensors, activation)


def policy_forward(params: PolicyParams, features) -> PolicyOutput:
    """Run the trunk and the three heads on one feature vector or a batch of them."""
    x = torch.as_tensor(features, dtype=DTYPE)
    if x.shape[-1] != params.input_dim:
        raise ShapeMismatch(f"expected {params.input_dim} features, got {x.shape[-1]}")
    t = params.tensors
    act = ACTIVATIONS[params.activation]
    for i in range(params.n_trunk):
        x = act(F.linear(x, t[f"trunk.{i}.weight"], t[f"trunk.{i}.bias"]))
    return PolicyOutput(
        F.linear(x, t["logits.weight"], t["logits.bias"]),
        F.linear(x, t["flow.weight"], t["flow.bias"]).squeeze(-1),
        F.linear(x, t["edge.weight"], t["edge.bias"]),
    )


def encode_state(env: Environment, s: State) -> np.ndarray:
    return env.encode(s)


class TabularPolicy:
    """Per-state outputs looked up from a table; used to load exact oracle flows."""

    def __init__(
        self,
        rows: Mapping[State, tuple[np.ndarray, float, np.ndarray]],
        log_z: float,
        n_actions: int,
    ):
        self.rows = dict(rows)
        self.tensors = {"log_z": torch.tensor(float(log_z), dtype=DTYPE)}
        self.n_actions = n_actions

    @property
    def log_z(self) -> torch.Tensor:
        return self.tensors["log_z"]

    def evaluate(self, env: Environment, states: Sequence[State]) -> PolicyOutput:
        logits = np.zeros((len(states), self.n_actions))
        flows = np.zeros(len(states))
        edges = np.zeros((len(states), self.n_actions))
        for i, s in enumerate(states):
            logits[i], flows[i], edges[i] = self.rows[s]
        return PolicyOutput(
            torch.tensor(logits, dtype=DTYPE),
            torch.tensor(flows, dtype=DTYPE),
            torch.tensor(edges, dtype=DTYPE),
        )


def _as_bool_mask(allowed, n: int) -> torch.Tensor:
    if isinstance(allowed, torch.Tensor) and allowed.dtype == torch.bool:
        return allowed
    if isinstance(allowed, np.ndarray) and allowed.dtype == bool:
        return torch.from_numpy(allowed)
    mask = torch.zeros(n, dtype=torch.bool)
    idx = list(allowed)
    if idx:
        mask[idx] = True
    return mask


def masked_log_softmax(logits, allowed) -> torch.Tensor:
    """Log-softmax restricted to ``allowed``; disallowed entries are ``-inf``.

    ``allowed`` is a boolean mask broadcastable to ``logits`` or, for a single
    logit vector, a collection of allowed indices.
    """
    x = torch.as_tensor(logits, dtype=DTYPE)
    mask = _as_bool_mask(allowed, x.shape[-1])
    if not bool(mask.any(dim=-1).all()):
        raise EmptyMask("no allowed actions")
    masked = x.masked_fill(~mask, -math.inf)
    return masked - torch.logsumexp(masked, dim=-1, keepdim=True)


def sample_action(logprobs, rng: np.random.Generator, eps_uniform: float = 0.0) -> int:
    """Draw an index from ``logprobs``; with probability ``eps_uniform`` uniformly over its support."""
    lp = np.asarray(logprobs, dtype=np.float64)
    support = np.flatnonzero(lp > -np.inf)
    if eps_uniform > 0 and rng.random() < eps_uniform:
        return int(support[rng.integers(len(support))])
    cdf = np.cumsum(np.exp(lp[support]))
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return int(support[min(i, len(support) - 1)])


def sample_actions(logprobs, rngs: Sequence[np.random.Generator], eps_uniform: float = 0.0) -> np.ndarray:
    """Row-wise ``sample_action`` with one stream per row; same draws, one vectorized pass."""
    lp = np.asarray(logprobs, dtype=np.float64)
    ok = lp > -np.inf
    out = np.empty(len(lp), dtype=np.int64)
    u = np.empty(len(lp))
    greedy = np.ones(len(lp), dtype=bool)
    for r, rng in enumerate(rngs):
        if eps_uniform > 0 and rng.random() < eps_uniform:
            support = np.flatnonzero(ok[r])
            out[r] = support[rng.integers(len(support))]
            greedy[r] = False
        else:
            u[r] = rng.random()
    if greedy.any():
        probs = np.where(ok[greedy], np.exp(lp[greedy]), 0.0)
        cdf = np.cumsum(probs, axis=1)
        target = u[greedy] * cdf[:, -1]
        # first index whose cumulative mass exceeds the draw, restricted to the support
        past = (cdf > target[:, None]) & ok[greedy]
        last = ok[greedy].shape[1] - 1 - np.argmax(ok[greedy][:, ::-1], axis=1)
        idx = np.where(past.any(axis=1), np.argmax(past, axis=1), last)
        out[greedy] = idx
    return out


def backward_log_prob(env: Environment, s: State, chosen_parent: int) -> float:
    """Uniform backward policy over the parents of ``s``."""
    if s.depth == 0:
        raise NoParent("the initial state has no parent")
    n = env.n_parents(s)
    if not 0 <= chosen_parent < n:
        raise IndexError(f"parent index {chosen_parent} out of range for {n} parents")
    return -math.log(n)


LossFn = Callable[[PolicyParams], torch.Tensor]


def value_and_gradient(loss_fn: LossFn, params: PolicyParams) -> tuple[float, dict[str, torch.Tensor]]:
    p = params.clone(requires_grad=True)
    loss = loss_fn(p)
    if not torch.isfinite(loss):
        raise NonFinite(f"loss is {loss.item()}")
    names = list(p.tensors)
    grads = torch.autograd.grad(loss, [p.tensors[k] for k in names], allow_unused=True)
    out = {}
    for k, g in zip(names, grads):
        g = torch.zeros_like(p.tensors[k]) if g is None else g.detach()
        if not torch.isfinite(g).all():
            raise NonFinite(f"gradient of {k} is not finite")
        out[k] = g
    return float(loss.detach()), out


def gradient(loss_fn: LossFn, params: PolicyParams) -> dict[str, torch.Tensor]:
    return value_and_gradient(loss_fn, params)[1]


def finite_difference_gradient(
    loss_fn: LossFn, params: PolicyParams, h: float = 1e-5
) -> dict[str, torch.Tensor]:
    """Central differences, one parameter entry at a time."""
    p = params.clone()
    out = {}
    with torch.no_grad():
        for name, t in p.tensors.items():
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = float(loss_fn(p))
                flat[i] = orig - h
                down = float(loss_fn(p))
                flat[i] = orig
                gflat[i] = (up - down) / (2 * h)
            out[name] = g
    return out


def relative_errors(a: Mapping[str, torch.Tensor], b: Mapping[str, torch.Tensor], floor: float = 1e-6):
    """Per-entry ``|a - b| / max(|a|, |b|, floor)`` for matching named tensors."""
    return {
        k: (a[k] - b[k]).abs() / torch.maximum(torch.maximum(a[k].abs(), b[k].abs()), torch.tensor(floor, dtype=DTYPE))
        for k in a
    }


def gradcheck(loss_fn: LossFn, params: PolicyParams, h: float = 1e-5, floor: float = 1e-6) -> float:
    """Largest per-entry relative error between autograd and central differences.

    Central differences carry roundoff of order ``eps * |loss| / h``, so the
    denominator floor is scaled by the loss magnitude; entries smaller than
    that are compared in absolute terms.
    """
    value, grads = value_and_gradient(loss_fn, params)
    fd = finite_difference_gradient(loss_fn, params, h)
    rel = relative_errors(grads, fd, floor * max(1.0, abs(value)))
    return max(float(r.max()) if r.numel() else 0.0 for r in rel.values())


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_overrides: dict[str, float] = field(default_factory=dict)
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)

    def state_dict(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "lr_overrides": dict(self.lr_overrides),
            "step": self.step,
            "m": {k: t.tolist() for k, t in self.m.items()},
            "v": {k: t.tolist() for k, t in self.v.items()},
        }

    @classmethod
    def from_state_dict(cls, d: Mapping) -> "OptimizerState":
        return cls(
            lr=d["lr"],
            beta1=d["beta1"],
            beta2=d["beta2"],
            eps=d["eps"],
            lr_overrides=dict(d["lr_overrides"]),
            step=d["step"],
            m={k: torch.tensor(t, dtype=DTYPE) for k, t in d["m"].items()},
            v={k: torch.tensor(t, dtype=DTYPE) for k, t in d["v"].items()},
        )


def adam_step(
    opt: OptimizerState, params: PolicyParams, grads: Mapping[str, torch.Tensor]
) -> tuple[OptimizerState, PolicyParams]:
    step = opt.step + 1
    b1, b2 = opt.beta1, opt.beta2
    m, v, new = {}, {}, {}
    for k, t in params.tensors.items():
        g = grads[k]
        m[k] = b1 * opt.m.get(k, torch.zeros_like(t)) + (1 - b1) * g
        v[k] = b2 * opt.v.get(k, torch.zeros_like(t)) + (1 - b2) * g * g
        mhat = m[k] / (1 - b1**step)
        vhat = v[k] / (1 - b2**step)
        lr = opt.lr_overrides.get(k, opt.lr)
        new[k] = (t.detach() - lr * mhat / (vhat.sqrt() + opt.eps)).detach()
    state = OptimizerState(opt.lr, b1, b2, opt.eps, dict(opt.lr_overrides), step, m, v)
    return state, PolicyParams(new, params.activation)
