"""Sequential-construction environments with factored actions.

Every action is a pair ``(astar, aprime)``: ``astar`` indexes the
state-agnostic component shared by all states (a k-bit word, a nucleotide),
``aprime`` the state-dependent slot it is applied to (a position, a string
end). Region masks only ever filter ``astar``.

Actions are flattened to ``astar * n_aprime + aprime`` wherever a policy
needs a fixed-size index space.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Hashable, NamedTuple, Sequence

import numpy as np

from .errors import IllegalAction, InvalidTrajectory, NoParent, NotTerminal


class Action(NamedTuple):
    astar: int
    aprime: int


@dataclass(frozen=True)
class State:
    payload: Hashable
    depth: int


@dataclass(frozen=True)
class Trajectory:
    states: tuple[State, ...]
    actions: tuple[Action, ...]
    reward: float

    @property
    def terminal(self) -> State:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.actions)


class Environment(ABC):
    """Deterministic construction DAG rooted at ``s0``.

    Subclasses implement the payload-level hooks; the public methods add the
    precondition checks (legal action, non-root parent query, terminal reward).
    Encodings are per-slot one-hot over ``alphabet_size`` symbols plus an
    "unfilled" symbol, so every environment has to describe its states as
    ``n_slots`` integer slots with ``-1`` for unfilled.
    """

    n_astar: int
    n_aprime: int
    max_depth: int
    n_slots: int
    alphabet_size: int

    @property
    def n_actions(self) -> int:
        return self.n_astar * self.n_aprime

    @property
    def feature_dim(self) -> int:
        return self.n_slots * (self.alphabet_size + 1)

    @property
    @abstractmethod
    def s0(self) -> State: ...

    @abstractmethod
    def valid_actions(self, s: State) -> list[Action]:
        """Legal actions at ``s`` ordered by flat index; empty iff terminal."""

    @abstractmethod
    def _step(self, s: State, a: Action) -> State: ...

    @abstractmethod
    def _parents(self, s: State) -> list[tuple[State, Action]]: ...

    @abstractmethod
    def _reward(self, x: State) -> float: ...

    @abstractmethod
    def is_terminal(self, s: State) -> bool: ...

    @abstractmethod
    def slots(self, s: State) -> Sequence[int]: ...

    @abstractmethod
    def render(self, s: State) -> str:
        """Canonical string form, used for distinctness and CSV output."""

    @abstractmethod
    def signature(self) -> dict: ...

    def is_valid(self, s: State, a: Action) -> bool:
        return a in self.valid_actions(s)

    def apply(self, s: State, a: Action) -> State:
        if not self.is_valid(s, a):
            raise IllegalAction(f"{a} is not legal at {self.render(s)!r}")
        return self._step(s, a)

    def parents(self, s: State) -> list[tuple[State, Action]]:
        if s.depth == 0:
            raise NoParent("the initial state has no parent")
        return self._parents(s)

    def n_parents(self, s: State) -> int:
        return len(self.parents(s))

    def reward(self, x: State) -> float:
        if not self.is_terminal(x):
            raise NotTerminal(f"{self.render(x)!r} is not terminal")
        return self._reward(x)

    def rewards(self, xs: Sequence[State]) -> np.ndarray:
        return np.array([self.reward(x) for x in xs], dtype=np.float64)

    def action_index(self, a: Action) -> int:
        return a.astar * self.n_aprime + a.aprime

    def index_action(self, i: int) -> Action:
        return Action(*divmod(int(i), self.n_aprime))

    def action_mask(self, s: State) -> np.ndarray:
        mask = np.zeros(self.n_actions, dtype=bool)
        for a in self.valid_actions(s):
            mask[a.astar * self.n_aprime + a.aprime] = True
        return mask

    def action_masks(self, states: Sequence[State]) -> np.ndarray:
        """Row-stacked ``action_mask`` for a batch of states."""
        if not states:
            return np.zeros((0, self.n_actions), dtype=bool)
        return np.stack([self.action_mask(s) for s in states])

    def encode(self, s: State) -> np.ndarray:
        return self.encode_batch([s])[0]

    def encode_batch(self, states: Sequence[State]) -> np.ndarray:
        width = self.alphabet_size + 1
        idx = np.array([list(self.slots(s)) for s in states], dtype=np.int64)
        idx = idx.reshape(len(states), self.n_slots)
        idx = np.where(idx < 0, self.alphabet_size, idx)
        out = np.zeros((len(states), self.n_slots * width), dtype=np.float64)
        cols = idx + np.arange(self.n_slots) * width
        out[np.arange(len(states))[:, None], cols] = 1.0
        return out


def check_trajectory(env: Environment, tau: Trajectory) -> None:
    """Raise InvalidTrajectory unless ``tau`` is a legal s0-to-terminal path."""
    if len(tau.states) != len(tau.actions) + 1:
        raise InvalidTrajectory("len(actions) must equal len(states) - 1")
    if tau.states[0] != env.s0:
        raise InvalidTrajectory("trajectory does not start at s0")
    if not env.is_terminal(tau.states[-1]):
        raise InvalidTrajectory("trajectory does not end at a terminal state")
    for i, (s, a) in enumerate(zip(tau.states, tau.actions)):
        if s.depth != i:
            raise InvalidTrajectory(f"state {i} has depth {s.depth}")
        if not env.is_valid(s, a):
            raise InvalidTrajectory(f"action {i} {a} is illegal")
        if env._step(s, a) != tau.states[i + 1]:
            raise InvalidTrajectory(f"transition {i} does not reach the next state")
    if not tau.reward > 0:
        raise InvalidTrajectory("terminal reward must be positive")


def trajectory_from_actions(env: Environment, actions: Sequence[Action]) -> Trajectory:
    states = [env.s0]
    for a in actions:
        states.append(env.apply(states[-1], a))
    return Trajectory(tuple(states), tuple(actions), env.reward(states[-1]))
