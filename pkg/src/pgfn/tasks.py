"""Concrete environments: k-bit sequence filling, prepend/append sequences, toy trees."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from rapidfuzz.distance import Levenshtein
from rapidfuzz.process import cdist

from .env import Action, Environment, State
from .errors import BadSpec, Exhausted, MissingReward, NotTerminal

DEFAULT_BASIS = ("10100101", "11111111", "11110000", "00001111", "00111100")


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insert, delete, substitute)."""
    return Levenshtein.distance(a, b)


def default_mode_distance(n: int) -> int:
    # keeps the 28/120 threshold-to-length ratio of the full-size task
    return int(math.floor(28 * n / 120 + 0.5))


@dataclass
class BitSeqSpec:
    n: int
    k: int
    modes: list[str]
    mode_distance: int | None = None
    basis: list[str] | None = None

    def __post_init__(self):
        if self.mode_distance is None:
            self.mode_distance = default_mode_distance(self.n)


def bitseq_reward(spec: BitSeqSpec, x: str) -> float:
    """``max_m exp(-lev(x, m))`` over the task's modes."""
    return math.exp(-min(levenshtein(x, m) for m in spec.modes))


class BitSeqEnv(Environment):
    """Fill ``n/k`` positions with k-bit words, one (word, position) per step."""

    def __init__(self, spec: BitSeqSpec):
        self.spec = spec
        self.k = spec.k
        self.n_astar = 2**spec.k
        self.n_aprime = spec.n // spec.k
        self.max_depth = self.n_aprime
        self.n_slots = self.n_aprime
        self.alphabet_size = self.n_astar
        self._s0 = State((-1,) * self.n_aprime, 0)
        self._words = [format(w, f"0{spec.k}b") for w in range(self.n_astar)]

    @property
    def s0(self) -> State:
        return self._s0

    def is_terminal(self, s: State) -> bool:
        return s.depth == self.max_depth

    def valid_actions(self, s: State) -> list[Action]:
        free = [p for p, w in enumerate(s.payload) if w < 0]
        return [Action(w, p) for w in range(self.n_astar) for p in free]

    def is_valid(self, s: State, a: Action) -> bool:
        return (
            0 <= a.astar < self.n_astar
            and 0 <= a.aprime < self.n_aprime
            and s.payload[a.aprime] < 0
        )

    def _step(self, s: State, a: Action) -> State:
        board = list(s.payload)
        board[a.aprime] = a.astar
        return State(tuple(board), s.depth + 1)

    def _parents(self, s: State) -> list[tuple[State, Action]]:
        out = []
        for p, w in enumerate(s.payload):
            if w >= 0:
                board = list(s.payload)
                board[p] = -1
                out.append((State(tuple(board), s.depth - 1), Action(w, p)))
        return sorted(out, key=lambda pa: self.action_index(pa[1]))

    def n_parents(self, s: State) -> int:
        return s.depth

    def action_mask(self, s: State) -> np.ndarray:
        free = np.array(s.payload) < 0
        return np.tile(free, self.n_astar)

    def action_masks(self, states: Sequence[State]) -> np.ndarray:
        if not states:
            return np.zeros((0, self.n_actions), dtype=bool)
        free = np.array([s.payload for s in states]) < 0
        return np.tile(free, (1, self.n_astar))

    def slots(self, s: State) -> Sequence[int]:
        return s.payload

    def render(self, s: State) -> str:
        return "".join(self._words[w] if w >= 0 else "." * self.k for w in s.payload)

    def _reward(self, x: State) -> float:
        return bitseq_reward(self.spec, self.render(x))

    def rewards(self, xs: Sequence[State]) -> np.ndarray:
        for x in xs:
            if not self.is_terminal(x):
                raise NotTerminal(f"{self.render(x)!r} is not terminal")
        return np.exp(-self.min_distances([self.render(x) for x in xs]))

    def min_distances(self, strings: Sequence[str]) -> np.ndarray:
        if not strings:
            return np.zeros(0)
        d = cdist(list(strings), self.spec.modes, scorer=Levenshtein.distance)
        return d.min(axis=1).astype(np.float64)

    def signature(self) -> dict:
        return {"task": "bitseq", "n": self.spec.n, "k": self.k, "modes": list(self.spec.modes)}


def make_bitseq(spec: BitSeqSpec) -> BitSeqEnv:
    if spec.k < 1 or spec.n < 1 or spec.n % spec.k:
        raise BadSpec(f"k={spec.k} must divide n={spec.n}")
    if not spec.modes:
        raise BadSpec("at least one mode is required")
    for m in spec.modes:
        if len(m) != spec.n or set(m) - {"0", "1"}:
            raise BadSpec(f"mode {m!r} is not a length-{spec.n} bit string")
    return BitSeqEnv(spec)


def synth_modes(
    basis: Sequence[str],
    count: int,
    n: int,
    rng: np.random.Generator,
    max_tries: int = 10_000,
) -> list[str]:
    """Draw ``count`` distinct modes, each a concatenation of basis strings."""
    widths = {len(b) for b in basis}
    if len(widths) != 1 or n % next(iter(widths)):
        raise BadSpec("basis strings must share one length that divides n")
    blocks = n // widths.pop()
    if count > len(set(basis)) ** blocks:
        raise Exhausted(f"only {len(set(basis)) ** blocks} distinct modes exist")
    modes: list[str] = []
    seen: set[str] = set()
    tries = 0
    while len(modes) < count:
        tries += 1
        if tries > max_tries:
            raise Exhausted(f"gave up after {max_tries} draws")
        m = "".join(basis[i] for i in rng.integers(len(basis), size=blocks))
        if m not in seen:
            seen.add(m)
            modes.append(m)
    return modes


def load_modes(path: str | Path) -> list[str]:
    lines = Path(path).read_text().splitlines()
    return [ln.strip() for ln in lines if ln.strip()]


@dataclass
class PamdpSpec:
    length: int = 14
    alphabet: str = "ACGU"
    reward_table: Mapping[str, float] | None = None
    default_reward: float | None = None
    reward_fn: Callable[[str], float] | None = field(default=None, repr=False)


class PamdpEnv(Environment):
    """Grow a string by prepending (aprime=0) or appending (aprime=1) a token.

    On strings made of a single repeated token ``t`` (including the empty
    string) prepending and appending ``t`` give the same child; only the
    append is kept so every edge of the DAG has exactly one action.
    """

    PREPEND = 0
    APPEND = 1

    def __init__(self, spec: PamdpSpec):
        self.spec = spec
        self.alphabet = spec.alphabet
        self.n_astar = len(spec.alphabet)
        self.n_aprime = 2
        self.max_depth = spec.length
        self.n_slots = spec.length
        self.alphabet_size = self.n_astar
        self._tok = {c: i for i, c in enumerate(spec.alphabet)}
        self._s0 = State("", 0)

    @property
    def s0(self) -> State:
        return self._s0

    def is_terminal(self, s: State) -> bool:
        return s.depth == self.max_depth

    def _prepend_ok(self, s: str, t: int) -> bool:
        c = self.alphabet[t]
        return any(ch != c for ch in s)

    def valid_actions(self, s: State) -> list[Action]:
        if s.depth >= self.max_depth:
            return []
        out = []
        for t in range(self.n_astar):
            if self._prepend_ok(s.payload, t):
                out.append(Action(t, self.PREPEND))
            out.append(Action(t, self.APPEND))
        return out

    def is_valid(self, s: State, a: Action) -> bool:
        if s.depth >= self.max_depth or not 0 <= a.astar < self.n_astar:
            return False
        if a.aprime == self.APPEND:
            return True
        return a.aprime == self.PREPEND and self._prepend_ok(s.payload, a.astar)

    def _step(self, s: State, a: Action) -> State:
        c = self.alphabet[a.astar]
        text = c + s.payload if a.aprime == self.PREPEND else s.payload + c
        return State(text, s.depth + 1)

    def _parents(self, s: State) -> list[tuple[State, Action]]:
        x = s.payload
        out = []
        if x[1:] != x[:-1]:
            out.append((State(x[1:], s.depth - 1), Action(self._tok[x[0]], self.PREPEND)))
        out.append((State(x[:-1], s.depth - 1), Action(self._tok[x[-1]], self.APPEND)))
        return out

    def slots(self, s: State) -> Sequence[int]:
        return [self._tok[c] for c in s.payload] + [-1] * (self.max_depth - s.depth)

    def render(self, s: State) -> str:
        return s.payload

    def _reward(self, x: State) -> float:
        spec = self.spec
        if spec.reward_fn is not None:
            return float(spec.reward_fn(x.payload))
        if spec.reward_table is not None and x.payload in spec.reward_table:
            return float(spec.reward_table[x.payload])
        if spec.default_reward is not None:
            return float(spec.default_reward)
        raise MissingReward(x.payload)

    def signature(self) -> dict:
        return {"task": "pamdp", "length": self.spec.length, "alphabet": self.alphabet}


def make_pamdp(spec: PamdpSpec, coverage_limit: int = 1 << 20) -> PamdpEnv:
    """Build the environment, checking reward coverage when it is enumerable."""
    if spec.length < 1 or len(set(spec.alphabet)) != len(spec.alphabet):
        raise BadSpec("length must be >= 1 and the alphabet distinct")
    if spec.default_reward is not None and not spec.default_reward > 0:
        raise BadSpec("default_reward must be positive")
    table = spec.reward_table or {}
    for seq, r in table.items():
        if not r > 0:
            raise BadSpec(f"reward for {seq!r} must be positive")
    if spec.reward_fn is None and spec.default_reward is None:
        n_terminals = len(spec.alphabet) ** spec.length
        if not table:
            raise MissingReward("no reward table, reward function or default floor")
        if n_terminals <= coverage_limit and len(table) < n_terminals:
            from itertools import product

            for chars in product(spec.alphabet, repeat=spec.length):
                seq = "".join(chars)
                if seq not in table:
                    raise MissingReward(seq)
    return PamdpEnv(spec)


def load_reward_table(path: str | Path) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"sequence", "reward"} - set(reader.fieldnames):
            raise BadSpec(f"{path}: expected columns sequence,reward")
        return {row["sequence"].strip(): float(row["reward"]) for row in reader}


def motif_reward(target: str, temperature: float = 1.0) -> Callable[[str], float]:
    """Surrogate reward ``exp(-lev(x, target) / temperature)``."""

    def fn(x: str) -> float:
        return math.exp(-levenshtein(x, target) / temperature)

    return fn


TREE_REWARDS: dict[str, Callable[[tuple[int, ...], int], float]] = {
    "uniform": lambda path, b: 1.0,
    "sum": lambda path, b: 1.0 + sum(path),
    "index": lambda path, b: 1.0 + sum(c * b**i for i, c in enumerate(reversed(path))),
}


@dataclass
class ToyTreeSpec:
    branching: int = 2
    depth: int = 3
    reward_fn: str = "sum"
    # "shared": astar = child index at every depth (n_astar = branching);
    # "per_depth": astar = depth * branching + child (n_astar = branching * depth)
    labels: str = "shared"


class ToyTreeEnv(Environment):
    def __init__(self, spec: ToyTreeSpec):
        self.spec = spec
        self.branching = spec.branching
        self.per_depth = spec.labels == "per_depth"
        self.n_astar = spec.branching * (spec.depth if self.per_depth else 1)
        self.n_aprime = 1
        self.max_depth = spec.depth
        self.n_slots = spec.depth
        self.alphabet_size = spec.branching
        self._reward_fn = TREE_REWARDS[spec.reward_fn]
        self._s0 = State((), 0)

    @property
    def s0(self) -> State:
        return self._s0

    def label(self, depth: int, child: int) -> int:
        return depth * self.branching + child if self.per_depth else child

    def is_terminal(self, s: State) -> bool:
        return s.depth == self.max_depth

    def valid_actions(self, s: State) -> list[Action]:
        if s.depth >= self.max_depth:
            return []
        return [Action(self.label(s.depth, c), 0) for c in range(self.branching)]

    def is_valid(self, s: State, a: Action) -> bool:
        if s.depth >= self.max_depth or a.aprime != 0:
            return False
        child = a.astar - (s.depth * self.branching if self.per_depth else 0)
        return 0 <= child < self.branching

    def _step(self, s: State, a: Action) -> State:
        child = a.astar - (s.depth * self.branching if self.per_depth else 0)
        return State(s.payload + (child,), s.depth + 1)

    def _parents(self, s: State) -> list[tuple[State, Action]]:
        parent = State(s.payload[:-1], s.depth - 1)
        return [(parent, Action(self.label(parent.depth, s.payload[-1]), 0))]

    def n_parents(self, s: State) -> int:
        return 1

    def slots(self, s: State) -> Sequence[int]:
        return s.payload + (-1,) * (self.max_depth - s.depth)

    def render(self, s: State) -> str:
        sep = "" if self.branching <= 10 else ","
        return sep.join(str(c) for c in s.payload)

    def _reward(self, x: State) -> float:
        return float(self._reward_fn(x.payload, self.branching))

    def signature(self) -> dict:
        return {
            "task": "toytree",
            "branching": self.branching,
            "depth": self.max_depth,
            "reward_fn": self.spec.reward_fn,
            "labels": self.spec.labels,
        }


def make_toytree(spec: ToyTreeSpec) -> ToyTreeEnv:
    if spec.branching < 2 or spec.depth < 1:
        raise BadSpec("toy trees need branching >= 2 and depth >= 1")
    if spec.reward_fn not in TREE_REWARDS:
        raise BadSpec(f"unknown reward_fn {spec.reward_fn!r}; choose from {sorted(TREE_REWARDS)}")
    if spec.labels not in ("shared", "per_depth"):
        raise BadSpec(f"unknown labels {spec.labels!r}")
    return ToyTreeEnv(spec)
