"""Partial regions: masks over the state-agnostic action components.

A region is everything reachable from ``s0`` using only actions whose
``astar`` is marked valid. ``expected_ratio`` and ``overlap_stats`` give the
closed-form size and overlap expectations used to reason about how much of
the space a region covers and how much two successive regions share.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .env import Action, Environment, State
from .errors import BadDistribution, DeadEnd, EmptySpace

SELECTION_MODES = ("bernoulli", "proportional")


@dataclass(frozen=True)
class RegionConfig:
    p: float = 1.0
    selection_mode: str = "proportional"
    alpha1: float = 0.5
    alpha2: float = 0.5

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError(f"region p must lie in (0, 1], got {self.p}")
        if self.selection_mode not in SELECTION_MODES:
            raise ValueError(f"selection_mode must be one of {SELECTION_MODES}")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("alpha1 and alpha2 must be non-negative")


@dataclass(frozen=True)
class RegionMask:
    valid: tuple[bool, ...]
    id: int = 0
    _array: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not any(self.valid):
            raise ValueError("a region mask needs at least one valid astar")
        arr = np.array(self.valid, dtype=bool)
        arr.flags.writeable = False
        object.__setattr__(self, "_array", arr)

    @classmethod
    def full(cls, n_astar: int, id: int = 0) -> "RegionMask":
        return cls((True,) * n_astar, id)

    @classmethod
    def from_indices(cls, n_astar: int, indices: Iterable[int], id: int = 0) -> "RegionMask":
        valid = [False] * n_astar
        for i in indices:
            valid[int(i)] = True
        return cls(tuple(valid), id)

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def indices(self) -> list[int]:
        return [i for i, v in enumerate(self.valid) if v]

    @property
    def popcount(self) -> int:
        return sum(self.valid)

    @property
    def is_full(self) -> bool:
        return all(self.valid)

    def allows(self, a: Action) -> bool:
        return self.valid[a.astar]

    def action_mask(self, n_aprime: int) -> np.ndarray:
        """Flat mask over ``astar * n_aprime + aprime`` action indices."""
        return np.repeat(self._array, n_aprime)


def sample_bernoulli_region(
    n_astar: int, cfg: RegionConfig, rng: np.random.Generator, id: int = 0
) -> RegionMask:
    """Each astar valid independently with probability ``cfg.p``; redrawn until nonempty."""
    if n_astar < 1:
        raise ValueError("n_astar must be >= 1")
    while True:
        valid = rng.random(n_astar) < cfg.p
        if valid.any():
            return RegionMask(tuple(bool(v) for v in valid), id)


def restrict(mask: RegionMask, actions: Sequence[Action]) -> list[Action]:
    kept = [a for a in actions if mask.valid[a.astar]]
    if actions and not kept:
        raise DeadEnd("region mask removes every available action")
    return kept


def region_contains(
    env: Environment, mask: RegionMask, s: State, memo: dict[State, bool] | None = None
) -> bool:
    """Whether ``s`` is reachable from ``s0`` through mask-valid actions only."""
    if memo is None:
        memo = {}

    def visit(state: State) -> bool:
        if state.depth == 0:
            return True
        hit = memo.get(state)
        if hit is None:
            hit = any(mask.valid[a.astar] and visit(p) for p, a in env.parents(state))
            memo[state] = hit
        return hit

    return visit(s)


def expected_ratio(p: float, sizes_by_depth: Sequence[int]) -> float:
    """Expected ``|R| / |S|`` given the per-depth sizes ``|S_l|``."""
    sizes = np.asarray(sizes_by_depth, dtype=np.float64)
    total = sizes.sum()
    if total <= 0:
        raise EmptySpace("all depth sizes are zero")
    weights = p ** np.arange(len(sizes), dtype=np.float64)
    return float((weights * sizes).sum() / total)


@dataclass(frozen=True)
class OverlapStats:
    expected_common: float
    expected_intersection: float
    expected_union: float
    indicator: float


def _check_distribution(q: np.ndarray, n: int, name: str) -> None:
    if q.shape != (n,) or np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
        raise BadDistribution(f"{name} must be a length-{n} probability vector")


def overlap_stats(
    p1: Sequence[float],
    p2: Sequence[float],
    p: float,
    n: int,
    max_l: int,
    cfg: RegionConfig,
    literal_union: bool = False,
) -> OverlapStats:
    """Expected overlap of two proportionally selected regions.

    ``p1``/``p2`` are the selection distributions in force for the current and
    next region, ``p`` the valid probability, ``n`` the number of astar
    components. Depth sums run over ``l = 1..max_l``.

    The union defaults to inclusion-exclusion, evaluating the nested
    intersection term at the outer depth. ``literal_union=True`` instead keeps
    the inner term as a full sum over depths, i.e. the same subtracted
    quantity at every outer ``l``.
    """
    q1 = np.asarray(p1, dtype=np.float64)
    q2 = np.asarray(p2, dtype=np.float64)
    _check_distribution(q1, n, "p1")
    _check_distribution(q2, n, "p2")
    if max_l < 1:
        raise ValueError("max_l must be >= 1")

    c = float(np.dot(q1, q2))
    ls = np.arange(1, max_l + 1, dtype=np.float64)
    common = c * n**2 * p**2
    inter_terms = c**ls * float(n) ** (2 * ls) * p ** (2 * ls)
    intersection = float(inter_terms.sum())
    if literal_union:
        inner = c**ls * float(n) ** ls * p ** (2 * ls)
        union = float((float(n) ** ls * (2 * p**ls - inner.sum())).sum())
    else:
        union = float((float(n) ** ls * (2 * p**ls - c**ls * float(n) ** ls * p ** (2 * ls))).sum())
    size = float((float(n) ** ls * p**ls).sum())
    indicator = cfg.alpha1 * intersection / size + cfg.alpha2 * union / size
    return OverlapStats(common, intersection, union, indicator)
