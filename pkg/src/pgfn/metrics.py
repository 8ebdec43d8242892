"""Run metrics: cumulative mode discovery and top-k reward of distinct terminals."""

from __future__ import annotations

import heapq
from typing import Iterable, Sequence

import numpy as np
from rapidfuzz.distance import Levenshtein
from rapidfuzz.process import cdist

from .env import Environment, Trajectory


def count_modes_bitseq(samples: Iterable[str], modes: Sequence[str], d: int) -> int:
    """Number of modes within edit distance ``< d`` of at least one sample."""
    samples = list(dict.fromkeys(samples))
    if not samples or not modes or d <= 0:
        return 0
    dist = cdist(samples, list(modes), scorer=Levenshtein.distance)
    return int((dist < d).any(axis=0).sum())


def r_topk(rewards: Iterable[float], k: int) -> float:
    """Mean of the ``k`` largest rewards (of all of them when fewer than ``k``)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    top = heapq.nlargest(k, rewards)
    return float(np.mean(top)) if top else 0.0


class TopK:
    """Distinct terminals seen so far, keyed by their rendered string."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.seen: dict[str, float] = {}
        self._heap: list[float] = []

    def add(self, key: str, reward: float) -> None:
        if key in self.seen:
            return
        self.seen[key] = reward
        if len(self._heap) < self.k:
            heapq.heappush(self._heap, reward)
        elif reward > self._heap[0]:
            heapq.heapreplace(self._heap, reward)

    def value(self) -> float:
        return float(np.mean(self._heap)) if self._heap else 0.0


class BitSeqModes:
    """Modes of a bit-sequence task, each counted the first time any sample comes within ``d``."""

    def __init__(self, modes: Sequence[str], d: int, k: int = 100):
        self.modes = list(modes)
        self.d = d
        self.found = np.zeros(len(self.modes), dtype=bool)
        self.top = TopK(k)

    @property
    def modes_total(self) -> int:
        return int(self.found.sum())

    def observe(self, env: Environment, batch: Sequence[Trajectory]) -> int:
        fresh = []
        for tau in batch:
            key = env.render(tau.terminal)
            if key not in self.top.seen:
                fresh.append(key)
            self.top.add(key, tau.reward)
        before = self.modes_total
        if fresh and self.d > 0 and not self.found.all():
            dist = cdist(fresh, self.modes, scorer=Levenshtein.distance)
            self.found |= (dist < self.d).any(axis=0)
        return self.modes_total - before


class ThresholdModes:
    """Distinct terminals with reward above ``threshold`` that sit at least ``separation`` edits from earlier modes."""

    def __init__(self, threshold: float, separation: int = 1, k: int = 100):
        self.threshold = threshold
        self.separation = separation
        self.modes: list[str] = []
        self.top = TopK(k)

    @property
    def modes_total(self) -> int:
        return len(self.modes)

    def observe(self, env: Environment, batch: Sequence[Trajectory]) -> int:
        before = len(self.modes)
        for tau in batch:
            key = env.render(tau.terminal)
            if key in self.top.seen:
                continue
            self.top.add(key, tau.reward)
            if tau.reward <= self.threshold:
                continue
            if all(Levenshtein.distance(key, m) >= self.separation for m in self.modes):
                self.modes.append(key)
        return len(self.modes) - before
