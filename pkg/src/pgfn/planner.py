"""Region planner: per-astar reward scores, switch decisions, proportional selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .env import Trajectory
from .region import RegionConfig, RegionMask, sample_bernoulli_region

SCORE_INIT = 0.01
AVG_SOURCES = ("diff", "his")


@dataclass
class ScoreTable:
    hr: np.ndarray
    cnt: np.ndarray

    @classmethod
    def fresh(cls, n_astar: int) -> "ScoreTable":
        return cls(np.full(n_astar, SCORE_INIT), np.full(n_astar, SCORE_INIT))

    def scores(self) -> np.ndarray:
        return (self.hr + 1.0) / self.cnt

    def ranking(self) -> np.ndarray:
        """astar indices from highest to lowest score (stable on ties)."""
        return np.argsort(-self.scores(), kind="stable")

    def copy(self) -> "ScoreTable":
        return ScoreTable(self.hr.copy(), self.cnt.copy())


def update_scores(table: ScoreTable, batch: Iterable[Trajectory]) -> ScoreTable:
    """Credit every astar occurrence with its trajectory's reward."""
    out = table.copy()
    for tau in batch:
        for a in tau.actions:
            out.hr[a.astar] += tau.reward
            out.cnt[a.astar] += 1.0
    return out


def action_distribution(table: ScoreTable) -> np.ndarray:
    s = table.scores()
    return s / s.sum()


def select_region(
    table: ScoreTable, cfg: RegionConfig, rng: np.random.Generator, id: int = 0
) -> RegionMask:
    """Draw ``round(p * n)`` distinct astar indices, weighted by score, without replacement."""
    n = len(table.hr)
    draws = max(1, min(n, int(math.floor(cfg.p * n + 0.5))))
    if draws == n:
        return RegionMask.full(n, id)
    picked = rng.choice(n, size=draws, replace=False, p=action_distribution(table))
    return RegionMask.from_indices(n, picked, id)


@dataclass
class DecisionState:
    min_steps: int
    avg_source: str = "diff"
    step: int = 0
    iter: int = 0
    his: list[int] = field(default_factory=list)
    diff: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.avg_source not in AVG_SOURCES:
            raise ValueError(f"avg_source must be one of {AVG_SOURCES}")

    def avg(self) -> float:
        source = self.diff if self.avg_source == "diff" else self.his
        return float(np.mean(source)) if source else 0.0


def observe_iteration(ds: DecisionState, new_modes: int) -> DecisionState:
    if new_modes < 0:
        raise ValueError("new_modes must be >= 0")
    his = ds.his + [int(new_modes)]
    delta = his[-1] - his[-2] if len(his) > 1 else his[-1]
    return replace(ds, his=his, diff=ds.diff + [delta], iter=ds.iter + 1, step=ds.step + 1)


def decide(step: int, min_steps: int, current: float, previous: float, avg: float) -> bool:
    """Leave the region unless it is still clearly productive."""
    if step < min_steps:
        return False
    if current > avg or current > previous:
        return False
    if current + previous > 2 * avg:
        return False
    return True


def should_switch(ds: DecisionState) -> bool:
    if len(ds.diff) < 2:
        return False
    return decide(ds.step, ds.min_steps, ds.diff[-1], ds.diff[-2], ds.avg())


class Planner:
    """Owns the score table, the decision history and the current region."""

    def __init__(self, n_astar: int, cfg: RegionConfig, min_steps: int, avg_source: str = "diff"):
        self.cfg = cfg
        self.table = ScoreTable.fresh(n_astar)
        self.decision = DecisionState(min_steps=min_steps, avg_source=avg_source)
        self.region: RegionMask | None = None
        self.next_id = 0

    def choose(self, rng: np.random.Generator) -> RegionMask:
        """Pick a fresh region and reset the in-region step counter."""
        if self.cfg.selection_mode == "bernoulli":
            mask = sample_bernoulli_region(len(self.table.hr), self.cfg, rng, self.next_id)
        else:
            mask = select_region(self.table, self.cfg, rng, self.next_id)
        self.next_id += 1
        self.region = mask
        self.decision = replace(self.decision, step=0)
        return mask

    def update(self, batch: list[Trajectory], new_modes: int, rng_factory) -> bool:
        """Score update, history update, then switch if the decision module says so.

        ``rng_factory`` is only called when a new region is actually drawn.
        """
        self.table = update_scores(self.table, batch)
        self.decision = observe_iteration(self.decision, new_modes)
        if should_switch(self.decision):
            self.choose(rng_factory())
            return True
        return False

    def state_dict(self) -> dict:
        d = self.decision
        return {
            "hr": self.table.hr.tolist(),
            "cnt": self.table.cnt.tolist(),
            "his": list(d.his),
            "diff": list(d.diff),
            "step": d.step,
            "iter": d.iter,
            "min_steps": d.min_steps,
            "avg_source": d.avg_source,
            "region": list(self.region.valid) if self.region else None,
            "region_id": self.region.id if self.region else None,
            "next_id": self.next_id,
        }

    def load_state_dict(self, state: dict) -> None:
        self.table = ScoreTable(np.array(state["hr"], dtype=np.float64), np.array(state["cnt"], dtype=np.float64))
        self.decision = DecisionState(
            min_steps=state["min_steps"],
            avg_source=state["avg_source"],
            step=state["step"],
            iter=state["iter"],
            his=list(state["his"]),
            diff=list(state["diff"]),
        )
        if state["region"] is not None:
            self.region = RegionMask(tuple(state["region"]), state["region_id"])
        self.next_id = state["next_id"]
