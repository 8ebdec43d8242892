"""Partial GFlowNet engine."""

from .env import Action, Environment, State, Trajectory
from .local_search import LocalSearchConfig, training_round
from .objectives import ObjectiveConfig
from .region import RegionConfig, RegionMask

__all__ = [
    "Action",
    "Environment",
    "LocalSearchConfig",
    "ObjectiveConfig",
    "RegionConfig",
    "RegionMask",
    "State",
    "Trajectory",
    "training_round",
]
