"""Soft actor-critic with an adaptively weighted action-space adversary."""

from .adapt import AdaptState, EpsilonController, action_distance, mix_actions, update_coefficient
from .env import EnvParams
from .sac import A2PSAC, AgentBundle, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "A2PSAC", "AgentBundle", "TrainConfig", "train", "EnvParams",
    "AdaptState", "EpsilonController", "action_distance", "mix_actions", "update_coefficient",
]
