from .mlp import Mlp, Adam
from .hierarchical import HierarchicalPolicy, gumbel_softmax_sample, softmax, log_softmax
from .ppo import (
    TrainConfig, TrajectoryBatch, Critics, Learner, TrainingDiverged, gae, combined_advantage,
    anneal_temperature, ppo_update, surrogate, value_loss, online_objective, online_adapt,
)

__all__ = [
    "Mlp", "Adam", "HierarchicalPolicy", "gumbel_softmax_sample", "softmax", "log_softmax",
    "TrainConfig", "TrajectoryBatch", "Critics", "Learner", "TrainingDiverged", "gae",
    "combined_advantage", "anneal_temperature", "ppo_update", "surrogate", "value_loss",
    "online_objective", "online_adapt",
]
