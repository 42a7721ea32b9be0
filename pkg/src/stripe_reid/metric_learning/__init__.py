"""Distances, metric-learning losses with analytic gradients, and the toy trainer."""

from .distances import euclidean_distance, pairwise_distances, scaled_tanh
from .losses import BatchSpec, local_distance_dp, trihard_loss, triplet_loss
from .model import LossConfig, ModelConfig, init_params
from .training import TrainConfig, train_toy

__all__ = [
    "BatchSpec",
    "LossConfig",
    "ModelConfig",
    "TrainConfig",
    "euclidean_distance",
    "init_params",
    "local_distance_dp",
    "pairwise_distances",
    "scaled_tanh",
    "train_toy",
    "trihard_loss",
    "triplet_loss",
]
