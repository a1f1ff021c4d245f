"""Community recovery and interaction-probability estimation from gossip
trajectories with stubborn agents."""

from .graph_model import (
    BlockGossipModel,
    CommunityAssignment,
    GossipNetwork,
    InteractionMatrix,
    ModelError,
)
from .dynamics import simulate, build_edge_sampler
from .oracle import mean_matrices, stationary_mean_closed_form, sample_complexity_t0
from .estimation import JointEstimator, run_trajectory, accuracy

__all__ = [
    "BlockGossipModel",
    "CommunityAssignment",
    "GossipNetwork",
    "InteractionMatrix",
    "ModelError",
    "simulate",
    "build_edge_sampler",
    "mean_matrices",
    "stationary_mean_closed_form",
    "sample_complexity_t0",
    "JointEstimator",
    "run_trajectory",
    "accuracy",
]

__version__ = "0.1.0"
