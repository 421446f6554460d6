"""From-scratch multi-agent PPO: numpy networks, losses and the CTDE trainer."""

from .nets import Adam, GaussianPolicy, Mlp
from .ppo import compute_gae, critic_loss, ppo_actor_loss
from .trainer import MappoTrainer, PolicyParams, TrainedPolicy, TrainerConfig, train

__all__ = [
    "Adam",
    "GaussianPolicy",
    "MappoTrainer",
    "Mlp",
    "PolicyParams",
    "TrainedPolicy",
    "TrainerConfig",
    "compute_gae",
    "critic_loss",
    "ppo_actor_loss",
    "train",
]
