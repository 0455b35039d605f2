"""Regularized policy optimization with clipped MPO targets on exact tabular MDPs."""

from .env import TabularMDP, aliased_mdp, chain_mdp, load_mdp, random_mdp, sample_episode, save_mdp
from .oracle import evaluate, performance_difference, trpo_lower_bound
from .targets import ClipConfig, cmpo_target, max_tv, mpo_target, verify_theorem
from .trainer import Runner, TrainConfig, run
from .updates import UpdateConfig

__version__ = "0.1.0"

__all__ = [
    "ClipConfig", "Runner", "TabularMDP", "TrainConfig", "UpdateConfig", "aliased_mdp",
    "chain_mdp", "cmpo_target", "evaluate", "load_mdp", "max_tv", "mpo_target",
    "performance_difference", "random_mdp", "run", "sample_episode", "save_mdp",
    "trpo_lower_bound", "verify_theorem",
]
