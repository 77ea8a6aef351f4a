"""From-scratch numerical reinforcement learning (NumPy only)."""

from .agents import AGENTS, BaseAgent, DQNAgent, PPOAgent, QLearningAgent, TrainingStats, TrainingTask
from .dqn import dqn_train_step, epsilon
from .mlp import Mlp, log_softmax, softmax
from .optim import Adam, adam_step
from .ppo import clipped_surrogate, gae, policy_loss, ppo_update
from .qtable import QTable, qtable_update, sweep_q_learning
from .replay import ReplayBuffer
from .trainers import TRAINERS, TrainerSpec, register_trainer, train

__all__ = [
    "AGENTS",
    "Adam",
    "BaseAgent",
    "DQNAgent",
    "Mlp",
    "PPOAgent",
    "QLearningAgent",
    "QTable",
    "ReplayBuffer",
    "TRAINERS",
    "TrainerSpec",
    "TrainingStats",
    "TrainingTask",
    "adam_step",
    "clipped_surrogate",
    "dqn_train_step",
    "epsilon",
    "gae",
    "log_softmax",
    "policy_loss",
    "ppo_update",
    "qtable_update",
    "register_trainer",
    "softmax",
    "sweep_q_learning",
    "train",
]
