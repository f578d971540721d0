"""Handover policies: greedy heuristics, tabular Q-learning, Nash-DQN and Nash-SAC."""

from .controllers import (Controller, DeepConfig, HeuristicController, NashDqnController, NashSacController,
                          QLearningConfig, QLearningController, make_controller)
from .heuristics import HEURISTICS, mac_policy, mis_policy, mrst_policy
from .nash import NashResult, nash_select

POLICIES = ("mrst", "mac", "mis", "qlearning", "nash-dqn", "nash-sac")
LEARNED = ("qlearning", "nash-dqn", "nash-sac")

__all__ = [
    "Controller", "DeepConfig", "HeuristicController", "NashDqnController", "NashSacController",
    "QLearningConfig", "QLearningController", "make_controller", "HEURISTICS", "mac_policy", "mis_policy",
    "mrst_policy", "NashResult", "nash_select", "POLICIES", "LEARNED",
]
