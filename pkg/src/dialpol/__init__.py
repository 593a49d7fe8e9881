"""Dialogue policy learning: MDP solvers, Bayesian inverse RL, imitation-aided
Q-learning on a slot-filling simulator, and risk-minimising weight tuning."""
from .errors import (ConfigError, ContractError, ConvergenceError, DialpolError, ParseError,
                     ValidationError)
from .kernels import BACKEND
from .mdp import Mdp, QFn, Solution, policy_evaluation, policy_iteration, value_iteration

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "ContractError", "ConvergenceError", "DialpolError", "Mdp",
    "ParseError", "QFn", "Solution", "ValidationError", "policy_evaluation",
    "policy_iteration", "value_iteration",
]
