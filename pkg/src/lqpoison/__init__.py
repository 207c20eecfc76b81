"""Adaptive LQ control with optimistic parameter selection under attacks on
the learning database: Riccati tools, estimation, attack simulation,
Monte Carlo harness, bounds and a command line front end."""

from .controller import ControllerConfig
from .database import AttackPlan, LearningDatabase
from .estimator import AttackBudget, ConfidenceEllipsoid
from .harness import EpisodeConfig, EpisodeTrace, NoiseModel, monte_carlo, run_episode
from .lqr import CostWeights, SystemParams, solve_dare
from .ofu import OfuConfig, optimize_ofu

__all__ = [
    "AttackBudget",
    "AttackPlan",
    "ConfidenceEllipsoid",
    "ControllerConfig",
    "CostWeights",
    "EpisodeConfig",
    "EpisodeTrace",
    "LearningDatabase",
    "NoiseModel",
    "OfuConfig",
    "SystemParams",
    "monte_carlo",
    "optimize_ofu",
    "run_episode",
    "solve_dare",
]
__version__ = "0.1.0"
