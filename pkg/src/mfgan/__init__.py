"""Adversarial training of value/density network pairs for mean-field games
on the torus, with finite-difference and closed-form oracles."""

from .problems import (MFGProblem, ergodic_congestion_problem,
                       ergodic_explicit_problem, finite_horizon_problem,
                       problem_by_name)
from .trainer import NonFiniteLoss, TrainConfig, TrainingReport, train

__version__ = "0.1.0"

__all__ = [
    "MFGProblem", "NonFiniteLoss", "TrainConfig", "TrainingReport",
    "ergodic_congestion_problem", "ergodic_explicit_problem",
    "finite_horizon_problem", "problem_by_name", "train", "__version__",
]
