"""Adversarially robust multiclass boosting.

A library and CLI for training provably robust multiclass ensembles:

- a game-theoretic booster (multiplicative weights over incorrect
  example/label pairs) driving exactly evaluable weak learners, with
  certified robust-margin reports;
- a greedy stagewise adversarial gradient-boosting trainer with PGD
  inner maximization and a cyclic cosine learning rate;
- certification tooling: randomized smoothing radii, certified-radius
  aggregation for mixtures, and approximate robustness checkers.
"""

from robustboost.core import (
    Dataset,
    Example,
    FiniteDistribution,
    IncorrectPairSet,
    PerturbationBall,
    SeededRng,
    ball_project,
    build_incorrect_pairs,
    normalize,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Example",
    "FiniteDistribution",
    "IncorrectPairSet",
    "PerturbationBall",
    "SeededRng",
    "ball_project",
    "build_incorrect_pairs",
    "normalize",
    "__version__",
]
