"""Loss functionals and weighted error rates.

The pairwise robust loss asks two questions about a hypothesis under an
adversary confined to a perturbation ball: can the adversary force a
specific wrong label, and is the true label forced everywhere? The
one-vs-all variant collapses the first question to "any wrong label".
Both are computed through a RobustEvaluator, which either answers
exactly (certified) or under-reports reachability (heuristic, PGD).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from robustboost.core import (
    Dataset,
    FiniteDistribution,
    IncorrectPairSet,
    PerturbationBall,
    RobustBoostError,
)


class SameLabelError(RobustBoostError):
    """Pairwise losses require distinct true and candidate labels."""


class SupportMismatchError(RobustBoostError):
    """A distribution's support does not match the dataset/pair set."""


def _label_set(h, x) -> frozenset[int]:
    if hasattr(h, "predict_set"):
        return frozenset(h.predict_set(x))
    return frozenset((int(h.predict(x)),))


def base_loss(h, x, y: int, y_wrong: int) -> int:
    """1{y' in h(x)} - 1{y in h(x)}, the two-label comparison loss."""
    if y == y_wrong:
        raise SameLabelError(f"y and y' must differ, both are {y}")
    labels = _label_set(h, x)
    return int(y_wrong in labels) - int(y in labels)


def robust_pair_loss(h, evaluator, ball: PerturbationBall, x, y: int, y_wrong: int) -> int:
    """Robust version of base_loss: +1{y' reachable} - 1{y forced everywhere}."""
    if y == y_wrong:
        raise SameLabelError(f"y and y' must differ, both are {y}")
    reach = evaluator.reach_set(h, x, ball)
    return int(y_wrong in reach) - int(reach == {y})


def ova_loss(h, evaluator, ball: PerturbationBall, x, y: int) -> int:
    """One-vs-all robust loss: +1 if any wrong label is reachable, else -1."""
    reach = evaluator.reach_set(h, x, ball)
    return 1 if reach != {y} else -1


def softmax(scores: np.ndarray) -> np.ndarray:
    v = np.asarray(scores, dtype=np.float64)
    v = v - v.max(axis=-1, keepdims=True)
    e = np.exp(v)
    return e / e.sum(axis=-1, keepdims=True)


def ce_loss(scores: np.ndarray, y: int) -> float:
    """Softmax cross-entropy -ln softmax(scores)_y, stabilized by max
    subtraction so it never overflows for finite scores.
    """
    v = np.asarray(scores, dtype=np.float64)
    v = v - v.max()
    return float(np.log(np.exp(v).sum()) - v[y])


def robust_ce_loss(f, pgd_config, ball: PerturbationBall, x, y: int) -> float:
    """Worst cross-entropy of f over the ball, estimated by PGD.

    The zero perturbation is always among the starts, so the result is
    never below the clean loss.
    """
    from robustboost.pgd import pgd_maximize

    x = np.asarray(x, dtype=np.float64)

    def grad_fn(z):
        v = f.scores(x + z)
        p = softmax(v)
        p[y] -= 1.0
        return ce_loss(v, y), f.backprop_input(x + z, p)

    cfg = dataclasses.replace(pgd_config, include_zero_start=True)
    _, best = pgd_maximize(grad_fn, ball, cfg, dim=x.shape[0])
    return best


class ExactEvaluator:
    """Certified evaluator for hypotheses that expose an exact reach set
    (decision stumps, linear scorers).
    """

    certified = True

    def reach_set(self, h, x, ball: PerturbationBall) -> set[int]:
        return set(h.reach_set(x, ball))


def ball_grid(ball: PerturbationBall, d: int, n_total: int = 10_000) -> np.ndarray:
    """A dense deterministic grid covering the ball, including its boundary
    and the center. Rows are perturbations z with ||z||_p <= delta.
    """
    if ball.delta == 0.0:
        return np.zeros((1, d))
    if d == 1:
        pts = np.linspace(-ball.delta, ball.delta, max(3, n_total))
        return pts.reshape(-1, 1)
    per_axis = max(3, int(math.ceil(n_total ** (1.0 / d))))
    axes = [np.linspace(-ball.delta, ball.delta, per_axis)] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    Z = np.stack([g.ravel() for g in mesh], axis=1)
    if not ball.is_linf:
        Z = Z[np.linalg.norm(Z, axis=1) <= ball.delta]
        if not (Z == 0.0).all(axis=1).any():
            Z = np.vstack([Z, np.zeros(d)])
    return Z


class GridEvaluator:
    """Evaluator that sweeps a dense grid of the ball. Exact up to grid
    resolution; treated as certified for low-dimensional inputs (d <= 3).
    """

    certified = True

    def __init__(self, n_total: int = 10_000):
        self.n_total = n_total

    def reach_set(self, h, x, ball: PerturbationBall) -> set[int]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] > 3:
            raise RobustBoostError("grid evaluation is only supported for d <= 3")
        Z = ball_grid(ball, x.shape[0], self.n_total)
        if hasattr(h, "predict_batch"):
            return set(int(c) for c in np.unique(h.predict_batch(x[None, :] + Z)))
        return set(int(h.predict(x + z)) for z in Z)


class PgdEvaluator:
    """Heuristic evaluator for differentiable score-based predictors: labels
    are reported reachable when a targeted PGD ascent realizes them, so the
    reach set is a lower bound on the true one (certified = False).
    """

    certified = False

    def __init__(self, pgd_config):
        self.pgd_config = pgd_config

    def reach_set(self, h, x, ball: PerturbationBall) -> set[int]:
        from robustboost.pgd import pgd_target_labels

        return pgd_target_labels(h, np.asarray(x, dtype=np.float64), ball, self.pgd_config)


def _check_pair_support(D: FiniteDistribution, pairs: IncorrectPairSet, dataset: Dataset) -> None:
    if len(D) != len(pairs):
        raise SupportMismatchError(
            f"distribution over {len(D)} entries vs pair set of {len(pairs)}"
        )
    if len(pairs) and int(pairs.example_idx.max()) >= dataset.m:
        raise SupportMismatchError("pair set references examples outside the dataset")


def weighted_err(h, dataset: Dataset, pairs: IncorrectPairSet, D: FiniteDistribution) -> float:
    """Expected base_loss over pairs drawn from D. Lies in [-1, 1]."""
    _check_pair_support(D, pairs, dataset)
    total = 0.0
    for w, i, yw in zip(D.weights, pairs.example_idx, pairs.wrong_label):
        total += w * base_loss(h, dataset.X[i], int(dataset.y[i]), int(yw))
    return total


def weighted_err_delta(
    h, evaluator, ball: PerturbationBall, dataset: Dataset,
    pairs: IncorrectPairSet, D: FiniteDistribution,
) -> float:
    """Expected robust_pair_loss over pairs drawn from D."""
    _check_pair_support(D, pairs, dataset)
    total = 0.0
    for w, i, yw in zip(D.weights, pairs.example_idx, pairs.wrong_label):
        total += w * robust_pair_loss(h, evaluator, ball, dataset.X[i], int(dataset.y[i]), int(yw))
    return total


def weighted_err_ova(
    h, evaluator, ball: PerturbationBall, dataset: Dataset, D: FiniteDistribution
) -> float:
    """Expected one-vs-all robust loss over examples drawn from D."""
    if len(D) != dataset.m:
        raise SupportMismatchError(f"distribution over {len(D)} entries vs {dataset.m} examples")
    total = 0.0
    for w, i in zip(D.weights, range(dataset.m)):
        total += w * ova_loss(h, evaluator, ball, dataset.X[i], int(dataset.y[i]))
    return total


@dataclass(frozen=True)
class TabularMultilabel:
    """A multilabel predictor defined only on a dataset's points, stored as
    per-example label sets. Lookup is by exact coordinate match.
    """

    X: np.ndarray
    label_sets: tuple[frozenset[int], ...]

    def predict_set_by_index(self, i: int) -> frozenset[int]:
        return self.label_sets[i]

    def predict_set(self, x) -> frozenset[int]:
        x = np.asarray(x, dtype=np.float64)
        matches = np.where((self.X == x).all(axis=1))[0]
        if matches.size == 0:
            raise KeyError("point is not in the predictor's domain")
        return self.label_sets[int(matches[0])]


def materialize_robust_multilabel(
    h, evaluator, ball: PerturbationBall, dataset: Dataset
) -> TabularMultilabel:
    """Build the multilabel predictor whose indicator at a training point
    marks the true label as present only when it is forced everywhere in
    the ball, and a wrong label as present whenever it is reachable. The
    base_loss of this predictor reproduces robust_pair_loss exactly.
    """
    sets = []
    for i in range(dataset.m):
        reach = evaluator.reach_set(h, dataset.X[i], ball)
        yi = int(dataset.y[i])
        labels = set(c for c in reach if c != yi)
        if reach == {yi}:
            labels.add(yi)
        sets.append(frozenset(labels))
    return TabularMultilabel(dataset.X, tuple(sets))
