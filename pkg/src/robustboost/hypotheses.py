"""Hypothesis classes: decision stumps and linear scorers with exact robust
reach sets, a small ReLU MLP with manual backpropagation, mixtures with a
weighted plurality vote, and additive score ensembles.

A "reach set" of a unilabel predictor at x is the set of labels an
adversary confined to the perturbation ball can make it output. Stumps
and (within the documented regimes) linear scorers compute it exactly,
which is what makes certified boosting possible on these classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from robustboost.core import (
    Dataset,
    FiniteDistribution,
    IncorrectPairSet,
    PerturbationBall,
    RobustBoostError,
    SeededRng,
    dual_norm,
)
from robustboost import kernels


class UnsupportedNormError(RobustBoostError):
    """The hypothesis has no exact reach set under this norm."""


class DimensionTooLargeError(RobustBoostError):
    """Exact multiclass linear evaluation requested beyond its d <= 12 gate."""


def argmax_label(scores) -> int:
    """Index of the maximal score; ties break to the lowest index."""
    return int(np.argmax(np.asarray(scores)))


@dataclass(frozen=True)
class DecisionStump:
    """Axis-aligned threshold rule: left label if x[feature] <= threshold,
    else right label. Labels may coincide (a constant classifier).
    """

    feature: int
    threshold: float
    left: int
    right: int

    def predict(self, x) -> int:
        return self.left if x[self.feature] <= self.threshold else self.right

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        return np.where(X[:, self.feature] <= self.threshold, self.left, self.right)

    def reach_set(self, x, ball: PerturbationBall) -> set[int]:
        """Labels reachable when the adversary moves x[feature] by up to
        delta. Exact: the stump reads one coordinate, so only the interval
        [x_j - delta, x_j + delta] against the threshold matters.
        """
        if not ball.is_linf and len(x) > 1:
            raise UnsupportedNormError("stump reach sets require p=inf (or d=1)")
        xj = float(x[self.feature])
        if xj + ball.delta <= self.threshold:
            return {self.left}
        if xj - ball.delta > self.threshold:
            return {self.right}
        return {self.left, self.right}


class LinearScorer:
    """Affine score predictor: scores(x) = W x + b."""

    def __init__(self, W: np.ndarray, b: np.ndarray):
        W = np.asarray(W, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ValueError(f"W must be (k, d) and b (k,), got {W.shape} and {b.shape}")
        if W.shape[0] < 2:
            raise ValueError("need at least two classes")
        self.W = W
        self.b = b

    @property
    def k(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def scores(self, x) -> np.ndarray:
        return self.W @ np.asarray(x, dtype=np.float64) + self.b

    def scores_batch(self, X: np.ndarray) -> np.ndarray:
        return X @ self.W.T + self.b

    def predict(self, x) -> int:
        return argmax_label(self.scores(x))

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores_batch(X), axis=1)

    def backprop_input(self, x, upstream: np.ndarray) -> np.ndarray:
        return self.W.T @ np.asarray(upstream, dtype=np.float64)

    def backprop_input_batch(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        return U @ self.W

    def reach_set(self, x, ball: PerturbationBall) -> set[int]:
        return linear_reach_set(self, x, ball, require_exact=True)[0]


def _binary_reach(linear: LinearScorer, x, ball: PerturbationBall) -> set[int]:
    # dual-norm margin test; boundary ties count as reachable
    out = set()
    for c in (0, 1):
        w = linear.W[c] - linear.W[1 - c]
        margin = float(w @ x + linear.b[c] - linear.b[1 - c])
        if margin + ball.delta * dual_norm(w, ball) >= 0.0:
            out.add(c)
    return out


def _multiclass_linf_reach(linear: LinearScorer, x, ball: PerturbationBall) -> set[int]:
    # For each candidate label, test feasibility of beating every rival
    # simultaneously somewhere in the box: maximize the worst rival margin
    # (an LP in (z, s)) and accept when the optimum is >= 0.
    from scipy.optimize import linprog

    k, d, delta = linear.k, linear.d, ball.delta
    x = np.asarray(x, dtype=np.float64)
    out = set()
    for c in range(k):
        rows = []
        rhs = []
        for j in range(k):
            if j == c:
                continue
            w = linear.W[c] - linear.W[j]
            rows.append(np.concatenate([-w, [1.0]]))
            rhs.append(float(w @ x + linear.b[c] - linear.b[j]))
        cost = np.zeros(d + 1)
        cost[-1] = -1.0
        bounds = [(-delta, delta)] * d + [(None, None)]
        res = linprog(cost, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=bounds, method="highs")
        if res.status != 0:  # pragma: no cover - bounded feasible by construction
            raise RobustBoostError(f"reach-set LP failed: {res.message}")
        if -res.fun >= -1e-9:
            out.add(c)
    return out


def linear_reach_set(
    linear: LinearScorer, x, ball: PerturbationBall,
    require_exact: bool = False, pgd_config=None,
) -> tuple[set[int], bool]:
    """Reach set of a linear scorer and whether it is exact.

    Binary scorers are exact for both norms via the dual-norm margin test.
    With three or more classes, exactness holds for p=inf up to d=12; other
    regimes fall back to PGD probing (a reachability lower bound) unless
    ``require_exact`` is set, in which case they raise.
    """
    x = np.asarray(x, dtype=np.float64)
    if ball.delta == 0.0:
        return {argmax_label(linear.scores(x))}, True
    if linear.k == 2:
        return _binary_reach(linear, x, ball), True
    if ball.is_linf:
        if linear.d <= 12:
            return _multiclass_linf_reach(linear, x, ball), True
        if require_exact:
            raise DimensionTooLargeError(
                f"exact multiclass reach sets support d <= 12, got d={linear.d}"
            )
    elif require_exact:
        raise UnsupportedNormError("exact multiclass reach sets require p=inf")
    from robustboost.pgd import PgdConfig, pgd_target_labels

    cfg = pgd_config if pgd_config is not None else PgdConfig(steps=20, restarts=5)
    return pgd_target_labels(linear, x, ball, cfg), False


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


class Mlp:
    """Fully connected ReLU network with an identity output layer.

    Parameters live in ``layers`` as (W, b) pairs. Gradients of the
    softmax cross-entropy are computed by hand; the ReLU subgradient at 0
    is taken to be 0 so results are deterministic.
    """

    def __init__(self, layers: list[tuple[np.ndarray, np.ndarray]]):
        if not layers:
            raise ValueError("need at least one layer")
        self.layers = [
            (np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64))
            for W, b in layers
        ]

    @classmethod
    def random(cls, layer_sizes: list[int], rng: SeededRng) -> "Mlp":
        """Glorot-uniform weights and biases. ``layer_sizes`` runs from the
        input dimension through hidden widths to the class count. Nonzero
        biases keep dead layers off the exact ReLU kink, where the
        subgradient convention and finite differences disagree.
        """
        gen = rng.generator()
        layers = []
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = math.sqrt(6.0 / (n_in + n_out))
            layers.append(
                (gen.uniform(-limit, limit, size=(n_out, n_in)), gen.uniform(-limit, limit, size=n_out))
            )
        return cls(layers)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.layers[0][0].shape[1]] + [W.shape[0] for W, _ in self.layers]

    @property
    def d(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def k(self) -> int:
        return self.layers[-1][0].shape[0]

    def copy(self) -> "Mlp":
        return Mlp([(W.copy(), b.copy()) for W, b in self.layers])

    def scores(self, x) -> np.ndarray:
        return self.scores_batch(np.asarray(x, dtype=np.float64)[None, :])[0]

    def scores_batch(self, X: np.ndarray) -> np.ndarray:
        a = np.asarray(X, dtype=np.float64)
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            z = a @ W.T + b
            a = z if i == last else _relu(z)
        return a

    def predict(self, x) -> int:
        return argmax_label(self.scores(x))

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores_batch(X), axis=1)

    def _forward_cached(self, X: np.ndarray):
        acts = [np.asarray(X, dtype=np.float64)]
        pre = []
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            z = acts[-1] @ W.T + b
            pre.append(z)
            acts.append(z if i == last else _relu(z))
        return acts, pre

    def grads_batch(self, X: np.ndarray, U: np.ndarray):
        """Backpropagate upstream score gradients U (n, k) through the net.

        Returns (param_grads, dX): param_grads is a list of (dW, db) summed
        over the batch; dX has one input gradient per row.
        """
        acts, pre = self._forward_cached(X)
        delta = np.asarray(U, dtype=np.float64)
        param_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[i]
            param_grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
            delta = delta @ W
            if i > 0:
                delta = delta * (pre[i - 1] > 0)
        return param_grads, delta

    def backprop_input(self, x, upstream: np.ndarray) -> np.ndarray:
        _, dX = self.grads_batch(np.asarray(x, dtype=np.float64)[None, :], np.asarray(upstream)[None, :])
        return dX[0]

    def backprop_input_batch(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        # input gradients only; skips accumulating parameter grads
        acts, pre = self._forward_cached(X)
        delta = np.asarray(U, dtype=np.float64)
        for i in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[i]
            delta = delta @ W
            if i > 0:
                delta = delta * (pre[i - 1] > 0)
        return delta

    def backward_ce(self, x, y: int):
        """Exact gradients of ce_loss(scores(x), y) with respect to every
        parameter and to the input.
        """
        from robustboost.losses import softmax

        x = np.asarray(x, dtype=np.float64)
        p = softmax(self.scores(x))
        p[y] -= 1.0
        grads, dX = self.grads_batch(x[None, :], p[None, :])
        return grads, dX[0]

    # flat parameter views, used by finite-difference checks and SGD
    def get_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in self.layers])

    def set_params(self, flat: np.ndarray) -> None:
        pos = 0
        for i, (W, b) in enumerate(self.layers):
            nw, nb = W.size, b.size
            self.layers[i] = (
                flat[pos : pos + nw].reshape(W.shape).copy(),
                flat[pos + nw : pos + nw + nb].copy(),
            )
            pos += nw + nb

    def sgd_step(self, param_grads, lr: float) -> None:
        for i, ((W, b), (dW, db)) in enumerate(zip(self.layers, param_grads)):
            self.layers[i] = (W - lr * dW, b - lr * db)

    @property
    def num_params(self) -> int:
        return sum(W.size + b.size for W, b in self.layers)


def flatten_grads(param_grads) -> np.ndarray:
    return np.concatenate([np.concatenate([dW.ravel(), db]) for dW, db in param_grads])


class MixtureQ:
    """A finite distribution over unilabel predictors. ``class_mass`` is the
    per-class vote mass; the plurality vote takes its argmax.
    """

    def __init__(self, hypotheses: list, weights: FiniteDistribution, k: int):
        if len(hypotheses) == 0:
            raise ValueError("mixture must contain at least one hypothesis")
        if len(weights) != len(hypotheses):
            raise ValueError("one weight per hypothesis required")
        self.hypotheses = list(hypotheses)
        self.weights = weights
        self.k = int(k)

    def __len__(self) -> int:
        return len(self.hypotheses)

    def class_mass(self, x) -> np.ndarray:
        votes = np.zeros(self.k)
        for w, h in zip(self.weights.weights, self.hypotheses):
            votes[int(h.predict(x))] += w
        return votes

    def class_mass_batch(self, X: np.ndarray) -> np.ndarray:
        votes = np.zeros((X.shape[0], self.k))
        rows = np.arange(X.shape[0])
        for w, h in zip(self.weights.weights, self.hypotheses):
            votes[rows, h.predict_batch(X)] += w
        return votes

    # score-predictor interface so mixtures compose with argmax helpers
    def scores(self, x) -> np.ndarray:
        return self.class_mass(x)

    def scores_batch(self, X: np.ndarray) -> np.ndarray:
        return self.class_mass_batch(X)

    def predict(self, x) -> int:
        return argmax_label(self.class_mass(x))

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.class_mass_batch(X), axis=1)

    def all_stumps(self) -> bool:
        return all(isinstance(h, DecisionStump) for h in self.hypotheses)


def plurality_vote(Q: MixtureQ, x) -> int:
    """Label with the largest Q-weighted vote mass at x."""
    return Q.predict(x)


class AdditiveEnsemble:
    """Weighted sum of score predictors: scores(x) = sum_t beta_t f_t(x).
    An empty ensemble is the identically-zero predictor.
    """

    def __init__(self, components: list[tuple[float, object]], k: int):
        self.components = list(components)
        self.k = int(k)

    def __len__(self) -> int:
        return len(self.components)

    def scores(self, x) -> np.ndarray:
        out = np.zeros(self.k)
        for beta, f in self.components:
            out += beta * f.scores(x)
        return out

    def scores_batch(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros((X.shape[0], self.k))
        for beta, f in self.components:
            out += beta * f.scores_batch(X)
        return out

    def predict(self, x) -> int:
        return argmax_label(self.scores(x))

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores_batch(X), axis=1)

    def backprop_input(self, x, upstream: np.ndarray) -> np.ndarray:
        out = np.zeros(np.asarray(x).shape[0])
        for beta, f in self.components:
            out += beta * f.backprop_input(x, upstream)
        return out

    def backprop_input_batch(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        out = np.zeros_like(np.asarray(X, dtype=np.float64))
        for beta, f in self.components:
            out += beta * f.backprop_input_batch(X, U)
        return out

    def extended(self, beta: float, f) -> "AdditiveEnsemble":
        return AdditiveEnsemble(self.components + [(beta, f)], self.k)


class StumpWeakLearner:
    """Exhaustive robust stump search, reusable across boosting rounds.

    The candidate grid covers every feature, all thresholds where the
    robust loss can change (data values shifted by +-delta, midpoints
    between them, midpoints of raw values, and +-inf), and every ordered
    (left, right) pair of labels present in the data. Per-candidate robust
    losses are precomputed once; each query is then a single weighted
    average and a first-minimum scan, which makes ties resolve to the
    lexicographically smallest (feature, threshold, left, right).
    """

    certified = True  # losses come from exact interval evaluation

    def __init__(self, dataset: Dataset, ball: PerturbationBall, mode: str = "pairs"):
        if not ball.is_linf and dataset.d > 1:
            raise UnsupportedNormError("stump learning requires p=inf (or d=1)")
        if mode not in ("pairs", "ova"):
            raise ValueError(f"mode must be 'pairs' or 'ova', got {mode!r}")
        self.dataset = dataset
        self.ball = ball
        self.mode = mode
        self.pairs = None
        self._build_candidates()
        self._build_losses()

    def _thresholds(self, values: np.ndarray) -> np.ndarray:
        u = np.unique(values)
        d = self.ball.delta
        breaks = np.unique(np.concatenate([u - d, u + d]))
        cand = [np.array([-np.inf, np.inf]), breaks]
        if breaks.size > 1:
            cand.append((breaks[:-1] + breaks[1:]) / 2.0)
        if u.size > 1:
            cand.append((u[:-1] + u[1:]) / 2.0)
        return np.unique(np.concatenate(cand))

    def _build_candidates(self) -> None:
        ds = self.dataset
        present = np.unique(ds.y)
        feat, thr, left, right = [], [], [], []
        for j in range(ds.d):
            ts = self._thresholds(ds.X[:, j])
            for t in ts:
                for lf in present:
                    for rg in present:
                        feat.append(j)
                        thr.append(t)
                        left.append(lf)
                        right.append(rg)
        self.feat = np.array(feat, dtype=np.int64)
        self.thr = np.array(thr, dtype=np.float64)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)

    def _build_losses(self) -> None:
        from robustboost.core import build_incorrect_pairs

        ds = self.dataset
        if self.mode == "pairs":
            self.pairs = build_incorrect_pairs(ds)
            L = kernels.stump_pair_losses(
                ds.X, ds.y, self.pairs.example_idx, self.pairs.wrong_label,
                self.feat, self.thr, self.left, self.right, self.ball.delta,
            )
        else:
            L = kernels.stump_ova_losses(
                ds.X, ds.y, self.feat, self.thr, self.left, self.right, self.ball.delta
            )
        self.loss_matrix = np.asarray(L, dtype=np.float64)

    @property
    def support_size(self) -> int:
        return self.loss_matrix.shape[1]

    def __call__(self, D: FiniteDistribution) -> tuple[DecisionStump, float]:
        if len(D) != self.support_size:
            from robustboost.losses import SupportMismatchError

            raise SupportMismatchError(
                f"distribution over {len(D)} entries vs support of {self.support_size}"
            )
        errs = self.loss_matrix @ D.weights
        best = int(np.argmin(errs))
        stump = DecisionStump(
            int(self.feat[best]), float(self.thr[best]),
            int(self.left[best]), int(self.right[best]),
        )
        return stump, float(errs[best])

    def losses_of(self, stump_index_or_stump) -> np.ndarray:
        """Per-support robust losses of a candidate, straight from the
        precomputed matrix.
        """
        idx = stump_index_or_stump
        if isinstance(idx, DecisionStump):
            match = np.where(
                (self.feat == idx.feature)
                & (self.thr == idx.threshold)
                & (self.left == idx.left)
                & (self.right == idx.right)
            )[0]
            if match.size == 0:
                raise ValueError("stump is not in the candidate grid")
            idx = int(match[0])
        return self.loss_matrix[idx]


def train_stump_weak_learner(
    dataset: Dataset, pairs: IncorrectPairSet, D: FiniteDistribution, ball: PerturbationBall
) -> tuple[DecisionStump, float]:
    """One-shot exhaustive robust stump search over the incorrect-pair
    distribution D. For repeated queries construct StumpWeakLearner once.
    """
    learner = StumpWeakLearner(dataset, ball, mode="pairs")
    return learner(D)
