"""Constructive minimax boosting: multiplicative weights over the
incorrect-pair set (or over examples in one-vs-all mode) repeatedly
queries a robust weak learner, and the uniform mixture of the returned
hypotheses drives every robust margin negative.

With a certified evaluator the final margin report is exact, so a
negative maximum margin certifies perfect robust training accuracy of
the weighted plurality vote.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from robustboost.core import (
    Dataset,
    FiniteDistribution,
    PerturbationBall,
    RobustBoostError,
    build_incorrect_pairs,
)
from robustboost.losses import ExactEvaluator, ball_grid
from robustboost.hypotheses import MixtureQ
from robustboost import kernels


class InvalidGammaError(RobustBoostError):
    """The target edge gamma must lie in (0, 1]."""


class NonCertifiedEvaluatorError(RobustBoostError):
    """The booster's guarantee needs exact robust losses."""


class WeakLearnerFailedError(RobustBoostError):
    """A round's hypothesis missed the promised edge."""

    def __init__(self, round_index: int, achieved: float, trace: list):
        super().__init__(
            f"weak learner achieved robust error {achieved:.6f} > -gamma at round {round_index}"
        )
        self.round_index = round_index
        self.achieved = achieved
        self.trace = trace


def rounds_for_margin(gamma: float, support_size: int) -> int:
    """Round count sufficient for every mixture margin to clear -gamma/2.

    With step gamma/4 the multiplicative-weights regret per round is at
    most gamma/2 after ceil(16 ln N / gamma^2) rounds, which leaves all
    margins at or below -gamma/2 when every round has edge gamma.
    """
    if not (0 < gamma <= 1):
        raise InvalidGammaError(f"gamma must lie in (0, 1], got {gamma!r}")
    n = max(support_size, 2)
    return int(math.ceil(16.0 * math.log(n) / gamma**2))


def auto_eta(gamma: float, support_size: int, rounds: int) -> float:
    """Hedge step meeting the regret budget of rounds_for_margin."""
    n = max(support_size, 2)
    return min(gamma / 4.0, math.sqrt(math.log(n) / rounds))


@dataclass
class HedgeState:
    """Multiplicative-weights state over a finite support."""

    D: FiniteDistribution
    cumulative_losses: np.ndarray
    t: int
    eta: float

    @classmethod
    def initial(cls, support_size: int, eta: float) -> "HedgeState":
        return cls(
            D=FiniteDistribution.uniform(support_size),
            cumulative_losses=np.zeros(support_size),
            t=0,
            eta=eta,
        )


def hedge_update(state: HedgeState, losses: np.ndarray) -> HedgeState:
    """Reweight by exp(eta * loss) and renormalize: support elements where
    the last hypothesis suffered high loss gain mass.
    """
    losses = np.asarray(losses, dtype=np.float64)
    w = state.D.weights * np.exp(state.eta * losses)
    return HedgeState(
        D=FiniteDistribution(w / w.sum()),
        cumulative_losses=state.cumulative_losses + losses,
        t=state.t + 1,
        eta=state.eta,
    )


@dataclass(frozen=True)
class BoostConfig:
    """Knobs of the game booster. ``rounds=None`` and ``eta=None`` resolve
    via rounds_for_margin / auto_eta. ``mode`` selects the reweighting
    support: incorrect pairs ("pairs") or whole examples ("ova").
    """

    gamma: float
    ball: PerturbationBall
    rounds: int | None = None
    eta: float | None = None
    require_certified: bool = True
    mode: str = "pairs"
    early_stop: bool = True

    def __post_init__(self) -> None:
        if not (0 < self.gamma <= 1):
            raise InvalidGammaError(f"gamma must lie in (0, 1], got {self.gamma!r}")
        if self.mode not in ("pairs", "ova"):
            raise ValueError(f"mode must be 'pairs' or 'ova', got {self.mode!r}")


@dataclass(frozen=True)
class MarginReport:
    """Exact mixture losses per support element, plus the two vote-mass
    probabilities behind them: the mass forcing the true label everywhere
    and the mass able to reach a wrong label.
    """

    mode: str
    example_idx: np.ndarray
    wrong_label: np.ndarray | None
    mixture_loss: np.ndarray
    prob_true_forced: np.ndarray
    prob_wrong_reachable: np.ndarray

    @property
    def max_margin(self) -> float:
        return float(self.mixture_loss.max())


def margin_report(
    Q: MixtureQ, dataset: Dataset, ball: PerturbationBall, evaluator=None, mode: str = "pairs"
) -> MarginReport:
    """Exact per-pair (or per-example) robust losses of the mixture."""
    evaluator = evaluator if evaluator is not None else ExactEvaluator()
    if not evaluator.certified:
        raise NonCertifiedEvaluatorError("margin reports require a certified evaluator")
    m = dataset.m
    reach = [
        [evaluator.reach_set(h, dataset.X[i], ball) for i in range(m)]
        for h in Q.hypotheses
    ]
    w = Q.weights.weights
    forced = np.zeros(m)
    for t, h_reach in enumerate(reach):
        for i in range(m):
            if h_reach[i] == {int(dataset.y[i])}:
                forced[i] += w[t]
    if mode == "pairs":
        pairs = build_incorrect_pairs(dataset)
        n = len(pairs)
        wrongable = np.zeros(n)
        for t, h_reach in enumerate(reach):
            for p in range(n):
                if int(pairs.wrong_label[p]) in h_reach[int(pairs.example_idx[p])]:
                    wrongable[p] += w[t]
        forced_per_pair = forced[pairs.example_idx]
        return MarginReport(
            mode="pairs",
            example_idx=pairs.example_idx,
            wrong_label=pairs.wrong_label,
            mixture_loss=wrongable - forced_per_pair,
            prob_true_forced=forced_per_pair,
            prob_wrong_reachable=wrongable,
        )
    # one-vs-all: "some wrong label reachable" is the complement of forced
    anywrong = np.zeros(m)
    for t, h_reach in enumerate(reach):
        for i in range(m):
            if h_reach[i] != {int(dataset.y[i])}:
                anywrong[i] += w[t]
    return MarginReport(
        mode="ova",
        example_idx=np.arange(m, dtype=np.int64),
        wrong_label=None,
        mixture_loss=2.0 * anywrong - 1.0,
        prob_true_forced=forced,
        prob_wrong_reachable=anywrong,
    )


@dataclass
class BoostResult:
    mixture: MixtureQ
    report: MarginReport
    trace: list[dict]
    rounds_run: int
    early_stopped: bool


def run_boost(dataset: Dataset, weak_learner, config: BoostConfig, evaluator=None) -> BoostResult:
    """Drive the weak learner with multiplicative weights for up to T rounds.

    ``weak_learner`` maps a distribution over the support to (hypothesis,
    achieved robust error); a round whose error exceeds -gamma aborts with
    WeakLearnerFailedError. The mixture is uniform over the returned
    hypotheses. Stops early once every running margin is negative, since
    the guarantee is already met.
    """
    if config.mode == "pairs":
        support_size = dataset.m * (dataset.k - 1)
    else:
        support_size = dataset.m

    learner_certified = getattr(weak_learner, "certified", None)
    if learner_certified is None:
        learner_certified = evaluator is not None and evaluator.certified
    if config.require_certified and not learner_certified:
        raise NonCertifiedEvaluatorError(
            "booster refuses non-certified evaluation; pass require_certified=False to override"
        )

    rounds = config.rounds if config.rounds is not None else rounds_for_margin(config.gamma, support_size)
    eta = config.eta if config.eta is not None else auto_eta(config.gamma, support_size, rounds)

    state = HedgeState.initial(support_size, eta)
    hypotheses = []
    trace: list[dict] = []
    early_stopped = False
    for t in range(1, rounds + 1):
        t0 = time.perf_counter()
        h, achieved = weak_learner(state.D)
        if achieved > -config.gamma + 1e-12:
            raise WeakLearnerFailedError(t, achieved, trace)
        hypotheses.append(h)
        losses = _support_losses(weak_learner, h, dataset, config, evaluator)
        state = hedge_update(state, losses)
        running_max = float((state.cumulative_losses / state.t).max())
        trace.append(
            {
                "round": t,
                "edge": achieved,
                "max_margin": running_max,
                "wall_time": time.perf_counter() - t0,
            }
        )
        if config.early_stop and running_max < 0.0:
            early_stopped = True
            break

    Q = MixtureQ(hypotheses, FiniteDistribution.uniform(len(hypotheses)), dataset.k)
    report = margin_report(Q, dataset, config.ball, evaluator, mode=config.mode)
    return BoostResult(Q, report, trace, rounds_run=len(hypotheses), early_stopped=early_stopped)


def _support_losses(weak_learner, h, dataset, config, evaluator) -> np.ndarray:
    if hasattr(weak_learner, "losses_of"):
        return np.asarray(weak_learner.losses_of(h), dtype=np.float64)
    from robustboost import losses as L

    evaluator = evaluator if evaluator is not None else ExactEvaluator()
    if config.mode == "pairs":
        pairs = build_incorrect_pairs(dataset)
        return np.array(
            [
                L.robust_pair_loss(h, evaluator, config.ball, dataset.X[i], int(dataset.y[i]), int(yw))
                for i, yw in zip(pairs.example_idx, pairs.wrong_label)
            ],
            dtype=np.float64,
        )
    return np.array(
        [
            L.ova_loss(h, evaluator, config.ball, dataset.X[i], int(dataset.y[i]))
            for i in range(dataset.m)
        ],
        dtype=np.float64,
    )


def robust_vote_ok_on_grid(
    Q: MixtureQ, dataset: Dataset, ball: PerturbationBall, n_total: int = 10_000
) -> np.ndarray:
    """Independent dense-grid adversary: True per example when the plurality
    vote stays correct at every grid perturbation. Stump mixtures go
    through the compiled kernel; anything else takes the generic path.
    """
    Z = ball_grid(ball, dataset.d, n_total)
    if Q.all_stumps():
        feat = np.array([h.feature for h in Q.hypotheses], dtype=np.int64)
        thr = np.array([h.threshold for h in Q.hypotheses], dtype=np.float64)
        left = np.array([h.left for h in Q.hypotheses], dtype=np.int64)
        right = np.array([h.right for h in Q.hypotheses], dtype=np.int64)
        return np.asarray(
            kernels.stump_mixture_vote_ok(
                dataset.X, dataset.y, feat, thr, left, right,
                Q.weights.weights, Z, dataset.k,
            )
        )
    ok = np.ones(dataset.m, dtype=bool)
    for i in range(dataset.m):
        preds = Q.predict_batch(dataset.X[i][None, :] + Z)
        ok[i] = bool(np.all(preds == dataset.y[i]))
    return ok
