"""Greedy stagewise adversarial boosting with offset approximation.

Each stage trains a fresh base predictor (scaled by a learned beta)
against the worst-case cross-entropy of the running ensemble's scores
plus the new component, where the running ensemble enters only through
its precomputed scores at the unperturbed training points. Stages run
for a doubling number of epochs under a cosine learning-rate schedule
that restarts high at every stage.

An exact reference mode (``exact_objective=True``) keeps all prior
components evaluable at perturbed points; it exists to measure the
offset approximation's gap and is not optimized.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from robustboost.core import Dataset, PerturbationBall, RobustBoostError, SeededRng
from robustboost.hypotheses import AdditiveEnsemble, Mlp
from robustboost.losses import softmax
from robustboost.pgd import PgdConfig, batched_ce_pgd

_SHUFFLE = 11
_PGD_START = 12
_EVAL = 13
_INIT = 14


class AlphaOutOfRangeError(RobustBoostError):
    """The schedule position must lie in [0, 1]."""


class NonFiniteParametersError(RobustBoostError):
    """Training produced NaN or infinite parameters."""

    def __init__(self, stage: int, epoch: int, trace: list):
        super().__init__(f"non-finite parameters at stage {stage}, epoch {epoch}")
        self.stage = stage
        self.epoch = epoch
        self.trace = trace


def cyclic_lr(alpha_cur: float, eta_max: float) -> float:
    """Cosine schedule: eta_max/2 * (1 + cos(alpha_cur * pi))."""
    if not (0.0 <= alpha_cur <= 1.0):
        raise AlphaOutOfRangeError(f"alpha_cur must lie in [0, 1], got {alpha_cur!r}")
    return 0.5 * eta_max * (1.0 + math.cos(alpha_cur * math.pi))


def epochs_for_stage(t: int, n1: int) -> int:
    """Doubling schedule: stage t runs 2^(t-1) * n1 epochs."""
    if t < 1:
        raise ValueError(f"stage index must be >= 1, got {t}")
    return (2 ** (t - 1)) * n1


@dataclass(frozen=True)
class StagewiseConfig:
    stages: int
    n1: int
    eta_max: float
    batch_size: int
    ball: PerturbationBall
    base_factory: object  # callable(SeededRng) -> base predictor
    rng: SeededRng
    pgd: PgdConfig | None = field(default_factory=PgdConfig)
    warm_start: bool = True
    beta_warm: float = 1.0
    beta_cold: float = 0.1
    exact_objective: bool = False
    eval_pgd_steps: int = 20
    eval_pgd_restarts: int = 3
    # optional noise-averaged objective for smoothing-based l2 training
    noise_sigma: float = 0.0
    noise_samples: int = 2

    def __post_init__(self) -> None:
        if self.stages < 1 or self.n1 < 1 or self.batch_size < 1:
            raise ValueError("stages, n1 and batch_size must all be >= 1")
        if not (self.eta_max > 0):
            raise ValueError(f"eta_max must be > 0, got {self.eta_max!r}")


def mlp_factory(d: int, hidden: tuple[int, ...], k: int):
    """Factory producing Glorot-initialized MLPs of a fixed architecture."""

    def make(rng: SeededRng) -> Mlp:
        return Mlp.random([d, *hidden, k], rng)

    return make


class _OffsetObjective:
    """Scores of (frozen offsets + beta * base model) for a fixed batch;
    gradients flow through the base model only.
    """

    def __init__(self, model, beta: float, offsets: np.ndarray):
        self.model = model
        self.beta = beta
        self.offsets = offsets

    def scores_batch(self, Xp: np.ndarray) -> np.ndarray:
        return self.offsets + self.beta * self.model.scores_batch(Xp)

    def backprop_input_batch(self, Xp: np.ndarray, U: np.ndarray) -> np.ndarray:
        return self.beta * self.model.backprop_input_batch(Xp, U)


class _ExactObjective:
    """Scores of (prior ensemble + beta * base model), both evaluated at the
    perturbed points. Counts prior-ensemble evaluations so the memory
    contract of the offset mode can be asserted by instrumentation.
    """

    def __init__(self, ensemble: AdditiveEnsemble, model, beta: float, counter: dict):
        self.ensemble = ensemble
        self.model = model
        self.beta = beta
        self.counter = counter

    def scores_batch(self, Xp: np.ndarray) -> np.ndarray:
        self.counter["prior_perturbed_evals"] += Xp.shape[0]
        return self.ensemble.scores_batch(Xp) + self.beta * self.model.scores_batch(Xp)

    def backprop_input_batch(self, Xp: np.ndarray, U: np.ndarray) -> np.ndarray:
        self.counter["prior_perturbed_evals"] += Xp.shape[0]
        return self.ensemble.backprop_input_batch(Xp, U) + self.beta * self.model.backprop_input_batch(Xp, U)


class _NoiseAveraged:
    """Averages a score predictor over fixed Gaussian input noise draws,
    approximating its smoothed version during training.
    """

    def __init__(self, inner, noise: np.ndarray):
        self.inner = inner
        self.noise = noise  # (s, d)

    def scores_batch(self, Xp: np.ndarray) -> np.ndarray:
        acc = None
        for eps in self.noise:
            s = self.inner.scores_batch(Xp + eps)
            acc = s if acc is None else acc + s
        return acc / self.noise.shape[0]

    def backprop_input_batch(self, Xp: np.ndarray, U: np.ndarray) -> np.ndarray:
        acc = None
        for eps in self.noise:
            g = self.inner.backprop_input_batch(Xp + eps, U)
            acc = g if acc is None else acc + g
        return acc / self.noise.shape[0]


def _ce_rows(V: np.ndarray, y: np.ndarray) -> np.ndarray:
    mx = V.max(axis=1, keepdims=True)
    lse = (mx + np.log(np.exp(V - mx).sum(axis=1, keepdims=True)))[:, 0]
    return lse - V[np.arange(V.shape[0]), y]


def stage_objective_grad(
    offsets: np.ndarray, beta: float, model, X_batch: np.ndarray, y_batch: np.ndarray,
    ball: PerturbationBall, pgd: PgdConfig | None, rng: SeededRng | None = None,
    row_ids: np.ndarray | None = None, frozen_Z: np.ndarray | None = None,
):
    """Worst-case batch loss and its gradients in (beta, model parameters).

    Runs the inner maximization per example (through the offset-composed
    scores, so the frozen offsets contribute no input gradient), then
    differentiates the batch-mean loss at the found perturbations. Pass
    ``frozen_Z`` to skip the maximization and differentiate at fixed
    perturbations.
    """
    X_batch = np.asarray(X_batch, dtype=np.float64)
    y_batch = np.asarray(y_batch, dtype=np.int64)
    n = X_batch.shape[0]
    obj = _OffsetObjective(model, beta, offsets)
    if frozen_Z is not None:
        Z = np.asarray(frozen_Z, dtype=np.float64)
    elif pgd is None or ball.delta == 0.0:
        Z = np.zeros_like(X_batch)
    else:
        rng = rng if rng is not None else pgd.rng
        Z, _, _ = batched_ce_pgd(
            obj, X_batch, y_batch, ball,
            steps=pgd.steps, step=pgd.resolved_step(ball),
            restarts=pgd.restarts if pgd.random_start else 0,
            include_zero_start=pgd.include_zero_start or not pgd.random_start,
            rng=rng, row_ids=row_ids,
        )
    Xp = X_batch + Z
    f_vals = model.scores_batch(Xp)
    V = offsets + beta * f_vals
    loss = float(_ce_rows(V, y_batch).mean())
    P = softmax(V)
    P[np.arange(n), y_batch] -= 1.0
    d_beta = float((P * f_vals).sum() / n)
    param_grads, _ = model.grads_batch(Xp, (beta / n) * P)
    return loss, d_beta, param_grads, Z


@dataclass
class StagewiseResult:
    ensemble: AdditiveEnsemble
    trace: list[dict]


def compute_offsets(ensemble: AdditiveEnsemble, X: np.ndarray) -> np.ndarray:
    """Per-example ensemble scores at the unperturbed points; the only
    state the offset approximation keeps from earlier stages.
    """
    return ensemble.scores_batch(X)


def run_stagewise(dataset: Dataset, config: StagewiseConfig) -> StagewiseResult:
    """Train the full additive ensemble, stage by stage."""
    X, y, k, m = dataset.X, dataset.y, dataset.k, dataset.m
    n_batches = math.ceil(m / config.batch_size)
    ensemble = AdditiveEnsemble([], k)
    trace: list[dict] = []
    model = None

    for t in range(1, config.stages + 1):
        stage_t0 = time.perf_counter()
        counter = {"prior_perturbed_evals": 0}
        offsets_all = compute_offsets(ensemble, X)
        is_warm = config.warm_start and t > 1 and model is not None
        if is_warm:
            model = model.copy()
            beta = config.beta_warm
        else:
            model = config.base_factory(config.rng.child(_INIT, t))
            beta = config.beta_cold
        n_epochs = epochs_for_stage(t, config.n1)
        total_updates = n_epochs * n_batches
        done = 0
        noise = None
        if config.noise_sigma > 0.0:
            gen = config.rng.child(_INIT, t, 1).generator()
            noise = config.noise_sigma * gen.standard_normal((config.noise_samples, dataset.d))

        for epoch in range(1, n_epochs + 1):
            epoch_t0 = time.perf_counter()
            perm = config.rng.child(_SHUFFLE, t, epoch).generator().permutation(m)
            losses = []
            lr = 0.0
            for b in range(n_batches):
                idx = perm[b * config.batch_size : (b + 1) * config.batch_size]
                lr = cyclic_lr(done / total_updates, config.eta_max)
                loss, d_beta, pgrads = _stage_update_grads(
                    ensemble, model, beta, offsets_all, X, y, idx,
                    config, counter, t, epoch, noise,
                )
                beta -= lr * d_beta
                model.sgd_step(pgrads, lr)
                losses.append(loss)
                done += 1
            if not (math.isfinite(beta) and np.all(np.isfinite(model.get_params()))):
                raise NonFiniteParametersError(t, epoch, trace)
            trace.append(
                {
                    "record": "epoch",
                    "stage": t,
                    "epoch": epoch,
                    "lr_last": lr,
                    "loss": float(np.mean(losses)),
                    "wall_time": time.perf_counter() - epoch_t0,
                }
            )

        ensemble = ensemble.extended(beta, model)
        clean_acc = float(np.mean(ensemble.predict_batch(X) == y))
        robust_acc, robust_loss = evaluate_robust(ensemble, dataset, config.ball, config)
        trace.append(
            {
                "record": "stage",
                "stage": t,
                "epochs": n_epochs,
                "beta": beta,
                "clean_acc": clean_acc,
                "robust_acc": robust_acc,
                "robust_loss": robust_loss,
                "prior_perturbed_evals": counter["prior_perturbed_evals"],
                "wall_time": time.perf_counter() - stage_t0,
            }
        )
    return StagewiseResult(ensemble, trace)


def _stage_update_grads(
    ensemble, model, beta, offsets_all, X, y, idx, config, counter, t, epoch, noise
):
    Xb = X[idx]
    yb = y[idx]
    n = Xb.shape[0]
    pgd = config.pgd
    if not config.exact_objective and noise is None:
        loss, d_beta, pgrads, _ = stage_objective_grad(
            offsets_all[idx], beta, model, Xb, yb, config.ball, pgd,
            rng=config.rng.child(_PGD_START, t, epoch), row_ids=idx,
        )
        return loss, d_beta, pgrads
    base = model if noise is None else _NoiseAveraged(model, noise)
    if config.exact_objective:
        prior = ensemble if noise is None else _NoiseAveraged(ensemble, noise)
        obj = _ExactObjective(prior, base, beta, counter)
    else:
        obj = _OffsetObjective(base, beta, offsets_all[idx])

    if pgd is None or config.ball.delta == 0.0:
        Z = np.zeros_like(Xb)
    else:
        Z, _, _ = batched_ce_pgd(
            obj, Xb, yb, config.ball,
            steps=pgd.steps, step=pgd.resolved_step(config.ball),
            restarts=pgd.restarts if pgd.random_start else 0,
            include_zero_start=pgd.include_zero_start or not pgd.random_start,
            rng=config.rng.child(_PGD_START, t, epoch), row_ids=idx,
        )

    Xp = Xb + Z
    f_vals = base.scores_batch(Xp)
    if config.exact_objective:
        prior = ensemble if noise is None else _NoiseAveraged(ensemble, noise)
        counter["prior_perturbed_evals"] += Xp.shape[0]
        V = prior.scores_batch(Xp) + beta * f_vals
    else:
        V = offsets_all[idx] + beta * f_vals
    loss = float(_ce_rows(V, yb).mean())
    P = softmax(V)
    P[np.arange(n), yb] -= 1.0
    d_beta = float((P * f_vals).sum() / n)
    upstream = (beta / n) * P
    if noise is None:
        pgrads, _ = model.grads_batch(Xp, upstream)
    else:
        pgrads = None
        for eps in noise:
            g, _ = model.grads_batch(Xp + eps, upstream / noise.shape[0])
            if pgrads is None:
                pgrads = g
            else:
                pgrads = [(a + da, b + db) for (a, b), (da, db) in zip(pgrads, g)]
    return loss, d_beta, pgrads


def evaluate_robust(ensemble, dataset: Dataset, ball: PerturbationBall, config: StagewiseConfig):
    """PGD-estimated robust accuracy and mean worst-case loss on the
    training set, using the scaled-down evaluation recipe (20 steps at
    1.3*delta/20 by default, a few random restarts plus the zero start).
    An example counts as robust only if no visited iterate misclassifies.
    """
    step = 1.3 * ball.delta / config.eval_pgd_steps if ball.delta > 0 else 1.0
    _, best_loss, flipped = batched_ce_pgd(
        ensemble, dataset.X, dataset.y, ball,
        steps=config.eval_pgd_steps, step=step,
        restarts=config.eval_pgd_restarts, include_zero_start=True,
        rng=config.rng.child(_EVAL), row_ids=np.arange(dataset.m),
    )
    return float(np.mean(~flipped)), float(np.mean(best_loss))
