"""Projected gradient ascent over a perturbation ball.

Steps are signed for l-inf budgets and norm-scaled for l2 budgets, so a
step size of c*delta/steps can traverse the ball regardless of gradient
magnitude. The best iterate over all restarts (starts included) is
returned, never just the last one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from robustboost.core import PerturbationBall, RobustBoostError, SeededRng, ball_project


class NonFiniteLossError(RobustBoostError):
    """The objective returned NaN or infinity inside the ball."""


@dataclass(frozen=True)
class PgdConfig:
    """Hyperparameters of the inner maximizer.

    ``step_size=None`` resolves to 1.3 * delta / steps. The zero start is
    kept by default so the estimate never falls below the clean value.
    """

    steps: int = 7
    step_size: float | None = None
    restarts: int = 1
    random_start: bool = True
    include_zero_start: bool = True
    rng: SeededRng = field(default_factory=lambda: SeededRng(0))

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.step_size is not None and not (self.step_size > 0):
            raise ValueError(f"step_size must be > 0, got {self.step_size}")

    def resolved_step(self, ball: PerturbationBall) -> float:
        if self.step_size is not None:
            return self.step_size
        return 1.3 * ball.delta / self.steps


def random_ball_point(ball: PerturbationBall, d: int, gen: np.random.Generator) -> np.ndarray:
    """Uniform sample of the ball: coordinatewise for l-inf; direction on the
    sphere with the radius^(1/d) volume correction for l2.
    """
    if ball.is_linf:
        return gen.uniform(-ball.delta, ball.delta, size=d)
    g = gen.standard_normal(d)
    n = np.linalg.norm(g)
    if n == 0.0:
        return np.zeros(d)
    r = ball.delta * gen.random() ** (1.0 / d)
    return (r / n) * g


def _ascend(grad_fn, z0: np.ndarray, ball: PerturbationBall, steps: int, step: float):
    z = z0
    loss, grad = grad_fn(z)
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"objective returned {loss!r}")
    best_z, best_loss = z, loss
    for _ in range(steps):
        if ball.is_linf:
            direction = np.sign(grad)
        else:
            gn = np.linalg.norm(grad)
            if gn == 0.0:
                break
            direction = grad / gn
        if not np.any(direction):
            break
        z = ball_project(z + step * direction, ball)
        loss, grad = grad_fn(z)
        if not math.isfinite(loss):
            raise NonFiniteLossError(f"objective returned {loss!r}")
        if loss > best_loss:
            best_z, best_loss = z, loss
    return best_z, best_loss


def pgd_maximize(grad_fn, ball: PerturbationBall, config: PgdConfig, dim: int | None = None):
    """Maximize a differentiable objective over the ball.

    ``grad_fn`` maps a perturbation z to (loss, dloss/dz). Returns the best
    (z, loss) over every iterate of every restart. Restart r draws its
    start from an independent child stream, so adding restarts never
    changes (and hence never worsens) the earlier ones.
    """
    d = dim if dim is not None else getattr(grad_fn, "dim", None)
    if d is None:
        raise ValueError("pass dim= or set grad_fn.dim to the perturbation dimension")

    zero = np.zeros(d)
    if ball.delta == 0.0:
        loss, _ = grad_fn(zero)
        if not math.isfinite(loss):
            raise NonFiniteLossError(f"objective returned {loss!r}")
        return zero, loss

    step = config.resolved_step(ball)
    best_z, best_loss = None, -math.inf
    if config.include_zero_start:
        best_z, best_loss = _ascend(grad_fn, zero, ball, config.steps, step)
    # without random starts every restart repeats the zero run
    n_runs = config.restarts if config.random_start else (0 if config.include_zero_start else 1)
    for r in range(n_runs):
        if config.random_start:
            gen = config.rng.child(r).generator()
            z0 = random_ball_point(ball, d, gen)
        else:
            z0 = zero
        z, loss = _ascend(grad_fn, z0, ball, config.steps, step)
        if loss > best_loss:
            best_z, best_loss = z, loss
    return best_z, best_loss


def project_rows(Z: np.ndarray, ball: PerturbationBall) -> np.ndarray:
    """Row-wise ball projection for batched perturbations."""
    if ball.is_linf:
        return np.clip(Z, -ball.delta, ball.delta)
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    scale = np.where(norms > ball.delta, ball.delta / np.where(norms == 0, 1.0, norms), 1.0)
    out = Z * scale
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    bad = norms > ball.delta
    if np.any(bad):  # ulp overshoot after rescaling
        out = np.where(bad, out * (ball.delta / norms), out)
    return out


def batched_ce_pgd(
    f, X: np.ndarray, y: np.ndarray, ball: PerturbationBall,
    steps: int, step: float, restarts: int, include_zero_start: bool,
    rng: SeededRng, row_ids: np.ndarray | None = None,
):
    """Cross-entropy ascent for a whole batch at once.

    ``f`` needs scores_batch and backprop_input_batch. Returns
    (best_Z, best_loss, flipped): per row, the best perturbation found,
    its loss, and whether any visited iterate misclassified. Rows draw
    their random starts from streams keyed by ``row_ids`` (defaults to
    batch position), keeping results independent of batch composition.
    """
    from robustboost.losses import softmax

    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, d = X.shape
    ids = np.arange(n) if row_ids is None else np.asarray(row_ids)
    rows = np.arange(n)

    best_Z = np.zeros((n, d))
    best_loss = np.full(n, -np.inf)
    flipped = np.zeros(n, dtype=bool)

    def logsumexp_rows(V):
        mx = V.max(axis=1, keepdims=True)
        return (mx + np.log(np.exp(V - mx).sum(axis=1, keepdims=True)))[:, 0]

    def observe(Z):
        nonlocal best_Z, best_loss, flipped
        V = f.scores_batch(X + Z)
        L = logsumexp_rows(V) - V[rows, y]
        flipped |= np.argmax(V, axis=1) != y
        better = L > best_loss
        best_loss = np.where(better, L, best_loss)
        best_Z[better] = Z[better]
        return V, L

    if not np.all(np.isfinite(X)):
        raise NonFiniteLossError("non-finite inputs")

    starts = [np.zeros((n, d))] if include_zero_start or ball.delta == 0.0 else []
    if ball.delta > 0.0:
        for r in range(restarts):
            Z0 = np.empty((n, d))
            for i in range(n):
                gen = rng.child(r, int(ids[i])).generator()
                Z0[i] = random_ball_point(ball, d, gen)
            starts.append(Z0)
    if not starts:
        starts = [np.zeros((n, d))]

    for Z in starts:
        V, L = observe(Z)
        if ball.delta == 0.0:
            break
        for _ in range(steps):
            if not np.all(np.isfinite(L)):
                raise NonFiniteLossError("objective became non-finite during PGD")
            P = softmax(V)
            P[rows, y] -= 1.0
            G = f.backprop_input_batch(X + Z, P)
            if ball.is_linf:
                direction = np.sign(G)
            else:
                norms = np.linalg.norm(G, axis=1, keepdims=True)
                direction = np.where(norms == 0, 0.0, G / np.where(norms == 0, 1.0, norms))
            Z = project_rows(Z + step * direction, ball)
            V, L = observe(Z)
    return best_Z, best_loss, flipped


def pgd_target_labels(f, x: np.ndarray, ball: PerturbationBall, config: PgdConfig) -> set[int]:
    """Labels realizable by targeted ascents: for each class, push its margin
    against the current best rival and record whether the argmax ever lands
    on the target. A lower bound on the true reach set.
    """
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(f.scores(x)).shape[0]
    found = {int(np.argmax(f.scores(x)))}
    for target in range(k):
        if target in found:
            continue
        hit = [False]

        def grad_fn(z, target=target, hit=hit):
            v = f.scores(x + z)
            pred = int(np.argmax(v))
            if pred == target:
                hit[0] = True
            rival = int(np.argmax(np.where(np.arange(k) == target, -np.inf, v)))
            u = np.zeros(k)
            u[target] = 1.0
            u[rival] = -1.0
            return float(v[target] - v[rival]), f.backprop_input(x + z, u)

        grad_fn.dim = x.shape[0]
        pgd_maximize(grad_fn, ball, config)
        if hit[0]:
            found.add(target)
    return found
