"""Shared oracles for the test suite.

These stay independent of the library paths they check: reachability by
dense enumeration, robust losses recomputed from first principles, and
finite-difference gradients.
"""

import math

import numpy as np
import pytest

from robustboost.core import PerturbationBall


def brute_reach_set(h, x, ball: PerturbationBall, n: int = 10_000) -> set[int]:
    """Labels attained by h over a dense enumeration of the ball."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    if ball.delta == 0.0:
        return {int(h.predict(x))}
    if d == 1:
        zs = np.linspace(-ball.delta, ball.delta, n).reshape(-1, 1)
    else:
        per = max(3, int(math.ceil(n ** (1.0 / d))))
        axes = np.meshgrid(*([np.linspace(-ball.delta, ball.delta, per)] * d), indexing="ij")
        zs = np.stack([a.ravel() for a in axes], axis=1)
        if not ball.is_linf:
            zs = zs[np.linalg.norm(zs, axis=1) <= ball.delta]
    return {int(h.predict(x + z)) for z in zs}


def brute_robust_pair_loss(h, ball, x, y, y_wrong, n=10_000) -> int:
    reach = brute_reach_set(h, x, ball, n)
    return int(y_wrong in reach) - int(reach == {y})


def brute_ova_loss(h, ball, x, y, n=10_000) -> int:
    reach = brute_reach_set(h, x, ball, n)
    return 1 if reach != {y} else -1


def central_diff(fn, x0: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.empty_like(x0)
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = h
        g[i] = (fn(x0 + e) - fn(x0 - e)) / (2.0 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


@pytest.fixture
def linf():
    def make(delta: float) -> PerturbationBall:
        return PerturbationBall(math.inf, delta)

    return make


@pytest.fixture
def l2():
    def make(delta: float) -> PerturbationBall:
        return PerturbationBall(2.0, delta)

    return make
