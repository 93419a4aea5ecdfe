"""Shared domain types: examples, datasets, incorrect-pair sets, finite
distributions, perturbation balls, and deterministic RNG streams.

Labels are 0-based everywhere inside the library; 1-based labels appear
only in external formats (CSV files, model archives) and are converted
at the I/O boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class RobustBoostError(Exception):
    """Base class for all library errors."""


class NegativeWeightError(RobustBoostError):
    """A weight vector contained a negative entry."""


class AllZeroWeightsError(RobustBoostError):
    """A weight vector summed to zero and cannot be normalized."""


_MASK64 = (1 << 64) - 1


def _mix64(z: int) -> int:
    # splitmix64 finalizer; decorrelates derived stream ids
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class SeededRng:
    """Counter-based, splittable random stream keyed by (seed, stream).

    Identical (seed, stream) pairs yield identical draw sequences, so
    per-example streams are reproducible regardless of the order tasks
    run in. ``child(*ids)`` derives an independent stream; generators
    returned by ``generator()`` are fresh on every call.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.stream & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *ids: int) -> "SeededRng":
        s = self.stream & _MASK64
        for i in ids:
            s = _mix64(s ^ _mix64(i & _MASK64))
        return SeededRng(self.seed, s)


@dataclass(frozen=True)
class Example:
    """A single labeled point: feature vector ``x`` and 0-based label ``y``."""

    x: np.ndarray
    y: int

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"example x must be 1-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("example x contains non-finite coordinates")
        if self.y < 0:
            raise ValueError(f"label must be >= 0, got {self.y}")
        object.__setattr__(self, "x", x)


class Dataset:
    """A training set: feature matrix ``X`` (m, d), labels ``y`` (m,), class
    count ``k``. Immutable after construction.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, k: int):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"X must be (m>=1, d>=1), got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError(f"y shape {y.shape} does not match m={X.shape[0]}")
        if k < 2:
            raise ValueError(f"class count k must be >= 2, got {k}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        if y.min() < 0 or y.max() >= k:
            raise ValueError(f"labels must lie in [0, {k}), got range [{y.min()}, {y.max()}]")
        self.X = X
        self.y = y
        self.k = int(k)
        self.X.setflags(write=False)
        self.y.setflags(write=False)

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def example(self, i: int) -> Example:
        return Example(self.X[i], int(self.y[i]))

    @classmethod
    def from_examples(cls, examples: list[Example], k: int) -> "Dataset":
        X = np.stack([e.x for e in examples])
        y = np.array([e.y for e in examples], dtype=np.int64)
        return cls(X, y, k)

    def __repr__(self) -> str:
        return f"Dataset(m={self.m}, d={self.d}, k={self.k})"


@dataclass(frozen=True)
class IncorrectPairSet:
    """All (example index, wrong label) pairs of a dataset, in ascending
    (i, y') order. Size is exactly m*(k-1).
    """

    example_idx: np.ndarray
    wrong_label: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "example_idx", np.asarray(self.example_idx, dtype=np.int64))
        object.__setattr__(self, "wrong_label", np.asarray(self.wrong_label, dtype=np.int64))

    def __len__(self) -> int:
        return self.example_idx.shape[0]

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.example_idx.tolist(), self.wrong_label.tolist()))


def build_incorrect_pairs(dataset: Dataset) -> IncorrectPairSet:
    """Enumerate every (i, y') with y' != y_i, ascending in (i, y')."""
    m, k = dataset.m, dataset.k
    idx = np.repeat(np.arange(m, dtype=np.int64), k - 1)
    labels = np.arange(k, dtype=np.int64)
    wrong = np.empty(m * (k - 1), dtype=np.int64)
    for i in range(m):
        wrong[i * (k - 1) : (i + 1) * (k - 1)] = labels[labels != dataset.y[i]]
    return IncorrectPairSet(idx, wrong)


@dataclass(frozen=True)
class FiniteDistribution:
    """Nonnegative weights over a finite support, summing to one."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("weights must be a nonempty 1-D vector")
        if np.any(w < 0):
            raise NegativeWeightError("distribution weights must be nonnegative")
        total = float(w.sum())
        if not (1 - 1e-9 <= total <= 1 + 1e-9):
            raise ValueError(f"weights must sum to 1 within 1e-9, got {total!r}")
        object.__setattr__(self, "weights", w)
        w.setflags(write=False)

    def __len__(self) -> int:
        return self.weights.size

    @classmethod
    def uniform(cls, n: int) -> "FiniteDistribution":
        return cls(np.full(n, 1.0 / n))

    def mix(self, other: "FiniteDistribution", lam: float) -> "FiniteDistribution":
        return FiniteDistribution(lam * self.weights + (1 - lam) * other.weights)


def normalize(raw) -> FiniteDistribution:
    """Scale a nonnegative weight vector to sum to one.

    Raises NegativeWeightError for negative entries and
    AllZeroWeightsError when the sum is zero.
    """
    w = np.asarray(raw, dtype=np.float64)
    if np.any(w < 0):
        raise NegativeWeightError("cannot normalize: negative entry present")
    total = float(w.sum())
    if total == 0.0:
        raise AllZeroWeightsError("cannot normalize: all weights are zero")
    return FiniteDistribution(w / total)


@dataclass(frozen=True)
class PerturbationBall:
    """The adversary's budget: the p-norm ball of radius delta, p in {2, inf}."""

    p: float
    delta: float

    def __post_init__(self) -> None:
        if self.p not in (2, 2.0, math.inf):
            raise ValueError(f"p must be 2 or inf, got {self.p!r}")
        if not (self.delta >= 0):
            raise ValueError(f"delta must be >= 0, got {self.delta!r}")
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def is_linf(self) -> bool:
        return math.isinf(self.p)

    @property
    def dual_q(self) -> float:
        """Exponent of the dual norm (1 for p=inf, 2 for p=2)."""
        return 1.0 if self.is_linf else 2.0


def ball_project(z: np.ndarray, ball: PerturbationBall) -> np.ndarray:
    """Project ``z`` onto the ball. Exact identity on points already inside,
    which makes the projection exactly idempotent.
    """
    z = np.asarray(z, dtype=np.float64)
    delta = ball.delta
    if ball.is_linf:
        return np.clip(z, -delta, delta)
    out = z
    # rescaling can overshoot by an ulp; repeat until truly inside
    for _ in range(4):
        n = float(np.linalg.norm(out))
        if n <= delta:
            return out.copy() if out is z else out
        out = out * (delta / n)
    return out


def dual_norm(v: np.ndarray, ball: PerturbationBall) -> float:
    """Norm dual to the ball's norm: l1 for p=inf, l2 for p=2."""
    v = np.asarray(v, dtype=np.float64)
    if ball.is_linf:
        return float(np.abs(v).sum())
    return float(np.linalg.norm(v))
