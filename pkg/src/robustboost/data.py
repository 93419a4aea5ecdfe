"""Dataset ingestion and synthesis.

CSV format: header ``label,f1,...,fd``; labels are integers 1..k
(converted to the library's 0-based labels on load). Synthetic
generators are deterministic in their seed and record the robust
separation margin their geometry guarantees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from robustboost.core import Dataset, RobustBoostError, SeededRng


class ParseError(RobustBoostError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class LabelOutOfRangeError(RobustBoostError):
    def __init__(self, line: int, label):
        super().__init__(f"line {line}: label {label!r} outside 1..k")
        self.line = line


class RaggedRowError(RobustBoostError):
    def __init__(self, line: int, expected: int, got: int):
        super().__init__(f"line {line}: expected {expected} fields, got {got}")
        self.line = line


def load_dataset_csv(path: str, k: int | None = None) -> Dataset:
    """Read a labeled CSV; k is inferred as the maximum label unless given."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(1, "empty file")
    header = [c.strip() for c in lines[0].split(",")]
    if len(header) < 2 or header[0] != "label":
        raise ParseError(1, "header must be label,f1,...,fd")
    d = len(header) - 1
    labels: list[int] = []
    rows: list[list[float]] = []
    for ln, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        fields = raw.split(",")
        if len(fields) != d + 1:
            raise RaggedRowError(ln, d + 1, len(fields))
        try:
            label = int(fields[0])
        except ValueError:
            raise ParseError(ln, f"label {fields[0]!r} is not an integer") from None
        if label < 1 or (k is not None and label > k):
            raise LabelOutOfRangeError(ln, label)
        try:
            rows.append([float(v) for v in fields[1:]])
        except ValueError:
            raise ParseError(ln, "non-numeric feature value") from None
        labels.append(label)
    if not rows:
        raise ParseError(2, "no data rows")
    y = np.array(labels, dtype=np.int64) - 1
    kk = k if k is not None else int(y.max()) + 1
    return Dataset(np.array(rows, dtype=np.float64), y, max(kk, 2))


def save_dataset_csv(dataset: Dataset, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label," + ",".join(f"f{j+1}" for j in range(dataset.d)) + "\n")
        for i in range(dataset.m):
            feats = ",".join(f"{v:.17g}" for v in dataset.X[i])
            fh.write(f"{int(dataset.y[i]) + 1},{feats}\n")


GENERATORS = ("stripes-1d", "gaussian-blobs", "concentric-rings")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic dataset. ``separation`` is the stripe margin
    parameter for stripes-1d, the inter-center l-inf distance for blobs,
    and the ring-radius gap for rings.
    """

    generator: str
    m: int
    k: int
    d: int = 1
    separation: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}; choose from {GENERATORS}")
        if self.m < 1 or self.k < 2:
            raise ValueError("need m >= 1 and k >= 2")
        if not (self.separation > 0):
            raise ValueError("separation must be positive")

    @classmethod
    def parse(cls, text: str) -> "SyntheticSpec":
        """Parse 'name:key=value,...' as used on the command line, e.g.
        'stripes-1d:m=4,k=2,margin=1.5'.
        """
        name, _, rest = text.partition(":")
        kwargs: dict = {}
        if rest:
            for item in rest.split(","):
                key, _, value = item.partition("=")
                key = key.strip()
                if key == "margin":
                    key = "separation"
                if key in ("m", "k", "d", "seed"):
                    kwargs[key] = int(value)
                elif key == "separation":
                    kwargs[key] = float(value)
                else:
                    raise ValueError(f"unknown synthetic parameter {key!r}")
        return cls(generator=name.strip(), **kwargs)


def _class_sizes(m: int, k: int) -> list[int]:
    base = m // k
    return [base + (1 if j < m % k else 0) for j in range(k)]


def synth_stripes_1d(spec: SyntheticSpec):
    """One unit-spaced band of points per class on the real line, band
    centers 2*separation apart and symmetric around zero.
    """
    sizes = _class_sizes(spec.m, spec.k)
    xs, ys = [], []
    for j, n_j in enumerate(sizes):
        center = (2 * j - (spec.k - 1)) * spec.separation
        for i in range(n_j):
            xs.append(center + (i - (n_j - 1) / 2.0))
            ys.append(j)
    X = np.array(xs, dtype=np.float64).reshape(-1, 1)
    y = np.array(ys, dtype=np.int64)
    order = np.argsort(X[:, 0], kind="stable")
    X, y = X[order], y[order]
    margin = math.inf
    for j in range(spec.k - 1):
        hi_j = X[y == j, 0].max() if np.any(y == j) else -math.inf
        lo_next = X[y == j + 1, 0].min() if np.any(y == j + 1) else math.inf
        margin = min(margin, (lo_next - hi_j) / 2.0)
    return Dataset(X, y, spec.k), {"robust_margin": margin, "norm": "inf"}


def _lattice_centers(k: int, d: int, separation: float) -> np.ndarray:
    side = max(2, math.ceil(k ** (1.0 / d)))
    centers = []
    def rec(prefix):
        if len(prefix) == d:
            centers.append(prefix[:])
            return
        for v in range(side):
            rec(prefix + [v])
    rec([])
    centers = np.array(centers[:k], dtype=np.float64) * separation
    return centers


def synth_gaussian_blobs(spec: SyntheticSpec):
    """k Gaussian blobs with sigma = separation/4 and per-coordinate noise
    truncation at one sigma, so adjacent blobs keep a guaranteed l-inf
    margin of separation/4.
    """
    d = max(spec.d, 2)
    centers = _lattice_centers(spec.k, d, spec.separation)
    sigma = spec.separation / 4.0
    cap = spec.separation / 4.0
    gen = SeededRng(spec.seed).generator()
    sizes = _class_sizes(spec.m, spec.k)
    X = np.empty((spec.m, d))
    y = np.empty(spec.m, dtype=np.int64)
    pos = 0
    for j, n_j in enumerate(sizes):
        eps = np.clip(sigma * gen.standard_normal((n_j, d)), -cap, cap)
        X[pos : pos + n_j] = centers[j] + eps
        y[pos : pos + n_j] = j
        pos += n_j
    min_dist = min(
        float(np.abs(centers[a] - centers[b]).max())
        for a in range(spec.k)
        for b in range(a + 1, spec.k)
    )
    margin = min_dist / 2.0 - cap
    return Dataset(X, y, spec.k), {"robust_margin": margin, "norm": "inf"}


def synth_concentric_rings(spec: SyntheticSpec):
    """k concentric rings in the plane, radial gap = separation, radial
    noise capped at separation/4; guaranteed l2 margin separation/4.
    """
    gen = SeededRng(spec.seed).generator()
    sizes = _class_sizes(spec.m, spec.k)
    cap = spec.separation / 4.0
    X = np.empty((spec.m, 2))
    y = np.empty(spec.m, dtype=np.int64)
    pos = 0
    for j, n_j in enumerate(sizes):
        r0 = spec.separation * (j + 1)
        angles = gen.uniform(0.0, 2.0 * math.pi, n_j)
        radii = r0 + gen.uniform(-cap, cap, n_j)
        X[pos : pos + n_j, 0] = radii * np.cos(angles)
        X[pos : pos + n_j, 1] = radii * np.sin(angles)
        y[pos : pos + n_j] = j
        pos += n_j
    margin = spec.separation / 2.0 - cap
    return Dataset(X, y, spec.k), {"robust_margin": margin, "norm": "2"}


def synth_dataset(spec: SyntheticSpec):
    """Generate (Dataset, metadata); metadata records the separation margin
    the construction guarantees and the norm it holds in.
    """
    if spec.generator == "stripes-1d":
        return synth_stripes_1d(spec)
    if spec.generator == "gaussian-blobs":
        return synth_gaussian_blobs(spec)
    return synth_concentric_rings(spec)
