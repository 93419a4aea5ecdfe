"""Hot numeric kernels, JIT-compiled with numba when available.

Set ``ROBUSTBOOST_NUMBA=0`` to force the pure-numpy (interpreted) path;
the same source serves both modes. ``benchmarks/bench_kernels.py``
compares the two.
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("ROBUSTBOOST_NUMBA", "1") != "0"

if USE_NUMBA:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

if not USE_NUMBA:

    def _njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def _stump_pair_losses(X, y, pair_i, pair_y, feat, thr, left, right, delta):
    """Robust pairwise losses of every candidate stump on every incorrect pair.

    Entry [s, p] is the {-1, 0, +1} robust loss of stump s on pair p for an
    l-inf budget delta: +1 when the wrong label is reachable and the true
    label is not forced, 0 when both hold, -1 when the true label is forced.
    """
    n_stumps = feat.shape[0]
    n_pairs = pair_i.shape[0]
    out = np.empty((n_stumps, n_pairs), dtype=np.int8)
    for s in range(n_stumps):
        j = feat[s]
        th = thr[s]
        lf = left[s]
        rg = right[s]
        for p in range(n_pairs):
            i = pair_i[p]
            xj = X[i, j]
            yi = y[i]
            yw = pair_y[p]
            if xj + delta <= th:  # interval entirely left of the threshold
                wrong = 1 if lf == yw else 0
                forced = 1 if lf == yi else 0
            elif xj - delta > th:  # entirely right
                wrong = 1 if rg == yw else 0
                forced = 1 if rg == yi else 0
            else:  # straddles: both sides reachable
                wrong = 1 if (lf == yw or rg == yw) else 0
                forced = 1 if (lf == yi and rg == yi) else 0
            out[s, p] = wrong - forced
    return out


def _stump_ova_losses(X, y, feat, thr, left, right, delta):
    """One-vs-all robust losses of every candidate stump on every example:
    +1 when any wrong label is reachable, -1 when the true label is forced.
    """
    n_stumps = feat.shape[0]
    m = X.shape[0]
    out = np.empty((n_stumps, m), dtype=np.int8)
    for s in range(n_stumps):
        j = feat[s]
        th = thr[s]
        lf = left[s]
        rg = right[s]
        for i in range(m):
            xj = X[i, j]
            yi = y[i]
            if xj + delta <= th:
                forced = lf == yi
            elif xj - delta > th:
                forced = rg == yi
            else:
                forced = lf == yi and rg == yi
            out[s, i] = -1 if forced else 1
    return out


def _stump_mixture_vote_ok(X, y, feat, thr, left, right, w, Z, k):
    """Check, per example, whether the weighted plurality vote of a stump
    mixture predicts the true label at x + z for every perturbation row of Z.
    Ties break to the lowest label index.
    """
    m = X.shape[0]
    n_z = Z.shape[0]
    n_h = feat.shape[0]
    ok = np.ones(m, dtype=np.bool_)
    votes = np.empty(k, dtype=np.float64)
    for i in range(m):
        yi = y[i]
        for g in range(n_z):
            for c in range(k):
                votes[c] = 0.0
            for t in range(n_h):
                xv = X[i, feat[t]] + Z[g, feat[t]]
                if xv <= thr[t]:
                    votes[left[t]] += w[t]
                else:
                    votes[right[t]] += w[t]
            best = 0
            for c in range(1, k):
                if votes[c] > votes[best]:
                    best = c
            if best != yi:
                ok[i] = False
                break
    return ok


stump_pair_losses = _njit(cache=True)(_stump_pair_losses)
stump_ova_losses = _njit(cache=True)(_stump_ova_losses)
stump_mixture_vote_ok = _njit(cache=True)(_stump_mixture_vote_ok)

# uncompiled references, kept for benchmarking and for path-equality tests
PY_IMPLS = {
    "stump_pair_losses": _stump_pair_losses,
    "stump_ova_losses": _stump_ova_losses,
    "stump_mixture_vote_ok": _stump_mixture_vote_ok,
}
