import math

import numpy as np
import pytest

from conftest import brute_robust_pair_loss
from robustboost.core import (
    Dataset,
    FiniteDistribution,
    SeededRng,
    build_incorrect_pairs,
    normalize,
)
from robustboost.hypotheses import DecisionStump, LinearScorer, Mlp
from robustboost.losses import (
    ExactEvaluator,
    GridEvaluator,
    SameLabelError,
    SupportMismatchError,
    base_loss,
    ce_loss,
    materialize_robust_multilabel,
    ova_loss,
    robust_ce_loss,
    robust_pair_loss,
    weighted_err,
    weighted_err_delta,
    weighted_err_ova,
)
from robustboost.pgd import PgdConfig


class Constant:
    def __init__(self, label):
        self.label = label

    def predict(self, x):
        return self.label


class MultiLabel:
    def __init__(self, labels):
        self.labels = frozenset(labels)

    def predict_set(self, x):
        return self.labels


class TestBaseLoss:
    def test_correct_prediction(self):
        assert base_loss(Constant(0), np.zeros(1), 0, 1) == -1

    def test_adversarial_label(self):
        assert base_loss(Constant(1), np.zeros(1), 0, 1) == 1

    def test_multilabel_both(self):
        assert base_loss(MultiLabel({0, 1}), np.zeros(1), 0, 1) == 0

    def test_same_label_rejected(self):
        with pytest.raises(SameLabelError):
            base_loss(Constant(0), np.zeros(1), 1, 1)


class TestRobustPairLoss:
    def test_delta_zero_collapse(self, linf):
        gen = np.random.default_rng(0)
        ev = ExactEvaluator()
        for _ in range(50):
            stump = DecisionStump(0, float(gen.normal()), int(gen.integers(2)), int(gen.integers(2)))
            x = gen.normal(size=1)
            assert robust_pair_loss(stump, ev, linf(0.0), x, 0, 1) == base_loss(stump, x, 0, 1)

    def test_straddle_is_plus_one(self, linf):
        stump = DecisionStump(0, 0.0, 0, 1)
        got = robust_pair_loss(stump, ExactEvaluator(), linf(1.0), np.array([0.5]), 0, 1)
        assert got == brute_robust_pair_loss(stump, linf(1.0), np.array([0.5]), 0, 1) == 1

    def test_far_left_is_minus_one(self, linf):
        stump = DecisionStump(0, 0.0, 0, 1)
        got = robust_pair_loss(stump, ExactEvaluator(), linf(1.0), np.array([-2.0]), 0, 1)
        assert got == brute_robust_pair_loss(stump, linf(1.0), np.array([-2.0]), 0, 1) == -1

    def test_monotone_in_delta(self, linf):
        gen = np.random.default_rng(3)
        ev = ExactEvaluator()
        for _ in range(200):
            stump = DecisionStump(0, float(gen.normal()), int(gen.integers(2)), int(gen.integers(2)))
            x = gen.normal(size=1)
            deltas = sorted(gen.uniform(0, 2, size=3))
            vals = [robust_pair_loss(stump, ev, linf(d), x, 0, 1) for d in deltas]
            assert vals == sorted(vals)


class TestOvaLoss:
    def test_forced_true_label(self, linf):
        assert ova_loss(DecisionStump(0, 0.0, 1, 1), ExactEvaluator(), linf(0.5), np.array([9.0]), 1) == -1

    def test_reachable_wrong(self, linf):
        assert ova_loss(DecisionStump(0, 0.0, 0, 1), ExactEvaluator(), linf(1.0), np.array([0.5]), 0) == 1

    def test_delta_zero_correct(self, linf):
        assert ova_loss(DecisionStump(0, 0.0, 1, 0), ExactEvaluator(), linf(0.0), np.array([-1.0]), 1) == -1

    def test_dominates_pair_loss(self, linf, l2):
        gen = np.random.default_rng(4)
        ev = ExactEvaluator()
        for trial in range(1000):
            d = int(gen.integers(1, 3))
            x = gen.normal(size=d)
            ball = (linf if trial % 2 else l2)(float(gen.uniform(0, 1.5)))
            k = int(gen.integers(2, 4))
            if trial % 2:
                h = DecisionStump(int(gen.integers(d)), float(gen.normal()), int(gen.integers(k)), int(gen.integers(k)))
            else:
                h = LinearScorer(gen.normal(size=(2, d)), gen.normal(size=2))
                k = 2
            y = int(gen.integers(k))
            wrongs = [c for c in range(k) if c != y]
            yw = int(wrongs[gen.integers(len(wrongs))])
            if isinstance(h, DecisionStump) and not ball.is_linf and d > 1:
                continue
            assert robust_pair_loss(h, ev, ball, x, y, yw) <= ova_loss(h, ev, ball, x, y)


class TestCrossEntropy:
    def test_uniform_two(self):
        assert ce_loss(np.zeros(2), 0) == pytest.approx(math.log(2), abs=1e-12)

    def test_uniform_three(self):
        assert ce_loss(np.zeros(3), 1) == pytest.approx(math.log(3), abs=1e-12)

    def test_large_margin(self):
        assert ce_loss(np.array([10.0, 0.0]), 0) == pytest.approx(math.log(1 + math.exp(-10)), rel=1e-9)

    def test_no_spurious_overflow(self):
        # naive exp would overflow; the stabilized form stays exact
        assert ce_loss(np.array([1000.0, -1000.0]), 1) == pytest.approx(2000.0)

    def test_nonnegative(self):
        gen = np.random.default_rng(5)
        for _ in range(100):
            v = gen.normal(scale=10, size=4)
            assert ce_loss(v, int(gen.integers(4))) >= 0.0


class TestRobustCe:
    def test_delta_zero_equals_clean(self, linf):
        gen = np.random.default_rng(6)
        lin = LinearScorer(gen.normal(size=(3, 2)), gen.normal(size=3))
        x = gen.normal(size=2)
        cfg = PgdConfig(steps=5, rng=SeededRng(0))
        assert robust_ce_loss(lin, cfg, linf(0.0), x, 1) == ce_loss(lin.scores(x), 1)

    def test_linear_closed_form(self, linf):
        gen = np.random.default_rng(7)
        for i in range(30):
            lin = LinearScorer(gen.normal(size=(2, 3)), gen.normal(size=2))
            x = gen.normal(size=3)
            y = int(gen.integers(2))
            ball = linf(float(gen.uniform(0.1, 1.0)))
            wd = lin.W[y] - lin.W[1 - y]
            z_star = -ball.delta * np.sign(wd)
            analytic = ce_loss(lin.scores(x + z_star), y)
            got = robust_ce_loss(lin, PgdConfig(steps=7, restarts=2, rng=SeededRng(i)), ball, x, y)
            assert got == pytest.approx(analytic, abs=1e-6)

    def test_linear_l2_closed_form(self, l2):
        # binary linear CE is monotone in the margin; the l2 worst case sits
        # at z = -delta * w_diff / ||w_diff||
        gen = np.random.default_rng(17)
        for i in range(30):
            lin = LinearScorer(gen.normal(size=(2, 3)), gen.normal(size=2))
            x = gen.normal(size=3)
            y = int(gen.integers(2))
            ball = l2(float(gen.uniform(0.1, 1.0)))
            wd = lin.W[y] - lin.W[1 - y]
            z_star = -ball.delta * wd / np.linalg.norm(wd)
            analytic = ce_loss(lin.scores(x + z_star), y)
            got = robust_ce_loss(lin, PgdConfig(steps=10, restarts=2, rng=SeededRng(i)), ball, x, y)
            assert got == pytest.approx(analytic, rel=1e-6)

    def test_at_least_clean(self, linf):
        gen = np.random.default_rng(8)
        for i in range(20):
            mlp = Mlp.random([2, 6, 3], SeededRng(100 + i))
            x = gen.normal(size=2)
            y = int(gen.integers(3))
            got = robust_ce_loss(mlp, PgdConfig(steps=5, rng=SeededRng(i)), linf(0.4), x, y)
            assert got >= ce_loss(mlp.scores(x), y) - 1e-12


def stump_dataset():
    X = np.array([[-2.0], [0.5], [3.0]])
    y = np.array([0, 0, 1])
    return Dataset(X, y, 2)


class TestWeightedErrors:
    def test_perfect_robust_h(self, linf):
        ds = stump_dataset()
        pairs = build_incorrect_pairs(ds)
        h = DecisionStump(0, 1.5, 0, 1)
        D = normalize(np.random.default_rng(0).random(len(pairs)))
        assert weighted_err_delta(h, ExactEvaluator(), linf(0.5), ds, pairs, D) == pytest.approx(-1.0)

    def test_half_half_is_zero(self):
        ds = Dataset(np.array([[0.0], [1.0]]), np.array([0, 1]), 2)
        pairs = build_incorrect_pairs(ds)
        h = Constant(0)
        D = FiniteDistribution.uniform(2)
        assert weighted_err(h, ds, pairs, D) == pytest.approx(0.0)

    def test_matches_brute_force_sum(self, linf):
        ds = stump_dataset()
        pairs = build_incorrect_pairs(ds)
        ball = linf(0.7)
        h = DecisionStump(0, 0.2, 0, 1)
        D = FiniteDistribution.uniform(len(pairs))
        expect = np.mean(
            [
                brute_robust_pair_loss(h, ball, ds.X[i], int(ds.y[i]), int(yw))
                for i, yw in pairs.pairs()
            ]
        )
        got = weighted_err_delta(h, ExactEvaluator(), ball, ds, pairs, D)
        assert got == pytest.approx(expect)

    def test_support_mismatch(self, linf):
        ds = stump_dataset()
        pairs = build_incorrect_pairs(ds)
        D = FiniteDistribution.uniform(len(pairs) + 1)
        with pytest.raises(SupportMismatchError):
            weighted_err(Constant(0), ds, pairs, D)
        with pytest.raises(SupportMismatchError):
            weighted_err_ova(Constant(0), ExactEvaluator(), linf(0.1), ds, D)

    def test_affine_in_distribution(self, linf):
        ds = stump_dataset()
        pairs = build_incorrect_pairs(ds)
        gen = np.random.default_rng(9)
        h = DecisionStump(0, 0.0, 0, 1)
        ball = linf(0.5)
        for _ in range(20):
            D1 = normalize(gen.random(len(pairs)))
            D2 = normalize(gen.random(len(pairs)))
            lam = float(gen.random())
            lhs = weighted_err_delta(h, ExactEvaluator(), ball, ds, pairs, D1.mix(D2, lam))
            rhs = lam * weighted_err_delta(h, ExactEvaluator(), ball, ds, pairs, D1) + (
                1 - lam
            ) * weighted_err_delta(h, ExactEvaluator(), ball, ds, pairs, D2)
            assert lhs == pytest.approx(rhs, abs=1e-12)
            assert -1.0 <= lhs <= 1.0


class TestReductionIdentity:
    def test_materialized_multilabel_reproduces_robust_loss(self, linf):
        gen = np.random.default_rng(10)
        ds = Dataset(gen.normal(size=(6, 1)), gen.integers(0, 3, size=6), 3)
        pairs = build_incorrect_pairs(ds)
        ev = ExactEvaluator()
        for _ in range(20):
            h = DecisionStump(0, float(gen.normal()), int(gen.integers(3)), int(gen.integers(3)))
            ball = linf(float(gen.uniform(0, 1.5)))
            tab = materialize_robust_multilabel(h, ev, ball, ds)
            for i, yw in pairs.pairs():
                lhs = robust_pair_loss(h, ev, ball, ds.X[i], int(ds.y[i]), int(yw))
                rhs = base_loss(tab, ds.X[i], int(ds.y[i]), int(yw))
                assert lhs == rhs


class TestSurrogateBound:
    def test_holds_on_random_predictors(self, linf, l2):
        gen = np.random.default_rng(11)
        grid_ev = GridEvaluator(n_total=2500)
        cfg_base = PgdConfig(steps=20, restarts=3)
        for trial in range(120):
            d = int(gen.integers(1, 3))
            k = int(gen.integers(2, 4))
            if trial % 2:
                f = LinearScorer(gen.normal(size=(k, d)), gen.normal(size=k))
            else:
                f = Mlp.random([d, 5, k], SeededRng(3000 + trial))
            x = gen.normal(size=d)
            y = int(gen.integers(k))
            ball = (linf if trial % 3 else l2)(float(gen.uniform(0.05, 0.8)))
            left = ova_loss(_Argmax(f), grid_ev, ball, x, y)
            import dataclasses

            right = robust_ce_loss(f, dataclasses.replace(cfg_base, rng=SeededRng(trial)), ball, x, y)
            assert left <= (2.0 / math.log(2)) * right - 1.0 + 1e-9


class _Argmax:
    def __init__(self, f):
        self.f = f

    def predict(self, x):
        return int(np.argmax(self.f.scores(x)))

    def predict_batch(self, X):
        return np.argmax(self.f.scores_batch(X), axis=1)


class TestGridEvaluatorLimits:
    def test_high_dimension_rejected(self, linf):
        from robustboost.core import RobustBoostError

        ev = GridEvaluator(n_total=100)
        with pytest.raises(RobustBoostError):
            ev.reach_set(Constant(0), np.zeros(4), linf(0.1))

    def test_l2_grid_stays_in_ball(self, l2):
        from robustboost.losses import ball_grid

        Z = ball_grid(l2(0.7), 2, 2500)
        assert np.all(np.linalg.norm(Z, axis=1) <= 0.7 + 1e-12)
        assert (Z == 0.0).all(axis=1).any()  # center always present
