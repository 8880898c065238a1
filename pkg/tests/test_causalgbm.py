import numpy as np
import pytest

from utb import CausalConfig, ConfigError, GrowthConfig, Loss, fit_causalgbm, predict_effect, predict_outcome
from utb.causalgbm import (
    HESSIAN_FLOOR,
    CausalCriterion,
    DegenerateLeafError,
    leaf_loss,
    leaf_weights,
    split_gain,
)
from utb.trees import grow_tree
from utb import bin_features

from conftest import BinaryCausalCriterion, make_dataset

STUMP = GrowthConfig(max_leaves=1)


def brute_objective(g, h, w, v, u, lam=0.0):
    """Second-order objective of one leaf written row by row.

    ``u`` holds one weight per treatment arm; control rows get no effect term.
    """
    total = 0.0
    for gi, hi, wi in zip(g, h, w):
        t = u[wi - 1] if wi > 0 else 0.0
        ind = 1.0 if wi > 0 else 0.0
        total += ind * gi * t + 0.5 * ind * hi * t * t + gi * v + 0.5 * hi * v * v + ind * hi * t * v
    return total + 0.5 * lam * (v * v + sum(x * x for x in u))


def random_leaf(rng, n=50, n_arms=2):
    w = np.concatenate([np.arange(n_arms), rng.integers(0, n_arms, n - n_arms)])
    g = rng.normal(size=n)
    h = rng.uniform(0.05, 1.0, n)
    return g, h, w


def agg(g, h, w, n_arms):
    return CausalCriterion(n_arms).row_stats(g, h, w).sum(axis=0)


class TestLoss:
    def test_squared(self):
        g, h = Loss("squared").grad_hess([1.0], [0.0])
        assert g[0] == -1.0 and h[0] == 1.0

    def test_logistic_at_zero(self):
        for y in (0.0, 1.0):
            g, h = Loss("logistic").grad_hess([y], [0.0])
            assert g[0] == 0.5 - y and h[0] == 0.25

    def test_hessian_floor(self):
        _, h = Loss("logistic").grad_hess([1.0, 0.0], [800.0, -800.0])
        assert np.all(h == HESSIAN_FLOOR)

    def test_unknown_loss(self):
        with pytest.raises(ConfigError):
            Loss("hinge")

    def test_value_is_stable(self):
        assert np.isfinite(Loss("logistic").value([1.0, 0.0], [1e4, -1e4])).all()


class TestLeafAlgebra:
    def test_first_iteration_squared(self, rng):
        y = rng.random(40)
        w = np.tile([0, 1], 20)
        g, h = Loss("squared").grad_hess(y, np.zeros(40))
        v, (u,) = leaf_weights(agg(g, h, w, 2), 2)
        assert v == pytest.approx(y[w == 0].mean(), rel=1e-12)
        assert u == pytest.approx(y[w == 1].mean() - y[w == 0].mean(), rel=1e-12)

    def test_stationary(self):
        stats = agg(np.zeros(6), np.ones(6), np.array([0, 1, 2, 0, 1, 2]), 3)
        v, u = leaf_weights(stats, 3)
        assert v == 0 and u == [0, 0]
        assert leaf_loss(stats, 3) == 0

    def test_identical_arms(self, rng):
        g, h, _ = random_leaf(rng, 10)
        g = np.concatenate([g, g[:5], g[:5]])
        h = np.concatenate([h, h[:5], h[:5]])
        w = np.array([0] * 10 + [1] * 5 + [2] * 5)
        _, (u1, u2) = leaf_weights(agg(g, h, w, 3), 3)
        assert u1 == u2

    def test_control_only_leaf(self, rng):
        g, h = rng.normal(size=10), rng.random(10) + 0.1
        stats = np.concatenate([agg(g, h, np.zeros(10, int), 1), np.zeros(3)])
        assert leaf_loss(stats, 2) == pytest.approx(-g.sum() ** 2 / (2 * h.sum()), rel=1e-12)

    @pytest.mark.parametrize("n_arms", [2, 3])
    @pytest.mark.parametrize("lam", [0.0, 0.7])
    def test_leaf_loss_matches_brute_objective(self, rng, n_arms, lam):
        for _ in range(100):
            g, h, w = random_leaf(rng, 50, n_arms)
            stats = agg(g, h, w, n_arms)
            v, u = leaf_weights(stats, n_arms, lam)
            brute = brute_objective(g, h, w, v, u) + 0.5 * lam * (v * v + sum(x * x for x in u))
            # the regularized leaf loss adds lambda to every hessian sum, i.e. 1/2 lambda v^2 once
            # for the full-leaf quadratic and 1/2 lambda u_a^2 for each arm
            assert leaf_loss(stats, n_arms, lam) == pytest.approx(brute, rel=1e-9, abs=1e-12)

    def test_split_gain_enumeration(self, rng):
        for _ in range(100):
            g, h, w = random_leaf(rng, 50, 2)
            x = rng.random(50)
            parent = agg(g, h, w, 2)
            for t in np.sort(x)[:-1]:
                L = x <= t
                if len(set(w[L])) < 2 or len(set(w[~L])) < 2:
                    continue
                expect = 0.0
                for part, sign in ((np.ones(50, bool), 1), (L, -1), (~L, -1)):
                    v, u = leaf_weights(agg(g[part], h[part], w[part], 2), 2)
                    expect += sign * brute_objective(g[part], h[part], w[part], v, u)
                got = split_gain(parent, agg(g[L], h[L], w[L], 2), agg(g[~L], h[~L], w[~L], 2), 2)
                assert got == pytest.approx(expect, rel=1e-9, abs=1e-10)

    def test_homogeneous_split_has_zero_gain(self, rng):
        g, h, w = random_leaf(rng, 20, 2)
        half = agg(g, h, w, 2)
        assert split_gain(2 * half, half, half, 2) == pytest.approx(0.0, abs=1e-9)

    def test_optimality_under_perturbation(self, rng):
        for _ in range(50):
            g, h, w = random_leaf(rng, 50, 3)
            v, u = leaf_weights(agg(g, h, w, 3), 3)
            best = brute_objective(g, h, w, v, u)
            ctrl = w == 0
            base_ctrl = brute_objective(g[ctrl], h[ctrl], w[ctrl], v, u)
            for eps in (1e-3, -1e-3, 0.5, -0.5):
                for a in range(2):
                    moved = list(u)
                    moved[a] += eps
                    assert brute_objective(g, h, w, v, moved) >= best - 1e-12
                assert brute_objective(g[ctrl], h[ctrl], w[ctrl], v + eps, u) >= base_ctrl - 1e-12

    def test_degenerate_leaf(self):
        stats = np.array([2.0, 1.0, 0.0, 1.0, 1.0, 1.0])
        with pytest.raises(DegenerateLeafError):
            CausalCriterion(2).leaf_value(stats)
        assert np.isfinite(CausalCriterion(2, reg_lambda=1.0).leaf_value(stats)).all()


class TestFit:
    def test_one_stump(self, rng):
        n = 10_000
        w = rng.integers(0, 2, n)
        y = rng.normal(size=n) + 0.4 * w
        d = make_dataset(rng.random((n, 3)), y, w)
        model = fit_causalgbm(d, CausalConfig(num_trees=1, shrinkage=1.0, growth=STUMP))
        X = rng.random((20, 3))
        np.testing.assert_allclose(predict_effect(model, X)[:, 0], y[w == 1].mean() - y[w == 0].mean(), atol=1e-10)
        np.testing.assert_allclose(predict_outcome(model, X), y[w == 0].mean(), atol=1e-10)

    def test_leaf_baseline_is_leaf_control_mean(self, continuous_synth):
        d = continuous_synth
        model = fit_causalgbm(d, CausalConfig(num_trees=1, shrinkage=1.0, growth=GrowthConfig(max_leaves=6)))
        tree = model.trees[0]
        leaves = tree.predict_leaf(d.features)
        base = predict_outcome(model, d.features)
        for k in range(tree.num_leaves):
            sel = leaves == k
            assert base[sel][0] == pytest.approx(d.outcome[sel & (d.treatment == 0)].mean(), rel=1e-10)

    def test_second_order_step_is_exact(self, continuous_synth):
        d = continuous_synth
        cfg = CausalConfig(num_trees=1, shrinkage=1.0, growth=GrowthConfig(max_leaves=8))
        model = fit_causalgbm(d, cfg)
        tree = model.trees[0]
        loss = Loss("squared")
        before = loss.value(d.outcome, np.zeros(d.n)).sum()
        margin = np.where(d.treatment == 0, predict_outcome(model, d.features, 0),
                          predict_outcome(model, d.features, 1))
        after = loss.value(d.outcome, margin).sum()
        g, h = loss.grad_hess(d.outcome, np.zeros(d.n))
        leaves = tree.predict_leaf(d.features)
        objective = sum(
            leaf_loss(agg(g[leaves == k], h[leaves == k], d.treatment[leaves == k], 2), 2)
            for k in range(tree.num_leaves)
        )
        assert after - before == pytest.approx(objective, rel=1e-8)

    def test_mse_descends(self, continuous_synth):
        losses = []
        fit_causalgbm(continuous_synth, CausalConfig(num_trees=30, shrinkage=0.1),
                      callback=lambda m, v: losses.append(v))
        assert len(losses) == 30
        assert np.all(np.diff(losses) <= 1e-12)

    def test_logistic_predictions_are_probabilities(self, small_synth):
        model = fit_causalgbm(small_synth, CausalConfig(num_trees=10, loss="logistic"))
        p0 = predict_outcome(model, small_synth.features, 0, scale="probability")
        assert np.all((p0 > 0) & (p0 < 1))
        eff = predict_effect(model, small_synth.features, scale="probability")
        p1 = predict_outcome(model, small_synth.features, 1, scale="probability")
        np.testing.assert_allclose(eff[:, 0], p1 - p0, atol=1e-15)

    @pytest.mark.slow
    def test_logistic_calibration(self):
        from utb import SyntheticSpec, synthesize

        d = synthesize(SyntheticSpec(n=50_000, p=10, seed=11))
        model = fit_causalgbm(d, CausalConfig(num_trees=60, shrinkage=0.1, loss="logistic"))
        ctrl = d.treatment == 0
        p0 = predict_outcome(model, d.features[ctrl], 0, scale="probability")
        assert abs(p0.mean() - d.outcome[ctrl].mean()) <= 0.02

    def test_predict_identities(self, small_synth):
        X = small_synth.features[:200]
        for loss in ("squared", "logistic"):
            model = fit_causalgbm(small_synth, CausalConfig(num_trees=5, loss=loss))
            eff = predict_effect(model, X)
            # (v + u) - v equals u up to one rounding of the sum
            diff = predict_outcome(model, X, 1) - predict_outcome(model, X, 0)
            np.testing.assert_allclose(eff[:, 0], diff, rtol=0, atol=1e-14)
            if loss == "squared":
                np.testing.assert_array_equal(eff, predict_effect(model, X, scale="probability"))

    def test_unknown_arm(self, small_synth):
        model = fit_causalgbm(small_synth, CausalConfig(num_trees=1))
        with pytest.raises(ConfigError, match="unknown arm 2"):
            predict_outcome(model, small_synth.features, 2)

    def test_duplicated_arm_symmetry(self, small_synth):
        d = small_synth
        treated = np.flatnonzero(d.treatment == 1)
        rows = np.concatenate([np.arange(d.n), treated])
        w = np.concatenate([d.treatment, np.full(treated.size, 2)])
        dup = make_dataset(d.features[rows], d.outcome[rows], w)
        model = fit_causalgbm(dup, CausalConfig(num_trees=10, growth=GrowthConfig(max_leaves=8)))
        for tree in model.trees:
            np.testing.assert_allclose(tree.leaf_values[:, 1], tree.leaf_values[:, 2], rtol=0, atol=1e-9)
        eff = predict_effect(model, d.features)
        np.testing.assert_allclose(eff[:, 0], eff[:, 1], atol=1e-9)

    def test_bagging(self, small_synth):
        cfg = CausalConfig(num_trees=3, ensemble_mode="bagging", seed=2)
        a = fit_causalgbm(small_synth, cfg)
        X = small_synth.features[:50]
        per_tree = np.stack([t.predict_values(X) for t in a.trees])
        np.testing.assert_allclose(a.raw_sum(X), per_tree.mean(axis=0), atol=1e-15)
        np.testing.assert_array_equal(predict_effect(a, X), predict_effect(fit_causalgbm(small_synth, cfg), X))

    def test_hessian_sums_respect_floor(self, small_synth):
        d = small_synth
        g, h = Loss("logistic").grad_hess(d.outcome, np.full(d.n, 40.0) * (2 * d.outcome - 1))
        stats = CausalCriterion(2).row_stats(g, h, d.treatment).sum(axis=0)
        for a in range(2):
            assert stats[3 * a + 2] >= HESSIAN_FLOOR * stats[3 * a] * (1 - 1e-9)


def test_general_path_matches_binary_criterion(small_synth):
    d = small_synth
    b = bin_features(d)
    g, h = Loss("logistic").grad_hess(d.outcome, np.zeros(d.n))
    stats = CausalCriterion(2).row_stats(g, h, d.treatment)
    cfg = GrowthConfig(max_leaves=12)
    general = grow_tree(b, np.arange(d.n), stats, CausalCriterion(2), cfg)
    binary = grow_tree(b, np.arange(d.n), stats, BinaryCausalCriterion(), cfg)
    for field in ("feature", "threshold_bin", "nan_left", "left", "right", "leaf_values", "gain"):
        assert getattr(general, field).tobytes() == getattr(binary, field).tobytes(), field
