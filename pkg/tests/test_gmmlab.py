import math

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given
from scipy.stats import norm

from convue import gmmlab
from convue.gmmlab import (
    GmmBatch,
    GmmConfig,
    TridiagonalSpec,
    build_random_matrix,
    defend_batch,
    plugin_classifier_eval,
    plugin_classifier_fit,
    poison_tridiagonal,
    sample_clean,
    theta_imc,
    theta_imi,
)
from convue.imagecore import SeedSpec
from oracles import random_matrix_from_shifts


def batch_from_mats(mats, ys):
    mats = np.asarray(mats, dtype=float)
    return GmmBatch(np.zeros((len(mats), mats.shape[1])), np.asarray(ys, float), mats)


class TestSampling:
    def test_shapes_and_balance(self):
        b = sample_clean(GmmConfig(d=4, n_per_class=50), 0)
        assert b.xs.shape == (100, 4) and (b.ys == 1).sum() == 50 and b.is_clean()

    def test_deterministic(self):
        cfg = GmmConfig(d=3, n_per_class=10)
        assert np.array_equal(sample_clean(cfg, SeedSpec(1, "g")).xs, sample_clean(cfg, SeedSpec(1, "g")).xs)

    def test_config_checks(self):
        with pytest.raises(ValueError):
            GmmConfig(d=1)
        with pytest.raises(ValueError):
            GmmConfig(d=3, mu=np.zeros(3))
        with pytest.raises(ValueError):
            GmmConfig(d=3, mu=np.ones(4))

    def test_zero_mean_gives_chance(self):
        # mu = 0 is not a valid config; build the batch directly
        rng = np.random.default_rng(0)
        ys = np.repeat([1.0, -1.0], 5000)
        b = GmmBatch(rng.standard_normal((10000, 10)), ys, np.broadcast_to(np.eye(10), (10000, 10, 10)))
        test = GmmBatch(rng.standard_normal((10000, 10)), ys, b.mats)
        assert abs(plugin_classifier_eval(plugin_classifier_fit(b), test) - 0.5) < 0.03

    def test_large_mean_separable(self):
        cfg = GmmConfig(d=10, mu=np.full(10, 10 / math.sqrt(10)), n_per_class=2000)
        model = plugin_classifier_fit(sample_clean(cfg, 1))
        assert plugin_classifier_eval(model, sample_clean(cfg, 2)) > 0.99

    def test_plugin_risk_matches_gaussian_cdf(self):
        cfg = GmmConfig(d=10, mu=np.full(10, 1 / math.sqrt(10)), n_per_class=5000)
        model = plugin_classifier_fit(sample_clean(cfg, 3))
        assert plugin_classifier_eval(model, sample_clean(cfg, 4)) == pytest.approx(norm.cdf(1.0), abs=0.02)


class TestPoison:
    def test_tridiagonal_arithmetic(self):
        assert np.allclose(gmmlab.tridiagonal(3, 0.5) @ np.ones(3), [1.5, 2.0, 1.5])

    def test_zero_parameters_unchanged(self):
        b = sample_clean(GmmConfig(d=5, n_per_class=20), 0)
        p = poison_tridiagonal(b, TridiagonalSpec(0.0, 0.0), 1)
        assert np.array_equal(p.xs, b.xs) and np.array_equal(p.mats, b.mats)

    def test_structure_with_jitter(self):
        b = sample_clean(GmmConfig(d=6, n_per_class=30), 0)
        p = poison_tridiagonal(b, TridiagonalSpec(0.9, 0.3, 0.1), 1)
        for mat, y, x0, x1 in zip(p.mats, p.ys, b.xs, p.xs):
            a = mat[0, 1]
            assert np.allclose(mat, gmmlab.tridiagonal(6, a))
            assert abs(a - (0.9 if y > 0 else 0.3)) <= 0.1
            assert np.allclose(mat @ x0, x1)

    def test_double_poison_rejected(self):
        b = poison_tridiagonal(sample_clean(GmmConfig(d=3, n_per_class=5), 0), TridiagonalSpec(0.5, 0.2), 0)
        with pytest.raises(ValueError):
            poison_tridiagonal(b, TridiagonalSpec(0.5, 0.2), 0)

    def test_negative_jitter(self):
        with pytest.raises(ValueError):
            TridiagonalSpec(0.5, 0.5, -0.1)

    def test_class_difference_hurts_plugin(self):
        cfg = GmmConfig(d=10, n_per_class=5000)
        train, test = sample_clean(cfg, 1), sample_clean(cfg, 2)
        base = plugin_classifier_eval(plugin_classifier_fit(poison_tridiagonal(train, TridiagonalSpec(0, 0), 0)), test)
        hurt = plugin_classifier_eval(plugin_classifier_fit(poison_tridiagonal(train, TridiagonalSpec(0.9, -0.9), 0)), test)
        assert hurt < base


class TestRandomMatrix:
    def test_identity_at_zero(self):
        assert np.array_equal(build_random_matrix(6, 0.0, 0), np.eye(6))

    @given(st.integers(1, 12), st.floats(0.0, 5.0), st.integers(0, 2**32 - 1))
    def test_rows_sum_to_one_and_match_oracle(self, d, alpha, s):
        A = build_random_matrix(d, alpha, s)
        shifts = np.random.default_rng(s).uniform(-alpha, alpha, size=d)
        assert np.allclose(A, random_matrix_from_shifts(shifts), atol=1e-12)
        assert np.allclose(A.sum(axis=1), 1.0, atol=1e-12)
        assert np.all((A != 0).sum(axis=1) <= 2)
        assert A.min() >= 0

    def test_d4_fixed_seed(self):
        A = build_random_matrix(4, 1.5, SeedSpec(9, "gmm"))
        s = SeedSpec(9, "gmm").generator(0).uniform(-1.5, 1.5, size=4)
        assert np.array_equal(A, random_matrix_from_shifts(s))

    def test_checks(self):
        with pytest.raises(ValueError):
            build_random_matrix(0, 1.0, 0)
        with pytest.raises(ValueError):
            build_random_matrix(3, -1.0, 0)


class TestDefendBatch:
    def poisoned(self, n=40):
        b = sample_clean(GmmConfig(d=5, n_per_class=n), 0)
        return b, poison_tridiagonal(b, TridiagonalSpec(0.9, 0.3), 0)

    def test_zero_alpha(self):
        _, p = self.poisoned()
        d = defend_batch(p, 0.0, 1)
        assert np.array_equal(d.xs, p.xs) and np.array_equal(d.mats, p.mats)

    def test_bookkeeping(self):
        clean, p = self.poisoned()
        d = defend_batch(p, 1.3, 2)
        assert np.allclose(np.einsum("nij,nj->ni", d.mats, clean.xs), d.xs, atol=1e-9)

    def test_matches_explicit_matrices(self):
        _, p = self.poisoned(3)
        d = defend_batch(p, 2.0, 4)
        s = np.random.default_rng(4).uniform(-2.0, 2.0, size=(6, 5))
        for k in range(6):
            A = random_matrix_from_shifts(s[k])
            assert np.allclose(d.mats[k], A @ p.mats[k])

    def test_metrics_move(self):
        _, p = self.poisoned(500)
        d = defend_batch(p, 0.5, 3)
        assert theta_imi(d) > theta_imi(p)
        assert theta_imc(d) > theta_imc(p)


class TestMetrics:
    def test_identical_matrices(self):
        mats = [np.eye(3)] * 4
        b = batch_from_mats(mats, [1, 1, -1, -1])
        assert theta_imi(b) == 0.0 and theta_imc(b) == pytest.approx(1.0)

    def test_hand_variance(self):
        b = batch_from_mats([np.eye(2), 3 * np.eye(2), np.eye(2), np.eye(2)], [1, 1, -1, -1])
        # class +1 gives 0.5, class -1 gives 0
        assert theta_imi(b) == pytest.approx(0.25)

    def test_orthogonal(self):
        b = batch_from_mats([np.eye(2), [[0, 1], [1, 0]]], [1, -1])
        assert theta_imc(b) == pytest.approx(0.0)

    def test_cosine_value(self):
        b = batch_from_mats([np.eye(2), np.ones((2, 2))], [1, -1])
        assert theta_imc(b) == pytest.approx(1 / math.sqrt(2))

    def test_zero_norm(self):
        with pytest.raises(ValueError):
            theta_imc(batch_from_mats([np.eye(2), np.zeros((2, 2))], [1, -1]))

    def test_empty_class(self):
        with pytest.raises(ValueError):
            theta_imi(batch_from_mats([np.eye(2)], [1]))

    def test_jitter_variance_oracle(self):
        d, delta = 6, 0.3
        b = sample_clean(GmmConfig(d=d, n_per_class=20000), 0)
        p = poison_tridiagonal(b, TridiagonalSpec(0.5, 0.5, delta), 1)
        assert theta_imi(p) == pytest.approx(delta**2 / 3 * (2 * d - 2) / d**2, rel=0.03)

    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 0.5))
    def test_ranges(self, a, b, jitter):
        batch = sample_clean(GmmConfig(d=4, n_per_class=20), 0)
        p = poison_tridiagonal(batch, TridiagonalSpec(a, b, jitter), 1)
        assert -1 <= theta_imc(p) <= 1 and theta_imi(p) >= 0


class TestClassifiers:
    def test_separated(self):
        xs = np.array([[2.0, 0], [3, 0], [-2, 0], [-3, 0]])
        b = GmmBatch(xs, np.array([1.0, 1, -1, -1]), np.broadcast_to(np.eye(2), (4, 2, 2)))
        assert plugin_classifier_eval(plugin_classifier_fit(b), b) == 1.0
        assert gmmlab.accuracy(gmmlab.gaussian_bayes_fit(b, ridge=1e-3), b) == 1.0

    def test_shuffled_labels_chance(self):
        cfg = GmmConfig(d=10, n_per_class=5000)
        b = sample_clean(cfg, 0)
        rng = np.random.default_rng(1)
        shuffled = GmmBatch(b.xs, rng.permutation(b.ys), b.mats)
        test = sample_clean(cfg, 2)
        test = GmmBatch(test.xs, rng.permutation(test.ys), test.mats)
        assert abs(plugin_classifier_eval(plugin_classifier_fit(shuffled), test) - 0.5) < 0.03

    def test_degenerate_warns(self):
        b = batch_from_mats([np.eye(2)] * 3, [1, -1, 1])
        with pytest.warns(UserWarning):
            model = plugin_classifier_fit(b)
        assert np.all(model.predict(np.random.default_rng(0).random((5, 2))) == 1)

    def test_missing_class(self):
        with pytest.raises(ValueError):
            plugin_classifier_fit(batch_from_mats([np.eye(2)], [1]))


class TestExperiments:
    cfg = GmmConfig(d=10, n_per_class=1000)

    def test_equal_parameters_point(self):
        rows = gmmlab.run_hypothesis_experiment("imc", [0.9], self.cfg, SeedSpec(1, "gmm"))
        assert rows[0].theta_imc == pytest.approx(1.0) and rows[0].theta_imi == pytest.approx(0.0, abs=1e-20)

    def test_imi_keeps_imc_roughly_constant(self):
        rows = gmmlab.run_hypothesis_experiment("imi", [0.0, 0.3, 0.6], self.cfg, SeedSpec(1, "gmm"))
        imc = [r.theta_imc for r in rows]
        assert max(imc) - min(imc) < 0.01
        assert rows[0].theta_imi < rows[1].theta_imi < rows[2].theta_imi

    def test_csv_header(self):
        rows = gmmlab.run_hypothesis_experiment("imc", [0.5, 0.7], self.cfg, SeedSpec(1, "gmm"))
        text = gmmlab.rows_to_csv(rows)
        assert text.splitlines()[0] == "grid_value,theta_imi,theta_imc,acc_poisoned,acc_defended"
        assert len(text.splitlines()) == 3

    def test_deterministic(self):
        a = gmmlab.run_hypothesis_experiment("imi", [0.2], self.cfg, SeedSpec(4, "gmm"))
        b = gmmlab.run_hypothesis_experiment("imi", [0.2], self.cfg, SeedSpec(4, "gmm"))
        assert a == b

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            gmmlab.run_hypothesis_experiment("xyz", [0.5], self.cfg, SeedSpec(1))
        with pytest.raises(ValueError):
            gmmlab.run_hypothesis_experiment("imc", [0.5], self.cfg, SeedSpec(1), classifier="svm")

    def test_plugin_available(self):
        rows = gmmlab.run_hypothesis_experiment("imc", [0.5], self.cfg, SeedSpec(1, "gmm"), classifier="plugin")
        assert 0 <= rows[0].acc_poisoned <= 1
