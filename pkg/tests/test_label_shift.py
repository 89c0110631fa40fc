"""Weight estimation pipeline: coarsening, black box, statistics, QP fit."""

import numpy as np
import pytest
from scipy.stats import norm

from shiftstack.data import DomainData
from shiftstack.exceptions import DegenerateDataError
from shiftstack.label_shift import (
    BbseConfig,
    ImportanceModel,
    default_n_categories,
    estimate_weight_model,
    evaluate_weights,
    fit_blackbox,
    fit_importance_model,
    make_discretization,
    shift_statistics,
    MultinomialLogit,
    ShiftStatistics,
)
from shiftstack.splines import knots_from_quantiles, rcs_basis


def draw_linear_domain(rng, n, y_mean=0.0, y_sd=1.0):
    y = rng.normal(y_mean, y_sd, n)
    x = y + rng.normal(0.0, 0.5, n)
    return DomainData(x.reshape(-1, 1), y)


class TestDiscretization:
    def test_quantile_mode_equal_counts(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal(600)
        disc = make_discretization(y, 4)
        counts = np.bincount(disc.categorize(y), minlength=4)
        np.testing.assert_array_equal(counts, [150, 150, 150, 150])

    def test_median_split(self):
        rng = np.random.default_rng(1)
        y = rng.standard_normal(600)
        disc = make_discretization(y, 2)
        counts = np.bincount(disc.categorize(y), minlength=2)
        np.testing.assert_array_equal(counts, [300, 300])
        assert disc.cuts[0] == pytest.approx(np.median(y), abs=1e-9)

    def test_user_cut_points_match_direct_scan(self):
        rng = np.random.default_rng(2)
        y = rng.normal(0, 1.5, 500)
        disc = make_discretization(y, cut_points=(-1.0, 0.0, 1.0))
        labels = disc.categorize(y)
        # direct counting oracle: category = number of cut points <= y
        cuts = np.array([-1.0, 0.0, 1.0])
        expected = np.array([int(np.sum(cuts <= v)) for v in y])
        np.testing.assert_array_equal(labels, expected)
        assert disc.n_categories == 4

    def test_degenerate_outcomes_error(self):
        with pytest.raises(DegenerateDataError):
            make_discretization(np.ones(100), 4)

    def test_default_rule(self):
        assert default_n_categories(600) == 10
        assert default_n_categories(80) == 4
        assert default_n_categories(20) == 2


class TestBlackbox:
    def test_separable_data_perfect_accuracy(self):
        rng = np.random.default_rng(3)
        y = np.concatenate([rng.uniform(0, 1, 100), rng.uniform(10, 11, 100)])
        X = y.reshape(-1, 1)
        disc = make_discretization(y, 2)
        clf = fit_blackbox(DomainData(X, y), disc)
        acc = np.mean(clf.predict(X) == disc.categorize(y))
        assert acc == 1.0

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        y = rng.standard_normal(200)
        X = rng.standard_normal((200, 3))
        disc = make_discretization(y, 3)
        clf = fit_blackbox(DomainData(X, y), disc)
        probs = clf.predict_proba(X)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_independent_labels_predict_priors(self):
        # sampling oracle: with X independent of Y the predicted mass per
        # class approaches the class priors
        rng = np.random.default_rng(5)
        n = 2000
        y = rng.standard_normal(n)
        X = rng.standard_normal((n, 2))  # carries no information about y
        disc = make_discretization(y, 4)
        clf = fit_blackbox(DomainData(X, y), disc)
        fresh = rng.standard_normal((4000, 2))
        mass = np.bincount(clf.predict(fresh), minlength=4) / 4000
        np.testing.assert_allclose(mass, 0.25, atol=0.05)

    def test_fit_beats_zero_coefficient_model(self):
        rng = np.random.default_rng(6)
        y = rng.standard_normal(120)
        X = (y + rng.normal(0, 1, 120)).reshape(-1, 1)
        disc = make_discretization(y, 3)
        labels = disc.categorize(y)
        clf = fit_blackbox(DomainData(X, y), disc)
        zero_loss = np.log(3.0)  # uniform softmax under zero coefficients
        assert clf.log_loss(X, labels) <= zero_loss

    def test_missing_category_errors(self):
        y = np.linspace(0, 1, 50)
        disc = make_discretization(y, cut_points=(0.5, 2.0))  # top bin empty
        with pytest.raises(DegenerateDataError, match="absent"):
            fit_blackbox(DomainData(y.reshape(-1, 1), y), disc)


class TestShiftStatistics:
    def test_perfect_classifier_diagonal(self):
        rng = np.random.default_rng(7)
        y = np.concatenate([np.full(50, v) + rng.uniform(0, 0.1, 50) for v in (0, 10, 20, 30)])
        X = y.reshape(-1, 1)
        disc = make_discretization(y, cut_points=(5.0, 15.0, 25.0))
        clf = fit_blackbox(DomainData(X, y), disc)
        stats = shift_statistics(clf, DomainData(X, y), DomainData(X), disc)
        np.testing.assert_allclose(stats.confusion, np.diag([0.25] * 4), atol=1e-12)

    def test_identical_domains_mass_matches_row_sums(self):
        rng = np.random.default_rng(8)
        source = draw_linear_domain(rng, 600)
        target = draw_linear_domain(rng, 600)
        disc = make_discretization(source.y, 4)
        clf = fit_blackbox(source, disc)
        stats = shift_statistics(clf, source, target.features_only(), disc)
        np.testing.assert_allclose(
            stats.target_class_mass, stats.confusion.sum(axis=1), atol=0.05
        )

    def test_constant_predictor(self):
        class AlwaysZero:
            def predict(self, X):
                return np.zeros(len(X), dtype=int)

        rng = np.random.default_rng(9)
        y = rng.standard_normal(100)
        disc = make_discretization(y, 4)
        holdout = DomainData(y.reshape(-1, 1), y)
        stats = shift_statistics(AlwaysZero(), holdout, DomainData(y.reshape(-1, 1)), disc)
        np.testing.assert_array_equal(stats.target_class_mass, [1, 0, 0, 0])
        assert not stats.confusion[1:].any()

    def test_proportion_mass_invariant(self):
        rng = np.random.default_rng(10)
        source = draw_linear_domain(rng, 400)
        target = draw_linear_domain(rng, 300, y_mean=0.5, y_sd=0.5)
        disc = make_discretization(source.y, 4)
        clf = fit_blackbox(source, disc)
        stats = shift_statistics(clf, source, target.features_only(), disc)
        assert np.all(stats.confusion >= 0)
        assert np.all(stats.target_class_mass >= 0)
        assert stats.confusion.sum() == pytest.approx(1.0, abs=1e-12)
        assert stats.target_class_mass.sum() == pytest.approx(1.0, abs=1e-12)


class TestImportanceModel:
    def test_exact_recovery_when_mass_is_row_sums(self):
        rng = np.random.default_rng(11)
        y = rng.standard_normal(400)
        disc = make_discretization(y, 4)
        spline = knots_from_quantiles(y, 5)
        confusion = np.array([
            [0.18, 0.04, 0.02, 0.01],
            [0.05, 0.15, 0.05, 0.02],
            [0.02, 0.05, 0.15, 0.05],
            [0.01, 0.02, 0.04, 0.14],
        ])
        # target mass exactly consistent with unit weights
        stats = ShiftStatistics(
            target_class_mass=confusion.sum(axis=1), confusion=confusion,
            n_holdout=400, n_target=400,
        )
        model = fit_importance_model(stats, disc, spline, y)
        np.testing.assert_allclose(model.category_means, 1.0, atol=1e-5)

    def test_identity_domains_recover_unit_weights(self):
        rng = np.random.default_rng(12)
        source = draw_linear_domain(rng, 600)
        target = draw_linear_domain(rng, 600)
        cfg = BbseConfig(n_categories=4)
        model = estimate_weight_model(
            source.X, source.y, target.X, cfg, seed=123
        )
        assert np.max(np.abs(model.category_means - 1.0)) < 0.15

    def test_gaussian_shift_matches_quadrature_oracle(self):
        rng = np.random.default_rng(13)
        source = draw_linear_domain(rng, 600)
        target = draw_linear_domain(rng, 600, y_mean=0.5, y_sd=0.5)
        cfg = BbseConfig(n_categories=4)
        model = estimate_weight_model(source.X, source.y, target.X, cfg, seed=7)
        # oracle: mean of T(y)/S(y) over source draws in category l equals
        # (integral of T over the bin) / (integral of S over the bin)
        edges = np.concatenate([[-np.inf], model.disc.cuts, [np.inf]])
        expected = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            t_mass = norm.cdf(hi, 0.5, 0.5) - norm.cdf(lo, 0.5, 0.5)
            s_mass = norm.cdf(hi, 0.0, 1.0) - norm.cdf(lo, 0.0, 1.0)
            expected.append(t_mass / s_mass)
        np.testing.assert_allclose(model.category_means, expected, atol=0.25)

    def test_normalization_constraint_encoded(self):
        rng = np.random.default_rng(14)
        source = draw_linear_domain(rng, 600)
        target = draw_linear_domain(rng, 600, y_mean=0.5, y_sd=0.5)
        cfg = BbseConfig(n_categories=4, normalization_tol=0.05)
        model = estimate_weight_model(source.X, source.y, target.X, cfg, seed=5)
        weighted_mean = model.category_props @ model.category_means
        assert abs(weighted_mean - 1.0) <= 0.05 + 1e-8
        assert np.all(model.category_means >= 0)

    def test_reweighting_consistency_under_target_shift(self):
        # same x|y, shifted y: reweighted source category proportions should
        # approximate the target's
        rng = np.random.default_rng(15)
        source = draw_linear_domain(rng, 600)
        target_full = draw_linear_domain(rng, 600, y_mean=0.5, y_sd=0.5)
        cfg = BbseConfig(n_categories=4)
        model = estimate_weight_model(
            source.X, source.y, target_full.X, cfg, seed=11
        )
        w = evaluate_weights(model, source.y)
        labels = model.disc.categorize(source.y)
        reweighted = np.array([
            np.sum(w[labels == l]) for l in range(model.disc.n_categories)
        ])
        reweighted /= np.sum(w)
        target_props = model.disc.category_proportions(target_full.y)
        np.testing.assert_allclose(reweighted, target_props, atol=0.1)


class TestEvaluateWeights:
    def _model(self, coeffs):
        rng = np.random.default_rng(16)
        y = rng.standard_normal(300)
        disc = make_discretization(y, 4)
        spline = knots_from_quantiles(y, 5)
        basis = rcs_basis(spline, y)
        labels = disc.categorize(y)
        agg = np.vstack([basis[labels == l].mean(axis=0) for l in range(4)])
        props = np.bincount(labels, minlength=4) / y.size
        return ImportanceModel(
            spline=spline, coeffs=np.asarray(coeffs, dtype=float), disc=disc,
            category_means=np.maximum(agg @ coeffs, 0),
            category_props=props, normalization_tol=0.05,
        ), y

    def test_intercept_only_gives_unit_weights(self):
        model, y = self._model([1.0, 0.0, 0.0, 0.0, 0.0])
        np.testing.assert_array_equal(evaluate_weights(model, y), np.ones_like(y))

    def test_matches_basis_dot_coefficients(self):
        coeffs = [0.8, 0.1, 0.3, -0.2, 0.05]
        model, y = self._model(coeffs)
        pts = y[:10]
        expected = rcs_basis(model.spline, pts) @ np.asarray(coeffs)
        np.testing.assert_allclose(
            evaluate_weights(model, pts), np.maximum(expected, 0), atol=1e-12
        )

    def test_negative_excursions_clamped(self):
        model, y = self._model([0.0, -1.0, 0.0, 0.0, 0.0])  # negative for y > 0
        w = evaluate_weights(model, np.array([-2.0, 0.0, 2.0]))
        assert np.all(w >= 0)
        assert w[2] == 0.0

    def test_serialization_round_trip(self):
        model, y = self._model([1.0, 0.05, 0.0, 0.1, 0.0])
        restored = ImportanceModel.from_dict(model.to_dict())
        np.testing.assert_allclose(
            evaluate_weights(restored, y), evaluate_weights(model, y), atol=1e-15
        )


class TestCondition:
    def test_bad_conditioning_warns(self):
        rng = np.random.default_rng(17)
        y = rng.standard_normal(300)
        disc = make_discretization(y, 3)
        spline = knots_from_quantiles(y, 4)
        confusion = np.array([
            [0.2, 0.2, 0.2],
            [0.1, 0.1, 0.1],
            [0.0333333333, 0.0333333334, 0.0333333333],
        ])
        stats = ShiftStatistics(
            target_class_mass=confusion.sum(axis=1), confusion=confusion,
            n_holdout=300, n_target=300,
        )
        assert stats.condition_number > 1e6
        with pytest.warns(UserWarning, match="conditioned"):
            fit_importance_model(stats, disc, spline, y)


class TestMultinomialLogitDeterminism:
    def test_fit_is_deterministic(self):
        rng = np.random.default_rng(18)
        y = rng.standard_normal(150)
        X = (y + rng.normal(0, 0.7, 150)).reshape(-1, 1)
        labels = make_discretization(y, 3).categorize(y)
        c1 = MultinomialLogit(3).fit(X, labels).coef_
        c2 = MultinomialLogit(3).fit(X, labels).coef_
        assert np.array_equal(c1, c2)
