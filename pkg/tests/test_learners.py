import numpy as np
import pytest

from maxway.data import RngHandle
from maxway.learners import (
    ForestConfig,
    LambdaSelection,
    LinearFit,
    RankDeficient,
    fit_forest,
    fit_lasso,
    fit_logistic_lowdim,
    fit_ols,
    lambda_max,
    lasso_kkt_gap,
    predict,
    top_k_features,
)
from maxway.learners.base import DimensionMismatch


def standardized(v):
    v = v - v.mean()
    return v / np.sqrt(np.mean(v**2))


class TestLasso:
    def test_huge_lambda_kills_everything(self):
        gen = np.random.default_rng(0)
        X, y = gen.standard_normal((40, 6)), gen.standard_normal(40)
        lam = 2 * lambda_max(X, y)
        fit = fit_lasso(X, y, selection=LambdaSelection(grid=np.array([lam])))
        assert np.all(fit.coef == 0)
        assert fit.intercept == pytest.approx(y.mean())

    def test_soft_threshold_closed_form(self):
        # oracle: with one standardized predictor the solution is the
        # soft-thresholded empirical covariance
        gen = np.random.default_rng(1)
        x = standardized(gen.standard_normal(150))
        y = 0.8 * x + gen.standard_normal(150)
        for lam in (0.05, 0.3, 2.0):
            c = float(x @ (y - y.mean())) / x.size
            oracle = np.sign(c) * max(abs(c) - lam, 0.0)
            fit = fit_lasso(x[:, None], y, selection=LambdaSelection(grid=np.array([lam])))
            assert fit.coef[0] == pytest.approx(oracle, abs=1e-8)

    def test_zero_lambda_orthonormal_matches_ols(self):
        gen = np.random.default_rng(2)
        Q, _ = np.linalg.qr(gen.standard_normal((60, 5)))
        X = Q * np.sqrt(60)  # unit 1/n-variance columns
        y = X @ np.array([1.0, -2.0, 0.5, 0.0, 0.3]) + gen.standard_normal(60)
        fit = fit_lasso(X, y, selection=LambdaSelection(grid=np.array([0.0])))
        oracle = np.linalg.solve(
            np.column_stack([np.ones(60), X]).T @ np.column_stack([np.ones(60), X]),
            np.column_stack([np.ones(60), X]).T @ y,
        )
        assert np.allclose(fit.coef, oracle[1:], atol=1e-8)
        assert fit.intercept == pytest.approx(oracle[0], abs=1e-8)

    def test_cv_fit_satisfies_kkt(self):
        gen = np.random.default_rng(3)
        for seed in range(5):
            g = np.random.default_rng(seed)
            X = g.standard_normal((50, 20))
            y = X[:, 0] - 0.5 * X[:, 3] + g.standard_normal(50)
            fit = fit_lasso(X, y, rng=RngHandle(seed))
            assert lasso_kkt_gap(fit, X, y) <= 1e-6
            assert fit.selection.chosen in fit.selection.grid
            idx = int(np.argmin(fit.selection.cv_losses))
            assert fit.selection.chosen == fit.selection.grid[idx]

    def test_cv_tie_prefers_larger_lambda(self):
        sel = LambdaSelection(grid=np.array([1.0, 0.5, 0.25]))
        losses = np.array([0.7, 0.7, 0.9])
        # grid is decreasing, argmin takes the first (largest-lambda) tie
        assert sel.grid[int(np.argmin(losses))] == 1.0

    def test_objective_trace_non_increasing(self):
        gen = np.random.default_rng(4)
        X = gen.standard_normal((80, 15))
        y = X[:, 1] + gen.standard_normal(80)
        fit = fit_lasso(X, y, selection=LambdaSelection(grid=np.array([0.05])))
        trace = np.asarray(fit.objective_trace)
        assert trace.size >= 1
        assert np.all(np.diff(trace) <= 1e-12)

    def test_constant_column_dropped(self):
        gen = np.random.default_rng(5)
        X = gen.standard_normal((30, 4))
        X[:, 2] = 7.0
        y = X[:, 0] + gen.standard_normal(30)
        fit = fit_lasso(X, y, rng=RngHandle(0))
        assert "dropped_constant_columns" in fit.flags
        assert fit.dropped == (2,)
        assert fit.coef[2] == 0.0

    def test_logistic_cv_kkt(self):
        gen = np.random.default_rng(6)
        X = gen.standard_normal((80, 10))
        prob = 1 / (1 + np.exp(-X[:, 0]))
        y = (gen.random(80) < prob).astype(float)
        fit = fit_lasso(X, y, family="logistic", rng=RngHandle(1))
        assert fit.family == "logistic"
        assert lasso_kkt_gap(fit, X, y) <= 1e-6


class TestOls:
    def test_exact_fit(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        fit = fit_ols(x[:, None], 2 * x, intercept=False)
        assert fit.coef[0] == pytest.approx(2.0, abs=1e-12)

    def test_orthogonal_gives_zero(self):
        x = np.array([1.0, -1.0, 1.0, -1.0])
        y = np.array([1.0, 1.0, -1.0, -1.0])
        fit = fit_ols(x[:, None], y, intercept=False)
        assert fit.coef[0] == pytest.approx(0.0, abs=1e-12)

    def test_matches_normal_equations(self):
        gen = np.random.default_rng(7)
        X = gen.standard_normal((20, 3))
        y = gen.standard_normal(20)
        fit = fit_ols(X, y)
        A = np.column_stack([np.ones(20), X])
        oracle = np.linalg.solve(A.T @ A, A.T @ y)
        assert np.allclose(np.r_[fit.intercept, fit.coef], oracle, atol=1e-8)
        resid = y - predict(fit, X)
        assert np.max(np.abs(A.T @ resid)) / np.linalg.norm(y) < 1e-8

    def test_rank_deficient_names_columns(self):
        gen = np.random.default_rng(8)
        X = gen.standard_normal((15, 3))
        X[:, 2] = X[:, 0]
        with pytest.raises(RankDeficient, match=r"columns"):
            fit_ols(X, gen.standard_normal(15))


class TestLogisticLowdim:
    def test_matches_grid_search_mle(self):
        # 1-d oracle: exhaustively search (intercept, slope)
        gen = np.random.default_rng(9)
        x = gen.standard_normal(60)
        y = (gen.random(60) < 0.5).astype(float)

        def loglik(b0, b1):
            eta = b0 + b1 * x
            return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

        grid = np.linspace(-2, 2, 401)
        best = max(((b0, b1) for b0 in grid for b1 in grid), key=lambda t: loglik(*t))
        fit = fit_logistic_lowdim(x[:, None], y)
        assert fit.intercept == pytest.approx(best[0], abs=0.02)
        assert fit.coef[0] == pytest.approx(best[1], abs=0.02)

    def test_balanced_independent(self):
        gen = np.random.default_rng(10)
        X = gen.standard_normal((400, 2))
        y = (gen.random(400) < 0.5).astype(float)
        fit = fit_logistic_lowdim(X, y)
        phat = y.mean()
        assert fit.intercept == pytest.approx(np.log(phat / (1 - phat)), abs=0.2)
        assert np.max(np.abs(fit.coef)) < 0.3

    def test_all_ones_label(self):
        gen = np.random.default_rng(11)
        fit = fit_logistic_lowdim(gen.standard_normal((20, 1)), np.ones(20))
        assert "separation" in fit.flags or fit.intercept > 10

    def test_noiseless_threshold_separates(self):
        x = np.array([-1.5, -1.0, -0.5, 0.5, 1.0, 1.5])
        y = (x > 0).astype(float)
        fit = fit_logistic_lowdim(x[:, None], y)
        assert "separation" in fit.flags


class TestForest:
    def test_constant_target(self):
        gen = np.random.default_rng(12)
        X = gen.standard_normal((30, 2))
        fit = fit_forest(X, np.full(30, 3.3), config=ForestConfig(n_trees=10), rng=RngHandle(0))
        assert np.all(predict(fit, X) == 3.3)
        assert np.all(fit.importance == 0)

    def test_importance_ordering(self):
        hits = 0
        for seed in range(20):
            gen = np.random.default_rng(seed)
            Z = gen.standard_normal((200, 2))
            y = (Z[:, 0] > 0).astype(float)
            fit = fit_forest(Z, y, config=ForestConfig(n_trees=50), rng=RngHandle(seed))
            hits += fit.importance[0] > fit.importance[1]
        assert hits >= 18

    def test_prediction_in_training_range(self):
        gen = np.random.default_rng(13)
        X = gen.standard_normal((100, 3))
        y = X[:, 0] * 2 + gen.standard_normal(100)
        fit = fit_forest(X, y, config=ForestConfig(n_trees=30), rng=RngHandle(4))
        pred = predict(fit, X)
        assert np.all(pred >= y.min()) and np.all(pred <= y.max())

    def test_deterministic(self):
        gen = np.random.default_rng(14)
        X = gen.standard_normal((80, 4))
        y = X[:, 1] + gen.standard_normal(80)
        a = fit_forest(X, y, config=ForestConfig(n_trees=25), rng=RngHandle(9))
        b = fit_forest(X, y, config=ForestConfig(n_trees=25), rng=RngHandle(9))
        assert np.array_equal(a.importance, b.importance)
        assert np.array_equal(predict(a, X), predict(b, X))

    def test_single_tree_interpolates(self):
        gen = np.random.default_rng(15)
        X = gen.standard_normal((120, 2))
        y = 1.7 * X[:, 0] + np.sin(X[:, 1])
        cfg = ForestConfig(n_trees=1, min_leaf=1, bootstrap=False, mtry=1)
        fit = fit_forest(X, y, config=cfg, rng=RngHandle(2))
        assert np.max(np.abs(predict(fit, X) - y)) < 1e-12

    def test_importance_normalized(self):
        gen = np.random.default_rng(16)
        X = gen.standard_normal((90, 5))
        y = X[:, 0] + gen.standard_normal(90)
        fit = fit_forest(X, y, config=ForestConfig(n_trees=20), rng=RngHandle(3))
        assert fit.importance.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(fit.importance >= 0)

    def test_classification_probabilities(self):
        gen = np.random.default_rng(17)
        X = gen.standard_normal((100, 3))
        y = (X[:, 0] + 0.3 * gen.standard_normal(100) > 0).astype(float)
        fit = fit_forest(X, y, task="classification",
                         config=ForestConfig(n_trees=20), rng=RngHandle(5))
        prob = predict(fit, X)
        assert np.all((prob >= 0) & (prob <= 1))


class TestPredictAndTopK:
    def test_affine(self):
        fit = LinearFit(intercept=1.0, coef=np.array([2.0]), family="gaussian")
        assert predict(fit, np.array([[3.0]]))[0] == pytest.approx(7.0)

    def test_expit_zero(self):
        fit = LinearFit(intercept=0.0, coef=np.array([0.0, 0.0]), family="logistic")
        assert np.all(predict(fit, np.zeros((4, 2))) == 0.5)

    def test_dimension_mismatch(self):
        fit = LinearFit(intercept=0.0, coef=np.array([1.0, 2.0]), family="gaussian")
        with pytest.raises(DimensionMismatch):
            predict(fit, np.ones((3, 3)))

    def test_top_k_magnitude_sort(self):
        fit = LinearFit(intercept=0.0, coef=np.array([0.1, -3.0, 2.0]), family="gaussian")
        assert top_k_features(fit, 2) == [1, 2]

    def test_top_k_tie_break(self):
        zero = LinearFit(intercept=0.0, coef=np.zeros(3), family="gaussian")
        assert top_k_features(zero, 2) == [0, 1]

    def test_top_k_importance_tie(self):
        gen = np.random.default_rng(18)
        X = gen.standard_normal((40, 3))
        fit = fit_forest(X, np.full(40, 1.0), config=ForestConfig(n_trees=5), rng=RngHandle(1))
        # all-zero importances: positional tie-break
        assert top_k_features(fit, 1) == [0]
