import numpy as np
import pytest

from maxway.conditioners import SufficientStats
from maxway.data import RngHandle
from maxway.learners import ForestConfig
from maxway.stats import (
    ResidualPair,
    StatSpec,
    make_stat_evaluator,
    stat_d0,
    stat_dI,
    stat_inner_product,
    stat_rf_importance,
)

RNG = np.random.default_rng


class TestD0:
    def test_hand_arithmetic(self):
        assert stat_d0(ResidualPair([1.0, 2.0], [3.0, -1.0])) == pytest.approx(1.0)

    def test_annihilator(self):
        assert stat_d0(ResidualPair([1.0, 2.0], [0.0, 0.0])) == 0.0

    def test_matches_naive_sum(self):
        gen = RNG(0)
        a, b = gen.standard_normal(100), gen.standard_normal(100)
        naive = abs(sum(float(u) * float(v) for u, v in zip(a, b)))
        assert stat_d0(ResidualPair(a, b)) == pytest.approx(naive, rel=1e-12)

    def test_sign_flip_invariance_and_scaling(self):
        gen = RNG(1)
        a, b = gen.standard_normal(50), gen.standard_normal(50)
        t = stat_d0(ResidualPair(a, b))
        assert stat_d0(ResidualPair(-a, -b)) == pytest.approx(t)
        assert stat_d0(ResidualPair(a, -2.5 * b)) == pytest.approx(2.5 * t)


class TestInnerProduct:
    def test_hand_values(self):
        assert stat_inner_product(np.ones(2), np.ones(2)) == pytest.approx(2.0)
        assert stat_inner_product(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_oracle(self):
        gen = RNG(2)
        y, v = gen.standard_normal(64), gen.standard_normal(64)
        assert stat_inner_product(y, v) == pytest.approx(abs(float(v @ y)), rel=1e-12)


class TestDI:
    def test_exact_main_effect(self):
        gen = RNG(3)
        eps_x = gen.standard_normal(40)
        Z_top = gen.standard_normal((40, 3))
        eps_y = 2.0 * eps_x
        assert stat_dI(ResidualPair(eps_y, eps_x), Z_top) == pytest.approx(4.0, abs=1e-10)

    def test_orthogonal_target(self):
        gen = RNG(4)
        eps_x = gen.standard_normal(60)
        Z_top = gen.standard_normal((60, 2))
        D = np.column_stack([eps_x, eps_x[:, None] * Z_top])
        # project a random vector off the design's column space
        raw = gen.standard_normal(60)
        eps_y = raw - D @ np.linalg.lstsq(D, raw, rcond=None)[0]
        assert stat_dI(ResidualPair(eps_y, eps_x), Z_top) < 1e-10

    def test_matches_lstsq_oracle(self):
        gen = RNG(5)
        n, k = 50, 3
        eps_x = gen.standard_normal(n)
        Z_top = gen.standard_normal((n, k))
        eps_y = gen.standard_normal(n)
        D = np.column_stack([eps_x, eps_x[:, None] * Z_top])
        beta = np.linalg.lstsq(D, eps_y, rcond=None)[0]
        oracle = beta[0] ** 2 + np.mean(beta[1:] ** 2)
        got = stat_dI(ResidualPair(eps_y, eps_x), Z_top)
        assert got == pytest.approx(oracle, abs=1e-8)

    def test_rank_deficient_falls_back_with_flag(self):
        gen = RNG(6)
        eps_x = gen.standard_normal(30)
        col = gen.standard_normal(30)
        Z_top = np.column_stack([col, col])  # duplicate interaction columns
        flags = set()
        value = stat_dI(ResidualPair(gen.standard_normal(30), eps_x), Z_top, flags=flags)
        assert np.isfinite(value) and value >= 0
        assert "dI_ridge_fallback" in flags


class TestRfImportance:
    def test_constant_target(self):
        gen = RNG(7)
        res = ResidualPair(np.zeros(60), gen.standard_normal(60))
        value = stat_rf_importance(res, gen.standard_normal((60, 2)),
                                   ForestConfig(n_trees=10), RngHandle(0))
        assert value == 0.0

    def test_strong_signal_dominates(self):
        hits = 0
        for seed in range(20):
            gen = RNG(seed)
            eps_x = gen.standard_normal(200)
            Z_top = gen.standard_normal((200, 2))
            res = ResidualPair(eps_x.copy(), eps_x)
            value = stat_rf_importance(res, Z_top, ForestConfig(n_trees=40), RngHandle(seed))
            hits += value > 0.5
        assert hits >= 18

    def test_deterministic(self):
        gen = RNG(8)
        res = ResidualPair(gen.standard_normal(80), gen.standard_normal(80))
        Z_top = gen.standard_normal((80, 2))
        cfg = ForestConfig(n_trees=15)
        a = stat_rf_importance(res, Z_top, cfg, RngHandle(3))
        b = stat_rf_importance(res, Z_top, cfg, RngHandle(3))
        assert a == b


class TestEvaluator:
    def test_d0_uses_first_summary_column(self):
        gen = RNG(9)
        n = 30
        y = gen.standard_normal(n)
        g = np.column_stack([gen.standard_normal(n), gen.standard_normal(n)])
        stats = SufficientStats(g, np.empty((n, 0)))
        ev = make_stat_evaluator(StatSpec("d0"), y, stats, lambda v: v, RngHandle(0))
        x = gen.standard_normal(n)
        assert ev(x) == pytest.approx(abs((y - g[:, 0]) @ x))

    def test_logistic_response_scale(self):
        gen = RNG(10)
        n = 25
        y = (gen.random(n) < 0.5).astype(float)
        g = np.column_stack([gen.standard_normal(n)])
        stats = SufficientStats(g, np.empty((n, 0)), {"g_response_transform": "expit"})
        ev = make_stat_evaluator(StatSpec("d0"), y, stats, lambda v: v, RngHandle(0))
        x = gen.standard_normal(n)
        expit = 1 / (1 + np.exp(-g[:, 0]))
        assert ev(x) == pytest.approx(abs((y - expit) @ x))

    def test_all_stats_nonnegative(self):
        gen = RNG(11)
        n = 40
        y = gen.standard_normal(n)
        g = np.column_stack([gen.standard_normal(n), gen.standard_normal(n)])
        stats = SufficientStats(g, np.empty((n, 0)))
        for kind in ("d0", "dI", "inner_product", "rf_importance"):
            spec = StatSpec(kind, forest_config=ForestConfig(n_trees=5))
            ev = make_stat_evaluator(spec, y, stats, lambda v: v, RngHandle(1))
            assert ev(gen.standard_normal(n)) >= 0
