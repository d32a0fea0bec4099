import numpy as np
import pytest

from maxway.data import RngHandle
from maxway.simgen import (
    BadP,
    SimConfig,
    SurrogateSpec,
    ar1_cholesky,
    ar1_sequential,
    gen_config1,
    gen_config2,
    gen_config3,
    gen_surrogate,
    generate,
)

RNG = np.random.default_rng


class TestCovariateDraws:
    def test_cholesky_equals_sequential(self):
        eps = RNG(0).standard_normal((200, 12))
        for rho in (0.2, 0.5):
            L = ar1_cholesky(12, rho)
            assert np.allclose(eps @ L.T, ar1_sequential(eps, rho), atol=1e-10)

    def test_covariance_matches_target(self):
        gen = RNG(1)
        p, rho = 8, 0.5
        Z = gen.standard_normal((200_000, p)) @ ar1_cholesky(p, rho).T
        emp = Z.T @ Z / Z.shape[0]
        target = rho ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
        assert np.max(np.abs(emp - target)) < 0.02


class TestConfig1:
    def test_null_by_construction(self):
        batch = generate(SimConfig(config="I", p=20, n=5000, N=10, gamma=0.0, seed=2))
        t = batch.truth
        eps_x = batch.labeled.x - t.mean_x(batch.labeled.Z)
        eps_y = batch.labeled.y - t.mean_y_null(batch.labeled.Z)
        # the two noises are independent standard normals
        assert abs(np.corrcoef(eps_x, eps_y)[0, 1]) < 4 / np.sqrt(5000)
        assert np.var(eps_x) == pytest.approx(1.0, abs=0.1)

    def test_full_overlap_at_eta_zero(self):
        batch = generate(SimConfig(config="I", p=30, n=10, N=10, eta=0.0, seed=3))
        assert np.array_equal(batch.truth.x_coef, batch.truth.y_coef)

    def test_marginal_variance_oracle(self):
        cfg = SimConfig(config="I", p=60, n=100_000, N=10, eta=0.0, seed=4)
        batch = generate(cfg)
        t = batch.truth
        sigma = 0.5 ** np.abs(np.subtract.outer(np.arange(60), np.arange(60)))
        analytic = 1.0 + float(t.x_coef @ sigma @ t.x_coef)
        emp = float(np.var(batch.labeled.x))
        se = analytic * np.sqrt(2 / cfg.n)  # variance of a variance estimate
        assert abs(emp - analytic) < 4 * se

    def test_extra_sets_disjoint_and_sized(self):
        batch = generate(SimConfig(config="I", p=500, n=10, N=10, eta=0.1, seed=5))
        t = batch.truth
        assert len(t.I1) == len(t.I2) == 25
        assert not set(t.I1) & set(t.I2)
        assert min(min(t.I1), min(t.I2)) >= 5  # 0-based: covariates 6..p

    def test_small_p_scales_sets(self):
        batch = generate(SimConfig(config="I", p=20, n=10, N=10, eta=0.2, seed=6))
        assert len(batch.truth.I1) == len(batch.truth.I2) == 7

    def test_too_small_p_rejected(self):
        with pytest.raises(BadP):
            generate(SimConfig(config="I", p=6, n=10, N=10, seed=7))

    def test_deterministic(self):
        cfg = SimConfig(config="I", p=25, n=40, N=60, eta=0.1, gamma=0.3, seed=8,
                        holdout_n=30)
        a, b = generate(cfg), generate(cfg)
        assert np.array_equal(a.labeled.y, b.labeled.y)
        assert np.array_equal(a.unlabeled.Z, b.unlabeled.Z)
        assert np.array_equal(a.holdout.x, b.holdout.x)
        assert a.truth.I1 == b.truth.I1

    def test_interaction_effect_form(self):
        cfg = SimConfig(config="I", p=20, n=2000, N=10, gamma=1.0,
                        h_form="linear_plus_interaction", seed=9)
        batch = generate(cfg)
        t = batch.truth
        resid = (batch.labeled.y - t.mean_y_null(batch.labeled.Z)
                 - t.effect(batch.labeled.x, batch.labeled.Z))
        assert np.var(resid) == pytest.approx(1.0, abs=0.15)


class TestConfig2:
    def test_probability_at_origin(self):
        batch = generate(SimConfig(config="II", p=20, n=10, N=10, seed=10))
        assert batch.truth.mean_x(np.zeros((1, 20)))[0] == pytest.approx(0.5)

    def test_binary_flag_and_null(self):
        batch = generate(SimConfig(config="II", p=20, n=50, N=50, gamma=0.0, seed=11))
        assert batch.labeled.binary_x
        assert set(np.unique(batch.labeled.x)) <= {0.0, 1.0}

    def test_mean_matches_independent_integrator(self):
        cfg = SimConfig(config="II", p=20, n=100_000, N=10, eta=0.1, seed=12)
        batch = generate(cfg)
        t = batch.truth
        # independent oracle: fresh covariates through the sequential
        # sampler, expectation of the link by plain Monte Carlo
        eps = RNG(999).standard_normal((200_000, 20))
        Z = ar1_sequential(eps, 0.5)
        oracle = float(np.mean(1 / (1 + np.exp(-(Z @ t.x_coef)))))
        emp = float(np.mean(batch.labeled.x))
        se = np.sqrt(0.25 / cfg.n) + np.sqrt(0.25 / 200_000)
        assert abs(emp - oracle) < 4 * se


class TestConfig3:
    def test_indicators_at_origin(self):
        batch = generate(SimConfig(config="III", p=40, n=10, N=10, seed=13))
        # Z = 0: I1 = 0, I2 = 0, I3 = 1, I4 = 0 and all I_j (j >= 5) are 0
        assert batch.truth.mean_x(np.zeros((1, 40)))[0] == pytest.approx(0.5)

    def test_wrong_p_rejected(self):
        with pytest.raises(BadP):
            SimConfig(config="III", p=41, n=10, N=10)

    def test_mean_matches_bruteforce_evaluator(self):
        cfg = SimConfig(config="III", p=40, n=100_000, N=10, seed=14)
        batch = generate(cfg)
        # independent evaluator written out literally
        Z = batch.labeled.Z
        i1 = (Z[:, 0] > 0).astype(float)
        i2 = (Z[:, 1] > 0.5).astype(float)
        i3 = (Z[:, 2] > -0.5).astype(float)
        i4 = (np.abs(Z[:, 3]) > 1).astype(float)
        i21 = (Z[:, 20] > 0).astype(float)
        i22 = (Z[:, 21] > 0).astype(float)
        i23 = (Z[:, 22] > 0).astype(float)
        i24 = (Z[:, 23] > 0).astype(float)
        oracle_signal = (0.5 * (i1 + i3) + 0.4 * (i2 + i4 + i1 * i4 + i2 * i3)
                         + 0.15 * (i21 + i22 + i23 + i24 + i21 * i22 + i23 * i24))
        emp = float(np.mean(batch.labeled.x))
        se = float(np.std(batch.labeled.x)) / np.sqrt(cfg.n)
        assert abs(emp - np.mean(oracle_signal)) < 4 * se

    def test_gamma_zero_null(self):
        batch = generate(SimConfig(config="III", p=40, n=3000, N=10, gamma=0.0, seed=15))
        t = batch.truth
        eps_x = batch.labeled.x - t.mean_x(batch.labeled.Z)
        eps_y = batch.labeled.y - t.mean_y_null(batch.labeled.Z)
        assert abs(np.corrcoef(eps_x, eps_y)[0, 1]) < 4 / np.sqrt(3000)


class TestSurrogates:
    def batch(self, seed=16, N=50_000):
        return generate(SimConfig(config="I", p=20, n=10, N=N, seed=seed))

    def test_noiseless_copy_is_exact(self):
        batch = self.batch(N=100)
        surr = gen_surrogate(batch, SurrogateSpec("noisy_copy", 0.0), RngHandle(1))
        assert np.array_equal(surr.s, batch.truth.unlabeled_latent_y)

    def test_noisy_copy_conditionally_independent_of_z(self):
        # stratified check: E[S | Y bin] must not vary with the Z_1 quartile
        batch = self.batch()
        surr = gen_surrogate(batch, SurrogateSpec("noisy_copy", 0.5), RngHandle(2))
        y = batch.truth.unlabeled_latent_y
        z1 = batch.unlabeled.Z[:, 0]
        y_bins = np.digitize(y, np.quantile(y, [0.25, 0.5, 0.75]))
        z_bins = np.digitize(z1, np.quantile(z1, [0.25, 0.5, 0.75]))
        for yb in range(4):
            sel = y_bins == yb
            noise = surr.s[sel] - y[sel]
            for zb in range(4):
                cell = noise[z_bins[sel] == zb]
                assert abs(cell.mean()) < 4 * 0.5 / np.sqrt(cell.size)

    def test_threshold_count_depends_on_y_only(self):
        batch = self.batch(seed=17)
        surr = gen_surrogate(batch, SurrogateSpec("threshold_count", 4.0), RngHandle(3))
        y = batch.truth.unlabeled_latent_y
        assert np.all(surr.s >= 0) and np.all(surr.s == np.floor(surr.s))
        hi, lo = surr.s[y > 0], surr.s[y <= 0]
        assert hi.mean() == pytest.approx(4.0, abs=4 * 2 / np.sqrt(hi.size))
        assert lo.mean() == pytest.approx(1.0, abs=4 * 1 / np.sqrt(lo.size))

    def test_imperfect_leaks_first_covariate(self):
        batch = self.batch(seed=18)
        surr = gen_surrogate(batch, SurrogateSpec("imperfect", 1.0), RngHandle(4))
        leak = surr.s - batch.truth.unlabeled_latent_y
        corr = np.corrcoef(leak, batch.unlabeled.Z[:, 0])[0, 1]
        assert corr > 0.5
        assert surr.provenance == "imperfect(1)"
