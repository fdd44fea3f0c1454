import numpy as np
import pytest

from rwre_lab.env import (DirichletNeighbors, EnvironmentHandle,
                          EnvironmentModel, Homogeneous, SiteKernel,
                          nearest_neighbor_jumps)
from rwre_lab.paths import endpoint_coord
from rwre_lab.prf import derive_seed
from rwre_lab.regen import InsufficientDataError
from rwre_lab import stats as st
from rwre_lab.walk import simulate_pair, simulate_walk

from oracles import first_slab_moment_dp

JS2 = nearest_neighbor_jumps(2)
DRIFT_PROBS = np.array([0.4, 0.25, 0.1, 0.25])


def homog_model(probs=DRIFT_PROBS):
    return EnvironmentModel(2, 0, 1.0, Homogeneous(SiteKernel(JS2, probs)))


def dirichlet_model():
    return EnvironmentModel(2, 0, 1.0, DirichletNeighbors(
        JS2, np.array([4.0, 2.0, 1.0, 2.0])))


def deterministic_model():
    return homog_model(np.array([1.0, 0.0, 0.0, 0.0]))


class TestV0:
    def test_deterministic_walk(self):
        est = st.estimate_v0(deterministic_model(), 100, 4, master_seed=1)
        assert np.array_equal(est.direct, [1.0, 0.0])
        assert np.array_equal(est.regen_ratio, [1.0, 0.0])

    def test_homogeneous_matches_kernel_mean(self):
        model = homog_model()
        est = st.estimate_v0(model, 4000, 48, master_seed=2)
        truth = model.mean_kernel_drift()
        for i in range(2):
            half = (est.direct_ci[1, i] - est.direct_ci[0, i]) / 2
            assert abs(est.direct[i] - truth[i]) < 3 * max(half, 1e-3)

    def test_estimators_cross_check(self):
        est = st.estimate_v0(dirichlet_model(), 4000, 48, master_seed=3)
        for i in range(2):
            width = (est.direct_ci[1, i] - est.direct_ci[0, i]
                     + est.regen_ratio_ci[1, i] - est.regen_ratio_ci[0, i])
            assert abs(est.direct[i] - est.regen_ratio[i]) < 1.5 * width + 1e-3

    def test_replica_floor(self):
        with pytest.raises(InsufficientDataError):
            st.estimate_v0(homog_model(), 100, 1, master_seed=1)


class TestAnnealedCovariance:
    def test_deterministic_walk_gives_zero(self):
        dx, tau = st.pooled_increments(deterministic_model(), 300, 2,
                                       master_seed=1)
        sigma = st.estimate_annealed_covariance(dx, tau, [1.0, 0.0])
        assert np.allclose(sigma, 0.0)

    def test_symmetry_and_psd(self):
        dx, tau = st.pooled_increments(dirichlet_model(), 3000, 20,
                                       master_seed=4)
        v0 = dx.sum(axis=0) / tau.sum()
        sigma = st.estimate_annealed_covariance(dx, tau, v0)
        assert np.allclose(sigma, sigma.T)
        assert np.all(np.linalg.eigvalsh(sigma) >= -1e-9)

    def test_matches_direct_endpoint_covariance(self):
        # homogeneous: increments-based estimate vs plain endpoint covariance
        model = homog_model()
        dx, tau = st.pooled_increments(model, 4000, 50, master_seed=5)
        v0 = model.mean_kernel_drift()
        sigma = st.estimate_annealed_covariance(dx, tau, v0)
        n, walks = 1024, 2000
        handle = EnvironmentHandle(model, env_seed=123)
        ends = np.empty((walks, 2))
        for m in range(walks):
            traj = simulate_walk(handle, [0, 0], n, derive_seed(6, "w", m))
            ends[m] = (traj.positions[-1] - v0 * n) / np.sqrt(n)
        direct = np.cov(ends, rowvar=False)
        se = direct * np.sqrt(2.0 / walks) + 3e-2
        assert np.all(np.abs(sigma - direct) < 3 * se + 0.05)

    def test_increment_floor(self):
        with pytest.raises(InsufficientDataError):
            st.estimate_annealed_covariance(np.zeros((10, 2)), np.ones(10),
                                            [0.0, 0.0])


class TestQuenchedExpectation:
    def test_deterministic_environment(self):
        handle = EnvironmentHandle(deterministic_model(), env_seed=1)
        mean, var, used, censored = st.quenched_expectation(
            handle, endpoint_coord(1), 16, 8, [1.0, 0.0], 2, 32, seed=1)
        assert var == 0.0
        assert mean == 0.0  # transverse coordinate of a straight walk
        assert used == 8 and censored == 0

    def test_minimal_m(self):
        handle = EnvironmentHandle(dirichlet_model(), env_seed=2)
        mean, var, used, _ = st.quenched_expectation(
            handle, endpoint_coord(1), 32, 2, [1 / 3, 0.0], 4, 64, seed=2)
        assert np.isfinite(mean) and np.isfinite(var)
        assert used >= 2


class TestVarianceDecay:
    def test_nested_identity_exact(self):
        res = st.variance_decay(dirichlet_model(), endpoint_coord(1),
                                [64, 128], 6, 6, master_seed=9,
                                v0=np.array([1 / 3, 0.0]))
        assert np.allclose(res.raw_variance - res.corrected_variance,
                           res.mean_inner_variance / 6)

    def test_homogeneous_null(self):
        model = homog_model()
        res = st.variance_decay(model, endpoint_coord(1), [64, 128, 256],
                                40, 16, master_seed=10,
                                v0=model.mean_kernel_drift())
        assert np.all(np.abs(res.corrected_variance)
                      < 4 * res.standard_error + 1e-3)

    def test_doubling_m_lowers_raw_not_corrected(self):
        model = dirichlet_model()
        v0 = np.array([1 / 3, 0.0])
        a = st.variance_decay(model, endpoint_coord(1), [128], 60, 8,
                              master_seed=11, v0=v0)
        b = st.variance_decay(model, endpoint_coord(1), [128], 60, 32,
                              master_seed=11, v0=v0)
        assert b.raw_variance[0] < a.raw_variance[0]
        tol = 3 * (a.standard_error[0] + b.standard_error[0])
        assert abs(a.corrected_variance[0] - b.corrected_variance[0]) < tol

    def test_grid_must_increase(self):
        with pytest.raises(InsufficientDataError):
            st.variance_decay(dirichlet_model(), endpoint_coord(1),
                              [128, 64], 4, 4, master_seed=1,
                              v0=np.zeros(2))

    def test_worker_count_does_not_change_results(self):
        model = dirichlet_model()
        v0 = np.array([1 / 3, 0.0])
        seq = st.variance_decay(model, endpoint_coord(1), [64], 6, 6,
                                master_seed=12, v0=v0, workers=1)
        par = st.variance_decay(model, endpoint_coord(1), [64], 6, 6,
                                master_seed=12, v0=v0, workers=3)
        assert np.array_equal(seq.env_means, par.env_means)
        assert np.array_equal(seq.corrected_variance, par.corrected_variance)


def synthetic_result(n_grid, variances):
    return st.NestedMCResult(
        n_grid=list(n_grid), outer_count=2, inner_count=2,
        raw_variance=np.asarray(variances, dtype=np.float64),
        mean_inner_variance=np.zeros(len(n_grid)),
        corrected_variance=np.asarray(variances, dtype=np.float64),
        standard_error=np.zeros(len(n_grid)),
        negative_flags=np.zeros(len(n_grid), dtype=bool),
        censored_walks=np.zeros(len(n_grid), dtype=np.int64))


class TestDecayFit:
    def test_exact_power_law(self):
        grid = [128, 256, 512, 1024]
        fit = st.fit_decay_exponent(
            synthetic_result(grid, [n ** -0.5 for n in grid]))
        assert fit.ok
        assert fit.exponent == pytest.approx(-0.5, abs=1e-9)
        assert fit.r_squared == pytest.approx(1.0)

    def test_flat_input(self):
        grid = [128, 256, 512]
        fit = st.fit_decay_exponent(synthetic_result(grid, [0.25] * 3))
        assert fit.exponent == pytest.approx(0.0, abs=1e-12)

    def test_too_few_positive_points(self):
        fit = st.fit_decay_exponent(
            synthetic_result([64, 128, 256], [0.1, -0.2, 0.3]))
        assert not fit.ok
        assert np.isnan(fit.exponent)
        assert "positive" in fit.message

    def test_noisy_calibration_ci_coverage(self):
        # CI should cover the true exponent in the large majority of
        # noisy synthetic repetitions
        rng = np.random.default_rng(1234)
        grid = np.array([128, 256, 512, 1024, 2048])
        k_envs = 40
        hit = 0
        reps = 100
        for _ in range(reps):
            # per-environment means with variance following n^{-1/2}
            means = rng.standard_normal((len(grid), k_envs)) \
                * np.sqrt(grid[:, None] ** -0.5)
            res = st.NestedMCResult(
                n_grid=list(grid), outer_count=k_envs, inner_count=2,
                raw_variance=means.var(axis=1, ddof=1),
                mean_inner_variance=np.zeros(len(grid)),
                corrected_variance=means.var(axis=1, ddof=1),
                standard_error=np.zeros(len(grid)),
                negative_flags=np.zeros(len(grid), dtype=bool),
                censored_walks=np.zeros(len(grid), dtype=np.int64),
                env_means=means,
                env_inner_vars=np.zeros((len(grid), k_envs)))
            fit = st.fit_decay_exponent(res, n_boot=100, seed=int(rng.integers(1 << 31)))
            if fit.ci[0] <= -0.5 <= fit.ci[1]:
                hit += 1
        assert hit >= 80  # nominal 90%, generous slack for bootstrap noise


class TestSpearmanTrend:
    def test_exact_small_grid_p_values(self):
        rho, p = st.spearman_trend([1, 2, 3], [1.0, 2.0, 3.0])
        assert rho == pytest.approx(1.0)
        assert p == pytest.approx(1 / 6)
        rho, p = st.spearman_trend([1, 2, 3], [3.0, 2.0, 1.0])
        assert rho == pytest.approx(-1.0)
        assert p == pytest.approx(1.0)

    def test_constant_series(self):
        rho, p = st.spearman_trend([1, 2, 3], [1.0, 1.0, 1.0])
        assert rho == 0.0 and p == 1.0


class TestIntersections:
    def test_identical_deterministic_pair_meets_everywhere(self):
        handle = EnvironmentHandle(deterministic_model(), env_seed=1)
        pair = simulate_pair(handle, [0, 0], [0, 0], 200, 1, 2)
        rep = st.pair_replica_stats(pair, 0, 1, 16, 0.1)
        assert not rep.censored
        assert rep.jrlc == 16  # identical paths intersect in every slab
        assert 1 <= rep.jrl_le  # coincident joint positions are within n^eps
        assert rep.decorr_sum <= rep.jrlc

    def test_parallel_disjoint_pair_never_meets(self):
        handle = EnvironmentHandle(deterministic_model(), env_seed=1)
        pair = simulate_pair(handle, [0, 0], [0, 5], 200, 1, 2)
        rep = st.pair_replica_stats(pair, 0, 1, 16, 0.1)
        assert rep.jrlc == 0
        assert rep.decorr_sum == 0.0

    def test_invariants_on_dirichlet_replicas(self):
        agg = st.intersection_stats(dirichlet_model(), 32, 0.1, 12,
                                    master_seed=77)
        assert len(agg.usable) >= 10
        for rep in agg.usable:
            assert rep.jrlc <= 32
            assert rep.decorr_sum <= rep.jrlc + 1e-9
            if rep.e_n:
                assert rep.jrlc_subset_jrl_le

    def test_censoring_short_horizon(self):
        agg = st.intersection_stats(dirichlet_model(), 64, 0.1, 4,
                                    master_seed=1, horizon_factor=2)
        assert all(r.censored for r in agg.replicas)

    def test_decorrelation_curve_needs_two_scales(self):
        agg = st.intersection_stats(dirichlet_model(), 16, 0.1, 4,
                                    master_seed=2)
        with pytest.raises(InsufficientDataError):
            st.decorrelation_curve([agg])


class TestFirstSlab:
    def test_deterministic_walk_exact(self):
        out = st.conditioned_first_slab_moment(deterministic_model(), [1, 3],
                                               200, master_seed=1, horizon=64)
        assert out[0].second_moment == 1.0
        assert out[1].second_moment == 9.0
        assert out[0].acceptance_rate == 1.0

    def test_matches_level_chain_recursion(self):
        # offsets are ordered (+e1, +e2, -e1, -e2), so the level chain has
        # p_up = 0.4, p_down = 0.1 and lateral mass 0.5
        model = homog_model()
        out = st.conditioned_first_slab_moment(model, [2], 4000,
                                               master_seed=2, horizon=256)
        truth, p_accept, trunc = first_slab_moment_dp(0.4, 0.1, 0.5, 2,
                                                      maxlen=200)
        assert trunc < 1e-9
        est = out[0]
        assert abs(est.second_moment - truth) < 3 * est.standard_error + trunc
        rate_se = np.sqrt(p_accept * (1 - p_accept) / est.decided)
        assert abs(est.acceptance_rate - p_accept) < 4 * rate_se

    def test_unreachable_level_censored(self):
        out = st.conditioned_first_slab_moment(homog_model(), [60], 50,
                                               master_seed=3, horizon=40)
        assert out[0].censored


class TestCLT:
    def test_degenerate_environment_flagged(self):
        handle = EnvironmentHandle(deterministic_model(), env_seed=1)
        rep = st.quenched_clt_distance(handle, 64, 500, np.eye(2),
                                       [1.0, 0.0], margin=1, seed=1)
        assert rep.degenerate

    def test_singular_sigma_flagged(self):
        handle = EnvironmentHandle(dirichlet_model(), env_seed=2)
        sigma = np.array([[1.0, 0.0], [0.0, 0.0]])
        rep = st.quenched_clt_distance(handle, 64, 500, sigma,
                                       [1 / 3, 0.0], seed=2)
        assert rep.singular_sigma

    def test_walk_floor(self):
        handle = EnvironmentHandle(dirichlet_model(), env_seed=2)
        with pytest.raises(InsufficientDataError):
            st.quenched_clt_distance(handle, 64, 100, np.eye(2),
                                     [1 / 3, 0.0])

    def test_homogeneous_large_n_is_close_to_gaussian(self):
        model = homog_model()
        dx, tau = st.pooled_increments(model, 3000, 30, master_seed=6)
        v0 = model.mean_kernel_drift()
        sigma = st.estimate_annealed_covariance(dx, tau, v0)
        handle = EnvironmentHandle(model, env_seed=3)
        rep = st.quenched_clt_distance(handle, 1024, 1000, sigma, v0, seed=4)
        assert not rep.degenerate
        assert np.all(rep.ks_per_coord < 0.08)
        assert rep.energy_distance < 0.05
