import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import multivariate_normal, norm

from csfuse import (
    BlockProjection,
    DataError,
    DimensionError,
    HypothesisStats,
    build_gaussian_model,
    case2_spec,
    cav_stat,
    closed_form_stats,
    block_compress,
    compressed_moments,
    energy_stat,
    energy_threshold,
    gaussian_model_from_moments,
    llr_ga,
    llr_product,
    ls_offdiag,
    make_orthoprojector,
    nested_block_inverse,
    sample,
    sample_frames,
    sample_cov,
)
from csfuse.errors import ConfigError, LeastSquaresError
from csfuse.scenarios import ScenarioSpec

FIG_PARAMS = dict(lambda0=0.1, lambda1=1 / 10.2, a0=9.8, a1=10.0)


def block_projection(m, n, l, base_seed=0):
    return BlockProjection(
        tuple(make_orthoprojector(m, n, 100 + base_seed * 31 + j) for j in range(l))
    )


def stats_from_grids(n, mean0, mean1, grid0, grid1):
    return HypothesisStats(
        n=n,
        mean0=tuple(mean0),
        mean1=tuple(mean1),
        grid0=np.asarray(grid0, dtype=float),
        grid1=np.asarray(grid1, dtype=float),
    )


class TestNestedBlockInverse:
    @pytest.mark.parametrize("m,l", [(4, 1), (4, 2), (8, 3), (16, 4)])
    def test_matches_dense_inverse(self, m, l):
        rng = np.random.default_rng(m * l)
        root = rng.standard_normal((m * l, m * l))
        c = root @ root.T + m * l * np.eye(m * l)
        assert np.max(np.abs(nested_block_inverse(c, m) - np.linalg.inv(c))) <= 1e-8

    def test_bad_block_size(self):
        with pytest.raises(DimensionError):
            nested_block_inverse(np.eye(6), 4)


class TestGaussianModel:
    def test_identical_hypotheses_score_zero(self):
        stats = stats_from_grids(16, (0.0, 0.0), (0.0, 0.0), np.eye(2), np.eye(2))
        bp = block_projection(4, 16, 2)
        model = build_gaussian_model(stats, bp)
        assert model.tau0 == 0.0
        rng = np.random.default_rng(1)
        for _ in range(5):
            y = rng.standard_normal(8)
            assert abs(llr_ga(y, model)) <= 1e-12

    def test_zero_observation_scores_tau0(self):
        stats = closed_form_stats(case2_spec(32, **FIG_PARAMS))
        bp = block_projection(8, 32, 2)
        model = build_gaussian_model(stats, bp)
        assert_allclose(llr_ga(np.zeros(16), model), model.tau0)

    def test_diagonal_blocks_give_closed_form_tau0(self):
        # pure per-sensor variance change: tau0 = (M/2) sum log(var0/var1)
        v0 = (2.0, 5.0)
        v1 = (2.5, 4.5)
        stats = stats_from_grids(32, (0.0, 0.0), (0.0, 0.0), np.diag(v0), np.diag(v1))
        m = 8
        bp = block_projection(m, 32, 2)
        model = build_gaussian_model(stats, bp)
        expected = 0.5 * m * sum(math.log(a / b) for a, b in zip(v0, v1))
        assert_allclose(model.tau0, expected, rtol=1e-10)

    def test_matches_log_density_difference(self):
        stats = closed_form_stats(case2_spec(48, **FIG_PARAMS))
        bp = block_projection(12, 48, 2)
        model = build_gaussian_model(stats, bp)
        mu0, c0 = compressed_moments(stats, bp, 0)
        mu1, c1 = compressed_moments(stats, bp, 1)
        f0 = multivariate_normal(mean=mu0, cov=c0)
        f1 = multivariate_normal(mean=mu1, cov=c1)
        for s in range(10):
            y = block_compress(bp, sample(case2_spec(48, **FIG_PARAMS), s % 2, seed=s))
            assert abs(llr_ga(y, model) - (f1.logpdf(y) - f0.logpdf(y))) <= 1e-8

    def test_compressed_moments_match_dense_route(self):
        from csfuse import compress_stats

        spec = case2_spec(12, **FIG_PARAMS)
        stats = closed_form_stats(spec)
        bp = block_projection(5, 12, 2)
        mu_fast, c_fast = compressed_moments(stats, bp, 1)
        mu_dense, c_dense = compress_stats(bp, stats.beta(1), stats.cov_dense(1))
        assert_allclose(mu_fast, mu_dense, atol=1e-12)
        assert_allclose(c_fast, c_dense, atol=1e-12)

    def test_cross_block_present_in_case2(self):
        spec = case2_spec(40, **FIG_PARAMS)
        stats = closed_form_stats(spec)
        bp = block_projection(10, 40, 2)
        model = build_gaussian_model(stats, bp)
        cross = model.c1[:10, 10:]
        expected = stats.grid1[0, 1] * (bp.blocks[0].entries @ bp.blocks[1].entries.T)
        assert_allclose(cross, expected, atol=1e-12)
        assert np.max(np.abs(model.inv1 - np.linalg.inv(model.c1))) <= 1e-8

    def test_batch_scoring_matches_scalar(self):
        stats = closed_form_stats(case2_spec(32, **FIG_PARAMS))
        bp = block_projection(8, 32, 2)
        model = build_gaussian_model(stats, bp)
        ys = np.vstack(
            [block_compress(bp, sample(case2_spec(32, **FIG_PARAMS), 1, seed=s)) for s in range(4)]
        )
        batch = llr_ga(ys, model)
        singles = [llr_ga(y, model) for y in ys]
        assert_allclose(batch, singles, rtol=1e-12)

    def test_ridge_applied_to_singular_sample_cov(self):
        rank_deficient = np.outer(np.ones(6), np.ones(6))
        model = gaussian_model_from_moments(
            np.zeros(6), np.eye(6), np.zeros(6), rank_deficient, block_size=3
        )
        assert model.ridge1 > 0.0
        # condition ~ 6e10 after the ridge; float64 can do no better than ~1e-5
        assert model.inverse_defect() <= 1e-3

    def test_dimension_mismatch(self):
        stats = closed_form_stats(case2_spec(32, **FIG_PARAMS))
        bp = block_projection(8, 32, 2)
        model = build_gaussian_model(stats, bp)
        with pytest.raises(DimensionError):
            llr_ga(np.zeros(7), model)


class TestLlrProduct:
    def test_identical_marginals_zero(self):
        spec = case2_spec(64, lambda0=0.1, lambda1=0.1, a0=9.8, a1=9.8)
        x = sample(spec, 1, seed=4)
        assert_allclose(llr_product(x, spec), 0.0, atol=1e-10)

    def test_single_gaussian_sensor_closed_form(self):
        # equal variances, mean shift: sum[(m1-m0)x/s^2 + (m0^2-m1^2)/(2 s^2)]
        spec = ScenarioSpec("case1", 128, {"sigma0_sq": 5.1, "lambda1": 1 / 10.2})
        x = sample(spec, 0, seed=9)
        x1 = x[:128]
        lam0, lam1 = spec.param("lambda0"), spec.param("lambda1")
        expected_exp = np.sum(np.log(lam1 / lam0) - (lam1 - lam0) * x[128:])
        # Gaussian sensor has equal variance under both hypotheses here
        assert_allclose(
            llr_product(x, spec), expected_exp, atol=1e-10
        )

    def test_case2_closed_form_oracle(self):
        spec = case2_spec(256, **FIG_PARAMS)
        x = sample(spec, 1, seed=17)
        lam0, lam1 = FIG_PARAMS["lambda0"], FIG_PARAMS["lambda1"]
        a0, a1 = FIG_PARAMS["a0"], FIG_PARAMS["a1"]
        x2, x3 = x[:256], x[256:]
        oracle = np.sum(np.log(lam1 / lam0) - (lam1 - lam0) * x2) + np.sum(
            np.log(a1 / a0) + (a1 - a0) * np.log(x3)
        )
        assert abs(llr_product(x, spec) - oracle) <= 1e-10

    def test_zero_h0_density_sentinel(self):
        spec = case2_spec(4, **FIG_PARAMS)
        x = np.concatenate([np.full(4, 1.0), np.full(4, 0.5)])
        x[0] = -1.0  # outside the exponential support under both hypotheses
        assert llr_product(x, spec) == -math.inf or math.isinf(llr_product(x, spec))

    def test_time_permutation_invariance(self):
        spec = case2_spec(64, **FIG_PARAMS)
        x = sample(spec, 1, seed=23)
        rng = np.random.default_rng(0)
        perm = rng.permutation(64)
        x_perm = np.concatenate([x[:64][perm], x[64:][perm]])
        assert_allclose(llr_product(x_perm, spec), llr_product(x, spec), rtol=1e-12)


class TestEnergy:
    def test_zero_frames(self):
        assert energy_stat(np.zeros((3, 5))) == 0.0

    def test_single_frame(self):
        assert energy_stat(np.array([[3.0, 4.0]])) == 25.0

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            energy_stat(np.empty((0, 4)))

    def test_sensor_order_invariance(self):
        frames = np.random.default_rng(3).standard_normal((4, 10))
        flipped = np.concatenate([frames[:, 5:], frames[:, :5]], axis=1)
        assert_allclose(energy_stat(flipped), energy_stat(frames))

    def test_compression_shrinks_energy_by_ratio(self):
        spec = case2_spec(200, **FIG_PARAMS)
        m = 50
        ratios = []
        for s in range(300):
            bp = block_projection(m, 200, 2, base_seed=s)
            x = sample(spec, 0, seed=s)
            ratios.append(energy_stat(block_compress(bp, x)) / energy_stat(x))
        assert_allclose(np.mean(ratios), m / 200, rtol=0.05)


class TestEnergyThreshold:
    def test_median_alpha_gives_mean(self):
        tau = energy_threshold("uncompressed", 0.5, 0.1, 9.8, 1000, 10)
        mean = 1000 * 10 * (2 / 0.1**2 + 9.8 / 11.8)
        assert_allclose(tau, mean, rtol=1e-12)

    def test_decreasing_in_alpha(self):
        taus = [
            energy_threshold("uncompressed", a, 0.1, 9.8, 1000, 10)
            for a in (0.01, 0.05, 0.1, 0.3)
        ]
        assert all(a > b for a, b in zip(taus, taus[1:]))

    def test_printed_variant_differs(self):
        corrected = energy_threshold("uncompressed", 0.05, 0.1, 9.8, 1000, 10)
        printed = energy_threshold("uncompressed", 0.05, 0.1, 9.8, 1000, 10, variance="printed")
        assert corrected > printed  # 20/lambda^4 > 20/lambda^2 for lambda < 1

    def test_invalid_alpha(self):
        with pytest.raises(ConfigError):
            energy_threshold("uncompressed", 0.0, 0.1, 9.8, 1000, 10)

    def test_uncompressed_false_alarm_calibration(self):
        # Monte Carlo oracle at N T = 10^4 where the Gaussian approximation
        # of the energy sum holds; fewer trials than the acceptance run
        spec = case2_spec(1000, **FIG_PARAMS)
        n, t, trials, alpha0 = 1000, 10, 2500, 0.05
        stats = np.empty(trials)
        for i in range(trials):
            frames = sample_frames(spec, 0, t, seed=i)
            stats[i] = energy_stat(frames)
        tau = energy_threshold("uncompressed", alpha0, 0.1, 9.8, n, t)
        pf = np.mean(stats > tau)
        band = 3 * math.sqrt(alpha0 * (1 - alpha0) / trials)
        assert abs(pf - alpha0) <= band


class TestSampleCov:
    def test_constant_frames_zero(self):
        frames = np.tile(np.arange(4.0), (6, 1))
        assert_allclose(sample_cov(frames), 0.0, atol=1e-15)

    def test_two_antipodal_frames(self):
        v = np.array([1.0, -2.0, 0.5])
        frames = np.vstack([v, -v])
        assert_allclose(sample_cov(frames, known_mean=np.zeros(3)), np.outer(v, v))

    def test_lln_identity(self):
        rng = np.random.default_rng(8)
        frames = rng.standard_normal((10_000, 6))
        assert np.max(np.abs(sample_cov(frames) - np.eye(6))) <= 0.1

    def test_single_frame_needs_known_mean(self):
        with pytest.raises(DataError):
            sample_cov(np.ones((1, 3)))


def forward_cov(bp, pairs, values, base_diag=1.0):
    """Noiseless compressed covariance with the given off-diagonal entries."""
    nl = bp.in_dim
    d = base_diag * np.eye(nl)
    for (i, j), v in zip(pairs, values):
        d[i, j] = d[j, i] = v
    a = bp.dense()
    return a @ d @ a.T


class TestLsOffdiag:
    def test_noiseless_recovery(self):
        bp = block_projection(6, 10, 2)
        pairs = [(2, 13), (5, 17)]
        values = [0.7, -0.4]
        c = forward_cov(bp, pairs, values)
        est = ls_offdiag(c, bp, pairs, mode="exact")
        assert_allclose(est.d_hat, values, atol=1e-8)

    def test_zero_structure_recovers_zero(self):
        bp = block_projection(6, 10, 2)
        pairs = [(0, 10), (3, 14)]
        c = forward_cov(bp, pairs, [0.0, 0.0])
        est = ls_offdiag(c, bp, pairs, mode="exact")
        assert np.max(np.abs(est.d_hat)) <= 1e-8

    def test_matches_dense_least_squares(self):
        # NL = 16, ML = 12, |U| = 3 against a vectorized lstsq oracle
        bp = block_projection(6, 8, 2, base_seed=5)
        pairs = [(1, 9), (4, 12), (2, 6)]  # includes one same-sensor pair
        rng = np.random.default_rng(12)
        sym = rng.standard_normal((12, 12))
        c = (sym + sym.T) / 2.0
        est = ls_offdiag(c, bp, pairs, mode="exact")

        cols = []
        for i, j in pairs:
            ai, aj = bp.column(i), bp.column(j)
            cols.append((np.outer(ai, aj) + np.outer(aj, ai)).ravel())
        design = np.stack(cols, axis=1)
        oracle, *_ = np.linalg.lstsq(design, c.ravel(), rcond=None)
        assert_allclose(est.d_hat, oracle, atol=1e-8)

    def test_paper_mode_matches_exact_for_cross_sensor_pairs(self):
        bp = block_projection(6, 10, 2, base_seed=2)
        pairs = [(0, 10), (4, 15), (7, 19)]
        rng = np.random.default_rng(3)
        sym = rng.standard_normal((12, 12))
        c = (sym + sym.T) / 2.0
        exact = ls_offdiag(c, bp, pairs, mode="exact")
        paper = ls_offdiag(c, bp, pairs, mode="paper")
        assert_allclose(exact.d_hat, paper.d_hat, rtol=1e-10)

    def test_paper_mode_deviates_for_same_sensor_pairs(self):
        # within one sensor the dropped cross products are nonzero; use a
        # zero-diagonal ambient matrix so the target lies in the design span
        bp = block_projection(6, 8, 2, base_seed=7)
        pairs = [(0, 3), (1, 5)]
        values = [0.6, -0.2]
        c = forward_cov(bp, pairs, values, base_diag=0.0)
        exact = ls_offdiag(c, bp, pairs, mode="exact")
        paper = ls_offdiag(c, bp, pairs, mode="paper")
        assert_allclose(exact.d_hat, values, atol=1e-8)
        assert np.max(np.abs(paper.d_hat - values)) > 1e-6

    def test_tied_recovery(self):
        bp = block_projection(8, 12, 2, base_seed=9)
        pairs = [(i, 12 + i) for i in range(12)]
        c = forward_cov(bp, pairs, [0.45] * 12)
        est = ls_offdiag(c, bp, pairs, mode="exact", tied=True)
        assert_allclose(est.d_hat, 0.45, atol=1e-8)
        assert est.tied

    def test_empty_pairs_rejected(self):
        bp = block_projection(4, 6, 2)
        with pytest.raises(ConfigError):
            ls_offdiag(np.eye(8), bp, [])

    def test_invalid_pair_rejected(self):
        bp = block_projection(4, 6, 2)
        with pytest.raises(ConfigError):
            ls_offdiag(np.eye(8), bp, [(5, 3)])

    def test_singular_design_raises(self):
        bp = block_projection(1, 6, 2)  # M=1: repeated pairs collapse rank
        pairs = [(0, 6), (0, 6)]
        with pytest.raises((LeastSquaresError, ConfigError)):
            ls_offdiag(np.eye(2), bp, pairs)


class TestCavStat:
    def test_zero_offdiag_gives_one(self):
        bp = block_projection(6, 10, 2)
        pairs = [(i, 10 + i) for i in range(10)]
        c = forward_cov(bp, pairs, [0.0] * 10)
        est = ls_offdiag(c, bp, pairs, mode="exact", tied=True)
        assert_allclose(cav_stat(est), 1.0, atol=1e-9)

    def test_arithmetic(self):
        from csfuse import OffDiagEstimate

        est = OffDiagEstimate(
            pairs=((0, 1),), d_hat=np.array([0.5]), eta=2.0, mode="exact", tied=False
        )
        assert_allclose(cav_stat(est), 1.5)

    def test_at_least_one(self):
        rng = np.random.default_rng(0)
        bp = block_projection(8, 16, 2)
        pairs = [(i, 16 + i) for i in range(16)]
        spec = case2_spec(16, **FIG_PARAMS)
        for s in range(5):
            frames = sample_frames(spec, s % 2, 6, seed=s)
            y = block_compress(bp, frames)
            est = ls_offdiag(sample_cov(y), bp, pairs, tied=True)
            assert cav_stat(est) >= 1.0

    def test_degenerate_eta(self):
        from csfuse import OffDiagEstimate

        est = OffDiagEstimate(
            pairs=((0, 1),), d_hat=np.array([0.0]), eta=0.0, mode="exact", tied=False
        )
        with pytest.raises(DataError):
            cav_stat(est)

    def test_tied_estimator_unbiased_in_the_limit(self):
        # mean of the tied estimate over repeated trials at T = 100 lands
        # within 10% of the true shared cross scalar
        from csfuse import OffdiagPlan, case2_spec, closed_form_stats

        n, m, t = 200, 20, 100
        spec = case2_spec(n, **FIG_PARAMS)
        target = closed_form_stats(spec).grid1[0, 1]
        bp = block_projection(m, n, 2, base_seed=6)
        plan = OffdiagPlan(bp, [(i, n + i) for i in range(n)], tied=True)
        estimates = []
        for s in range(200):
            frames = sample_frames(spec, 1, t, seed=5000 + s)
            y = block_compress(bp, frames)
            estimates.append(plan.estimate(sample_cov(y)).d_hat[0])
        assert abs(np.mean(estimates) - target) <= 0.10 * abs(target)

    def test_compressed_coordinate_normality_improves_with_n(self):
        # one-dimensional KS distance to the matched normal shrinks as the
        # ambient dimension grows, supporting the central-limit treatment
        from scipy.stats import kstest

        from csfuse import case2_spec, closed_form_stats

        distances = []
        for n in (10, 100, 1000):
            spec = case2_spec(n, **FIG_PARAMS)
            stats = closed_form_stats(spec)
            row = make_orthoprojector(1, n, 99).entries[0]
            samples = np.empty(10_000)
            for s in range(10_000):
                x2 = sample_frames(spec, 1, 1, seed=s)[0, :n]
                samples[s] = row @ x2
            mu = stats.mean1[0] * row.sum()
            sigma = math.sqrt(stats.grid1[0, 0])  # unit-norm row
            distances.append(kstest(samples, "norm", args=(mu, sigma)).statistic)
        assert distances[0] > distances[1] > distances[2]

    def test_h1_separates_from_h0_at_figure_parameters(self):
        spec = case2_spec(300, **FIG_PARAMS)
        m, t = 12, 10  # c_r = 0.04 at desk scale
        bp = block_projection(m, 300, 2, base_seed=3)
        pairs = [(i, 300 + i) for i in range(300)]
        from csfuse import OffdiagPlan

        plan = OffdiagPlan(bp, pairs, tied=True)
        lam = {0: [], 1: []}
        for hyp in (0, 1):
            for s in range(60):
                frames = sample_frames(spec, hyp, t, seed=1000 + s)
                y = block_compress(bp, frames)
                lam[hyp].append(cav_stat(plan.estimate(sample_cov(y))))
        assert np.median(lam[1]) > np.median(lam[0])
