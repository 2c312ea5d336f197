import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from censuscast.forecast import (
    ForecastResult,
    HeldoutScore,
    draw_forecasts,
    heldout_loglik,
    mae,
    nearest_rank_percentile,
)
from censuscast.latents import GarParams, GgpParams, ggp_conditional
from censuscast.likelihoods import GenPoissonParams, genpoisson_logpmf, genpoisson_mean_var
from censuscast.model import ModelSpec, PosteriorSample


def make_gar_samples(n, beta, sigma, lam, latents, n_sites=1):
    """Identical-parameter posterior samples for distribution checks."""
    return [
        PosteriorSample(
            latent_params=GarParams(beta=beta, sigma=sigma),
            lams=np.full(n_sites, lam) if lam is not None else None,
            latents=np.atleast_2d(np.asarray(latents, dtype=float)),
            chain=0,
            draw=i,
        )
        for i in range(n)
    ]


class TestDrawForecasts:
    def test_degenerate_noise_propagates_last_latent(self):
        samples = make_gar_samples(50, [0.0, 1.0], 1e-12, 0.0, [[1.3, 1.7]])
        spec = ModelSpec("gar", "genpoisson", train_len=2, window=1)
        res = draw_forecasts(samples, spec, horizon=5, seed=0)[0]
        assert np.allclose(res.latent_paths, 1.7, atol=1e-9)

    def test_single_sample_counts_match_genpoisson(self):
        # with sigma ~ 0 the latent is fixed, so counts across samples are
        # i.i.d. generalized Poisson draws at theta = exp(f), lam
        f_last, lam = 2.2, -0.25
        n = 40_000
        samples = make_gar_samples(n, [0.0, 1.0], 1e-12, lam, [[f_last]])
        spec = ModelSpec("gar", "genpoisson", train_len=1, window=1)
        res = draw_forecasts(samples, spec, horizon=1, seed=1)[0]
        p = GenPoissonParams(math.exp(f_last), lam)
        mean, var = genpoisson_mean_var(p)
        draws = res.paths[:, 0]
        assert abs(draws.mean() - mean) < 4 * math.sqrt(var / n)
        for y in range(int(draws.max()) + 1):
            prob = math.exp(genpoisson_logpmf(y, p))
            se = math.sqrt(prob * (1 - prob) / n)
            assert abs(np.mean(draws == y) - prob) <= 5 * se + 1e-12

    def test_percentiles_are_monotone(self):
        rng = np.random.default_rng(2)
        latents = rng.normal(2.0, 0.1, size=(1, 10))
        samples = make_gar_samples(5000, [0.02, 0.99], 0.05, -0.2, latents)
        spec = ModelSpec("gar", "genpoisson", train_len=10, window=1)
        res = draw_forecasts(samples, spec, horizon=14, seed=3)[0]
        assert np.all(res.p2_5 <= res.p50)
        assert np.all(res.p50 <= res.p97_5)
        assert np.all(res.paths >= 0)

    def test_deterministic_given_seed(self):
        samples_a = make_gar_samples(100, [0.0, 1.0], 0.1, 0.1, [[2.0]])
        samples_b = make_gar_samples(100, [0.0, 1.0], 0.1, 0.1, [[2.0]])
        spec = ModelSpec("gar", "genpoisson", train_len=1, window=1)
        ra = draw_forecasts(samples_a, spec, horizon=4, seed=9)[0]
        rb = draw_forecasts(samples_b, spec, horizon=4, seed=9)[0]
        assert np.array_equal(ra.paths, rb.paths)

    def test_poisson_and_genpoisson_lam_zero_indistinguishable(self):
        n = 10_000
        latents = [[2.5]]
        spec_gp = ModelSpec("gar", "genpoisson", train_len=1, window=1)
        spec_po = ModelSpec("gar", "poisson", train_len=1, window=1)
        samples_gp = make_gar_samples(n, [0.0, 1.0], 0.05, 0.0, latents)
        samples_po = make_gar_samples(n, [0.0, 1.0], 0.05, None, latents)
        paths_gp = draw_forecasts(samples_gp, spec_gp, 1, seed=4)[0].paths[:, 0]
        paths_po = draw_forecasts(samples_po, spec_po, 1, seed=5)[0].paths[:, 0]
        assert ks_2samp(paths_gp, paths_po).pvalue > 0.01

    def test_multi_site_uses_per_site_dispersion(self):
        n = 8000
        samples = []
        for i in range(n):
            samples.append(
                PosteriorSample(
                    latent_params=GarParams(beta=[0.0, 1.0], sigma=1e-12),
                    lams=np.array([-0.4, 0.4]),
                    latents=np.array([[3.0], [3.0]]),
                    chain=0,
                    draw=i,
                )
            )
        spec = ModelSpec("gar", "genpoisson", train_len=1, window=1, n_sites=2)
        res = draw_forecasts(samples, spec, horizon=1, seed=6)
        theta = math.exp(3.0)
        var_under = genpoisson_mean_var(GenPoissonParams(theta, -0.4))[1]
        var_over = genpoisson_mean_var(GenPoissonParams(theta, 0.4))[1]
        assert abs(res[0].paths.var() - var_under) < 0.2 * var_under
        assert abs(res[1].paths.var() - var_over) < 0.2 * var_over

    def test_ggp_latent_paths_track_conditional_mean(self):
        p = GgpParams(c=2.0, a=0.8, ell=4.0)
        past = np.array([1.8, 1.9, 2.1, 2.3, 2.4])
        n = 6000
        samples = [
            PosteriorSample(
                latent_params=p,
                lams=np.array([0.0]),
                latents=past[None, :],
                chain=0,
                draw=i,
            )
            for i in range(n)
        ]
        spec = ModelSpec("ggp", "genpoisson", train_len=5)
        res = draw_forecasts(samples, spec, horizon=3, seed=7)[0]
        cond_mean, cond_cov = ggp_conditional(
            past, np.arange(5), np.arange(5, 8), p
        )
        se = np.sqrt(np.diag(cond_cov) / n)
        assert np.all(np.abs(res.latent_paths.mean(axis=0) - cond_mean) < 4 * se)

    def test_empty_samples_rejected(self):
        spec = ModelSpec("gar", "genpoisson", train_len=1, window=1)
        with pytest.raises(ValueError):
            draw_forecasts([], spec, 1, 0)


class TestHeldoutLoglik:
    def test_single_sample_single_day_is_exact_logpmf(self):
        f_future, lam, y = 1.9, -0.2, 6
        samples = make_gar_samples(1, [0.0, 1.0], 0.1, lam, [[1.5]])
        samples[0].forecast_latents = np.array([[f_future]])
        spec = ModelSpec("gar", "genpoisson", train_len=1, window=1)
        score = heldout_loglik(samples, spec, [y])
        expected = genpoisson_logpmf(y, GenPoissonParams(math.exp(f_future), lam))
        assert score.mean == pytest.approx(expected, abs=1e-12)
        assert score.n_groups == 1 and score.group_size == 1

    def test_group_protocol_and_pooled_mean(self):
        rng = np.random.default_rng(8)
        n = 5000
        samples = make_gar_samples(n, [0.0, 1.0], 0.1, 0.0, [[2.0]])
        for s in samples:
            s.forecast_latents = rng.normal(2.0, 0.1, size=(1, 3))
        spec = ModelSpec("gar", "genpoisson", train_len=1, window=1)
        score = heldout_loglik(samples, spec, [7, 8, 6])
        assert score.n_groups == 10
        assert score.group_size == 500
        assert score.mean == pytest.approx(score.group_values.mean(), abs=1e-12)
        assert score.sem == pytest.approx(
            score.group_values.std(ddof=1) / math.sqrt(10), abs=1e-12
        )

    def test_order_invariant_within_groups(self):
        rng = np.random.default_rng(9)
        samples = make_gar_samples(500, [0.0, 1.0], 0.1, 0.1, [[2.0]])
        for s in samples:
            s.forecast_latents = rng.normal(2.0, 0.2, size=(1, 2))
        spec = ModelSpec("gar", "genpoisson", train_len=1, window=1)
        base = heldout_loglik(samples, spec, [5, 9])
        perm = [samples[i] for i in rng.permutation(500)]
        shuffled = heldout_loglik(perm, spec, [5, 9])
        assert shuffled.mean == pytest.approx(base.mean, abs=1e-10)

    def test_all_zero_mass_group_flagged(self):
        samples = make_gar_samples(2, [0.0, 1.0], 0.1, -0.5, [[1.0]])
        for s in samples:
            s.forecast_latents = np.array([[math.log(2.0)]])  # theta = 2
        spec = ModelSpec("gar", "genpoisson", train_len=1, window=1)
        # y = 10 gives zz = 2 - 5 <= 0 for every draw
        score = heldout_loglik(samples, spec, [10])
        assert score.degenerate
        assert score.mean == -math.inf

    def test_requires_forecast_latents(self):
        samples = make_gar_samples(3, [0.0, 1.0], 0.1, 0.0, [[2.0]])
        spec = ModelSpec("gar", "genpoisson", train_len=1, window=1)
        with pytest.raises(ValueError):
            heldout_loglik(samples, spec, [4])

    def test_monte_carlo_matches_quadrature_small(self):
        # miniature version of the fixed-parameter quadrature check
        from scipy.integrate import quad

        beta0, beta1, sigma, lam, f_t, y = 0.1, 0.95, 0.3, -0.2, 2.0, 7
        m = beta0 + beta1 * f_t

        def gp_pmf(theta):
            # PMF written out by hand; zero where the support is truncated
            z = theta + lam * y
            if z <= 0:
                return 0.0
            return math.exp(
                math.log(theta) + (y - 1) * math.log(z) - z - math.lgamma(y + 1)
            )

        def integrand(f):
            dens = math.exp(-0.5 * ((f - m) / sigma) ** 2) / (
                sigma * math.sqrt(2 * math.pi)
            )
            return dens * gp_pmf(math.exp(f))

        truth, _ = quad(integrand, m - 8 * sigma, m + 8 * sigma)
        n = 20_000
        samples = make_gar_samples(n, [beta0, beta1], sigma, lam, [[f_t]])
        spec = ModelSpec("gar", "genpoisson", train_len=1, window=1)
        draw_forecasts(samples, spec, horizon=1, seed=11)
        score = heldout_loglik(samples, spec, [y], group_size=n)
        assert score.mean == pytest.approx(math.log(truth), abs=0.05)


class TestMae:
    def test_identical_vectors(self):
        assert mae([3, 4, 5], [3, 4, 5]) == 0.0

    def test_hand_arithmetic(self):
        assert mae([1, 2], [2, 4]) == pytest.approx(1.5)

    def test_permutation_of_paths_is_irrelevant(self):
        rng = np.random.default_rng(10)
        paths = rng.poisson(10.0, size=(200, 4)).astype(float)
        actual = rng.poisson(10.0, size=4)
        a = mae(paths.mean(axis=0), actual)
        b = mae(paths[rng.permutation(200)].mean(axis=0), actual)
        assert a == pytest.approx(b, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mae([1, 2], [1, 2, 3])


class TestNearestRank:
    def test_known_small_case(self):
        vals = np.array([[1.0], [2.0], [3.0], [4.0]])
        # ceil(0.025*4)=1 -> 1.0; ceil(0.5*4)=2 -> 2.0; ceil(0.975*4)=4 -> 4.0
        assert nearest_rank_percentile(vals, 2.5)[0] == 1.0
        assert nearest_rank_percentile(vals, 50.0)[0] == 2.0
        assert nearest_rank_percentile(vals, 97.5)[0] == 4.0
