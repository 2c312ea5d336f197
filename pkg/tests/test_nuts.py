import math

import numpy as np
import pytest

from censuscast.diagnostics import ess
from censuscast.nuts import (
    ChainResult,
    SamplerConfig,
    _leapfrog,
    _run_chain,
    nuts_sample,
)


def std_normal_1d(theta):
    return float(-0.5 * theta @ theta), -theta


def make_gaussian_target(cov):
    prec = np.linalg.inv(cov)

    def fn(theta):
        g = -prec @ theta
        return float(0.5 * theta @ g), g

    return fn


class TestLeapfrog:
    def test_reversible_to_start_point(self):
        fn = make_gaussian_target(np.array([[1.0, 0.7], [0.7, 2.0]]))
        rng = np.random.default_rng(0)
        theta = rng.normal(size=2)
        r = rng.normal(size=2)
        inv_mass = np.array([1.0, 0.5])
        eps = 0.2
        _, grad = fn(theta)
        th, rr, gg = theta.copy(), r.copy(), grad.copy()
        for _ in range(25):
            th, rr, _, gg = _leapfrog(fn, th, rr, gg, eps, inv_mass)
        rr = -rr
        for _ in range(25):
            th, rr, _, gg = _leapfrog(fn, th, rr, gg, eps, inv_mass)
        assert np.allclose(th, theta, atol=1e-10)
        assert np.allclose(-rr, r, atol=1e-10)

    def test_no_energy_drift_below_stability_threshold(self):
        cov = np.array([[1.0, 0.0], [0.0, 0.04]])
        fn = make_gaussian_target(cov)
        inv_mass = np.ones(2)
        # stability limit is eps < 2*sqrt(min eigenvalue) = 0.4 here
        eps = 0.1
        rng = np.random.default_rng(1)
        theta = rng.normal(size=2) * np.sqrt(np.diag(cov))
        r = rng.normal(size=2)
        logp, grad = fn(theta)
        h0 = logp - 0.5 * r @ r
        max_err = 0.0
        for _ in range(200):
            theta, r, logp, grad = _leapfrog(fn, theta, r, grad, eps, inv_mass)
            max_err = max(max_err, abs((logp - 0.5 * r @ r) - h0))
        assert max_err < 0.1


class TestNutsGaussian:
    def test_standard_normal_moments(self):
        cfg = SamplerConfig(n_chains=2, n_warmup=500, n_draws=5000, seed=42)
        chains = nuts_sample(std_normal_1d, 1, cfg)
        pooled = np.vstack([c.draws[:, 0] for c in chains])
        n_eff = ess(pooled)
        se = math.sqrt(1.0 / n_eff)
        assert abs(pooled.mean()) < 3 * se
        assert abs(pooled.var() - 1.0) < 0.1

    def test_correlated_gaussian(self):
        cov = np.array([[1.0, 0.9], [0.9, 1.0]])
        fn = make_gaussian_target(cov)
        cfg = SamplerConfig(n_chains=2, n_warmup=500, n_draws=4000, seed=7)
        chains = nuts_sample(fn, 2, cfg)
        draws = np.vstack([c.draws for c in chains])
        corr = np.corrcoef(draws.T)[0, 1]
        assert abs(corr - 0.9) < 0.05

    def test_hard_support_bound_rejected(self):
        def positive_half(theta):
            if theta[0] <= 0.0:
                return -math.inf, np.zeros(1)
            return float(-0.5 * theta @ theta), -theta

        cfg = SamplerConfig(n_chains=2, n_warmup=300, n_draws=1500, seed=3)
        chains = nuts_sample(positive_half, 1, cfg, initial=np.array([1.0]))
        for c in chains:
            assert np.all(c.draws > 0.0)

    def test_no_divergences_on_smooth_target(self):
        cfg = SamplerConfig(n_chains=2, n_warmup=400, n_draws=2000, seed=5)
        for c in nuts_sample(std_normal_1d, 1, cfg):
            assert c.divergences == 0
            assert not c.divergence_warning


class TestReproducibility:
    def test_identical_seed_identical_draws(self):
        cfg = SamplerConfig(n_chains=2, n_warmup=200, n_draws=300, seed=123)
        a = nuts_sample(std_normal_1d, 1, cfg)
        b = nuts_sample(std_normal_1d, 1, cfg)
        for ca, cb in zip(a, b):
            assert np.array_equal(ca.draws, cb.draws)
            assert ca.step_size == cb.step_size

    def test_chains_are_exchangeable_by_index(self):
        cfg = SamplerConfig(n_chains=2, n_warmup=200, n_draws=300, seed=9)
        pair = nuts_sample(std_normal_1d, 1, cfg)
        solo = _run_chain(std_normal_1d, 1, cfg, np.zeros(1), 1)
        assert np.array_equal(pair[1].draws, solo.draws)

    def test_different_seeds_differ(self):
        cfg_a = SamplerConfig(n_chains=1, n_warmup=200, n_draws=300, seed=1)
        cfg_b = SamplerConfig(n_chains=1, n_warmup=200, n_draws=300, seed=2)
        a = nuts_sample(std_normal_1d, 1, cfg_a)[0]
        b = nuts_sample(std_normal_1d, 1, cfg_b)[0]
        assert not np.array_equal(a.draws, b.draws)


class TestValidation:
    def test_nonfinite_initial_point_raises(self):
        def fn(theta):
            return -math.inf, np.zeros(1)

        cfg = SamplerConfig(n_chains=1, n_warmup=10, n_draws=10, seed=0)
        with pytest.raises(ValueError):
            nuts_sample(fn, 1, cfg)

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            SamplerConfig(target_accept=1.5)
        with pytest.raises(ValueError):
            SamplerConfig(n_chains=0)

    def test_result_fields(self):
        cfg = SamplerConfig(n_chains=1, n_warmup=150, n_draws=50, seed=0)
        res = nuts_sample(std_normal_1d, 1, cfg)[0]
        assert isinstance(res, ChainResult)
        assert res.draws.shape == (50, 1)
        assert res.accept_prob.shape == (50,)
        assert res.step_size > 0
        assert res.inv_mass_diag.shape == (1,)
