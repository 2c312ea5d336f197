"""Forecast sampling from posterior draws and the heldout scoring metrics.

For each posterior sample the latent sequence is extended over the
forecast horizon (autoregressive recursion, or a joint draw from the GP
predictive conditional), then counts are drawn through the likelihood's
inversion sampler with rate component exp(f).  Latent forecast paths are
drawn once per posterior sample and reused by both the path summaries
and the heldout log-likelihood estimator.

Percentile summaries use nearest-rank empirical quantiles: the q-th
percentile of n sorted values is the value at rank ceil(q*n/100).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .latents import GarParams, GgpParams, ggp_conditional
from .likelihoods import _genpoisson_logpmf_arr, genpoisson_sample_many
from .model import GENPOISSON, ModelSpec, PosteriorSample

DEFAULT_GROUP_SIZE = 500


@dataclass
class ForecastResult:
    """Sampled future count paths for one site, with per-day summaries."""

    paths: np.ndarray  # (S, F) sampled counts
    latent_paths: np.ndarray  # (S, F) sampled latents
    mean: np.ndarray  # (F,)
    p2_5: np.ndarray
    p50: np.ndarray
    p97_5: np.ndarray


@dataclass
class HeldoutScore:
    """Per-group normalized heldout log likelihood, with mean and SEM."""

    group_values: np.ndarray
    mean: float
    sem: float
    group_size: int
    n_groups: int
    degenerate: bool = False  # some group had zero likelihood for every draw


def nearest_rank_percentile(values: np.ndarray, q: float) -> np.ndarray:
    """q-th percentile per column by the nearest-rank rule."""
    ordered = np.sort(values, axis=0)
    n = values.shape[0]
    rank = max(1, math.ceil(q / 100.0 * n))
    return ordered[rank - 1]


def _summaries(paths: np.ndarray):
    return (
        paths.mean(axis=0),
        nearest_rank_percentile(paths, 2.5),
        nearest_rank_percentile(paths, 50.0),
        nearest_rank_percentile(paths, 97.5),
    )


def _gar_latent_paths(samples, site, horizon, rng) -> np.ndarray:
    n = len(samples)
    betas = np.stack([s.latent_params.beta for s in samples])  # (S, W+1)
    sigmas = np.array([s.latent_params.sigma for s in samples])
    hist = np.stack([s.latents[site] for s in samples])  # (S, T)
    w = betas.shape[1] - 1
    paths = np.empty((n, horizon))
    for step in range(horizon):
        mean = betas[:, 0].copy()
        avail = min(w, hist.shape[1])
        for tau in range(1, avail + 1):
            mean += betas[:, tau] * hist[:, -tau]
        f_new = mean + sigmas * rng.standard_normal(n)
        paths[:, step] = f_new
        hist = np.column_stack([hist, f_new])
    return paths


def _ggp_latent_paths(samples, site, horizon, rng) -> np.ndarray:
    n = len(samples)
    t_past = np.arange(samples[0].latents.shape[1])
    t_future = np.arange(t_past.size, t_past.size + horizon)
    paths = np.empty((n, horizon))
    noise = rng.standard_normal((n, horizon))
    for i, s in enumerate(samples):
        mean, cov = ggp_conditional(s.latents[site], t_past, t_future, s.latent_params)
        chol = np.linalg.cholesky(cov)
        paths[i] = mean + chol @ noise[i]
    return paths


def draw_forecasts(
    samples: list[PosteriorSample], spec: ModelSpec, horizon: int, seed: int
) -> list[ForecastResult]:
    """Sample count forecast paths per site from each posterior draw.

    Also attaches the latent forecast paths to each sample
    (``forecast_latents``) for reuse by heldout_loglik.  Deterministic
    given the seed.
    """
    if not samples:
        raise ValueError("samples must be nonempty")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    n = len(samples)
    for s in samples:
        s.forecast_latents = np.empty((spec.n_sites, horizon))

    results = []
    for site in range(spec.n_sites):
        if spec.latent == "gar":
            latent_paths = _gar_latent_paths(samples, site, horizon, rng)
        else:
            latent_paths = _ggp_latent_paths(samples, site, horizon, rng)
        for i, s in enumerate(samples):
            s.forecast_latents[site] = latent_paths[i]

        theta = np.exp(latent_paths)
        if spec.likelihood == GENPOISSON:
            lam = np.array([s.lams[site] for s in samples])[:, None]
        else:
            lam = np.zeros((n, 1))
        counts = genpoisson_sample_many(theta, lam, rng.random((n, horizon)))
        mean, p2_5, p50, p97_5 = _summaries(counts)
        results.append(
            ForecastResult(
                paths=counts,
                latent_paths=latent_paths,
                mean=mean,
                p2_5=p2_5,
                p50=p50,
                p97_5=p97_5,
            )
        )
    return results


def _group_slices(n_draws: int, group_size: int):
    if n_draws < group_size:
        return [slice(0, n_draws)]
    n_groups = n_draws // group_size
    return [slice(g * group_size, (g + 1) * group_size) for g in range(n_groups)]


def heldout_loglik(
    samples: list[PosteriorSample],
    spec: ModelSpec,
    y_future,
    site: int = 0,
    group_size: int = DEFAULT_GROUP_SIZE,
) -> HeldoutScore:
    """Monte Carlo normalized heldout log likelihood for one site.

    Every sample must already carry forecast latents (see
    draw_forecasts; counts are not resampled).  Draws are split into
    consecutive groups of ``group_size`` (a single group if there are
    fewer draws; any remainder is dropped), and each group g yields
    (1/F) log[(1/|g|) sum_s prod_tau pmf(y_tau | exp(f_s_tau), lam_s)],
    computed by log-sum-exp over the summed per-day log PMFs.
    """
    y_future = np.asarray(y_future, dtype=float)
    horizon = y_future.size
    if any(s.forecast_latents is None for s in samples):
        raise ValueError("samples carry no forecast latents; run draw_forecasts")
    latents = np.stack([s.forecast_latents[site] for s in samples])  # (S, F)
    if latents.shape[1] != horizon:
        raise ValueError(
            f"forecast latents cover {latents.shape[1]} days, "
            f"but y_future has {horizon}"
        )
    theta = np.exp(latents)
    if spec.likelihood == GENPOISSON:
        lam = np.array([s.lams[site] for s in samples])[:, None]
    else:
        lam = np.zeros((len(samples), 1))
    logpmf = _genpoisson_logpmf_arr(y_future[None, :], theta, lam)
    per_draw = logpmf.sum(axis=1)  # log prod over days, per draw

    slices = _group_slices(per_draw.size, group_size)
    values = np.empty(len(slices))
    degenerate = False
    for g, sl in enumerate(slices):
        block = per_draw[sl]
        if np.all(np.isneginf(block)):
            values[g] = -math.inf
            degenerate = True
        else:
            values[g] = (logsumexp(block) - math.log(block.size)) / horizon
    mean = float(values.mean()) if not degenerate else -math.inf
    sem = (
        float(values.std(ddof=1) / math.sqrt(len(values)))
        if len(values) > 1 and not degenerate
        else 0.0
    )
    return HeldoutScore(
        group_values=values,
        mean=mean,
        sem=sem,
        group_size=slices[0].stop - slices[0].start,
        n_groups=len(slices),
        degenerate=degenerate,
    )


def mae(point_forecast, actual) -> float:
    """Mean absolute error between a point forecast and realized values."""
    point_forecast = np.asarray(point_forecast, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if point_forecast.shape != actual.shape:
        raise ValueError(
            f"length mismatch: {point_forecast.shape} vs {actual.shape}"
        )
    return float(np.mean(np.abs(point_forecast - actual)))
