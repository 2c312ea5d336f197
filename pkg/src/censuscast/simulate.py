"""Synthetic count series drawn from the generative models.

Used by the `simulate` CLI subcommand and by the recovery tests: latents
follow the autoregressive or GP prior exactly (including the truncated
early windows of the autoregression), and counts come from the
likelihood's inversion sampler at theta = exp(f).
"""

from __future__ import annotations

import datetime

import numpy as np

from .data import CountSeries
from .latents import GarParams, GgpParams, se_kernel_matrix
from .likelihoods import genpoisson_sample_many

DEFAULT_START_DATE = datetime.date(2020, 4, 29)


def simulate_gar_counts(
    params: GarParams, lam, n_days: int, n_sites: int = 1, seed: int = 0
):
    """Draw (latents, counts), each (n_sites, n_days), from the AR model.

    Sites share the latent-process parameters but draw independent
    latent sequences; lam may be a scalar (shared dispersion) or one
    value per site.  lam=0 reproduces the plain Poisson.
    """
    rng = np.random.default_rng(seed)
    w = params.window
    lams = np.broadcast_to(np.asarray(lam, dtype=float), (n_sites,))
    f = np.empty((n_sites, n_days))
    for h in range(n_sites):
        for t in range(n_days):
            mean = params.beta[0]
            for tau in range(1, min(t, w) + 1):
                mean += params.beta[tau] * f[h, t - tau]
            f[h, t] = mean + params.sigma * rng.standard_normal()
    counts = genpoisson_sample_many(
        np.exp(f), lams[:, None], rng.random((n_sites, n_days))
    )
    return f, counts


def simulate_ggp_counts(params: GgpParams, lam, n_days: int, seed: int = 0):
    """Draw (latents, counts), each (1, n_days), from the GP model."""
    rng = np.random.default_rng(seed)
    times = np.arange(n_days)
    K = se_kernel_matrix(times, times, params) + 1e-6 * params.a**2 * np.eye(n_days)
    f = params.c + np.linalg.cholesky(K) @ rng.standard_normal(n_days)
    f = f[None, :]
    counts = genpoisson_sample_many(np.exp(f), float(lam), rng.random((1, n_days)))
    return f, counts


def to_count_series(
    counts: np.ndarray,
    start_date: datetime.date = DEFAULT_START_DATE,
    site_names: list[str] | None = None,
) -> list[CountSeries]:
    """Wrap a (n_sites, T) count matrix as dated CountSeries."""
    counts = np.atleast_2d(counts)
    n_sites, n_days = counts.shape
    dates = [start_date + datetime.timedelta(days=t) for t in range(n_days)]
    if site_names is None:
        site_names = (
            [None] if n_sites == 1 else [f"site{h}" for h in range(n_sites)]
        )
    return [
        CountSeries(dates=list(dates), counts=counts[h], site=site_names[h])
        for h in range(n_sites)
    ]
