"""Convergence diagnostics: split-chain R-hat and autocorrelation-based ESS."""

from __future__ import annotations

import warnings

import numpy as np


class DegenerateChainWarning(RuntimeWarning):
    """Chains carry no variance; the diagnostic value is a convention."""


def _as_chain_matrix(chains) -> np.ndarray:
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected draws shaped (n_chains, n_draws)")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    n = x.shape[1] // 2
    return np.vstack([x[:, :n], x[:, n : 2 * n]])


def rhat(chains) -> float:
    """Split-chain potential scale reduction factor for one parameter.

    Needs at least 2 chains of at least 4 draws.  Chains with zero
    variance are reported as 1.0 with a DegenerateChainWarning.
    """
    x = _as_chain_matrix(chains)
    if x.shape[0] < 2 or x.shape[1] < 4:
        raise ValueError("rhat needs >= 2 chains with >= 4 draws each")
    x = _split(x)
    n = x.shape[1]
    if np.all(np.ptp(x, axis=1) == 0.0):
        warnings.warn("zero within-chain variance", DegenerateChainWarning)
        return 1.0
    within = x.var(axis=1, ddof=1).mean()
    between_over_n = x.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * within + between_over_n
    return float(np.sqrt(var_plus / within))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Per-chain autocovariance (biased, lag-normalized by n) via FFT."""
    n = x.shape[1]
    xc = x - x.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n]
    return acov.real / n


def ess(chains) -> float:
    """Effective sample size via the initial monotone positive sequence.

    Combines chains with the pooled-variance autocorrelation estimate,
    sums Geyer lag pairs while positive, and enforces monotonicity.
    Zero-variance chains give 0.0 with a DegenerateChainWarning.
    """
    x = _as_chain_matrix(chains)
    m, n = x.shape
    if n < 4:
        raise ValueError("ess needs >= 4 draws per chain")
    if np.all(np.ptp(x, axis=1) == 0.0):
        warnings.warn("zero within-chain variance", DegenerateChainWarning)
        return 0.0
    acov = _autocov(x)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)

    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # Geyer pairs: accumulate while positive, then force non-increasing
    pair_sums = []
    t = 0
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s <= 0.0:
            break
        pair_sums.append(s)
        t += 2
    running_min = np.inf
    tau = -1.0
    for s in pair_sums:
        running_min = min(running_min, s)
        tau += 2.0 * running_min
    tau = max(tau, 1e-12)
    return float(m * n / tau)


def rhat_max_ess_min(draws_per_chain: list[np.ndarray]) -> tuple[float, float]:
    """Worst-case R-hat and ESS across every parameter column."""
    stacked = np.stack(draws_per_chain)  # (M, N, dim)
    worst_rhat = -np.inf
    worst_ess = np.inf
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateChainWarning)
        for j in range(stacked.shape[2]):
            worst_rhat = max(worst_rhat, rhat(stacked[:, :, j]))
            worst_ess = min(worst_ess, ess(stacked[:, :, j]))
    return float(worst_rhat), float(worst_ess)
