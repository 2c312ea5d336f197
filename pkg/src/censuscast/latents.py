"""Latent-sequence priors: order-W autoregression and squared-exponential GP.

Both processes generate a real latent sequence f (one value per day) whose
exponential drives a count likelihood.  The autoregressive process ("gar")
regresses each value on up to W previous ones, truncating the window for
the first days; the GP ("ggp") draws the whole sequence jointly from a
constant-mean multivariate normal with squared-exponential covariance.

Day indices are integers 0..T-1; only their differences enter the kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .likelihoods import (
    TruncNormalPrior,
    half_normal,
    truncnormal_grad_logpdf,
    truncnormal_logpdf,
)

_LOG_2PI = math.log(2.0 * math.pi)

# A latent sequence is a plain 1-D float array indexed by day.
LatentSeq = np.ndarray

# Diagonal stabilizer for GP covariances, as a fraction of a**2.
DEFAULT_JITTER_SCALE = 1e-6


@dataclass
class GarParams:
    """Autoregression parameters: beta = [intercept, lag coefficients...]."""

    beta: np.ndarray
    sigma: float

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if self.beta.ndim != 1 or self.beta.size < 1:
            raise ValueError("beta must be a vector [beta0, beta1, ..., betaW]")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def window(self) -> int:
        return self.beta.size - 1


@dataclass
class GgpParams:
    """GP parameters: constant mean c, amplitude a, time-scale ell (days)."""

    c: float
    a: float
    ell: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if not self.ell > 0:
            raise ValueError(f"ell must be positive, got {self.ell}")


@dataclass(frozen=True)
class PriorConfig:
    """Priors for every latent-process and dispersion parameter.

    mu_ell is the time-scale prior mean, a grid-searched hyperparameter;
    at mu_ell = 0 the time-scale prior is a half-normal.
    """

    mu_ell: float = 0.0
    beta0: TruncNormalPrior = TruncNormalPrior(0.0, 0.1)
    beta_recent: TruncNormalPrior = TruncNormalPrior(1.0, 0.1)
    beta_other: TruncNormalPrior = TruncNormalPrior(0.0, 0.1)
    sigma: TruncNormalPrior = half_normal(0.1)
    c: TruncNormalPrior = TruncNormalPrior(4.0, 2.0, lower=0.0)
    a: TruncNormalPrior = half_normal(2.0)
    ell_stddev: float = 2.0
    lam: TruncNormalPrior = TruncNormalPrior(0.0, 0.3, -1.0, 1.0)

    def __post_init__(self):
        if self.mu_ell < 0:
            raise ValueError(f"mu_ell must be nonnegative, got {self.mu_ell}")

    def ell(self) -> TruncNormalPrior:
        return TruncNormalPrior(self.mu_ell, self.ell_stddev, lower=0.0)

    def beta(self, tau: int) -> TruncNormalPrior:
        if tau == 0:
            return self.beta0
        return self.beta_recent if tau == 1 else self.beta_other


def _gar_means(f: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Conditional means beta0 + sum_tau beta_tau f[t-tau], truncated early."""
    T = f.size
    mu = np.full(T, beta[0])
    for tau in range(1, min(beta.size - 1, T) + 1):
        mu[tau:] += beta[tau] * f[: T - tau]
    return mu


def gar_logdensity(f: LatentSeq, p: GarParams) -> float:
    """Log density of f under the order-W autoregression.

    Each day is normal around beta0 plus the regression on the
    min(t-1, W) available previous values; the first day has mean beta0.
    """
    f = np.asarray(f, dtype=float)
    mu = _gar_means(f, p.beta)
    z = (f - mu) / p.sigma
    return float(-0.5 * z @ z - f.size * (math.log(p.sigma) + 0.5 * _LOG_2PI))


def gar_grad_logdensity(
    f: LatentSeq, p: GarParams
) -> tuple[np.ndarray, np.ndarray, float]:
    """Gradients of gar_logdensity w.r.t. (f, beta, sigma)."""
    f = np.asarray(f, dtype=float)
    T = f.size
    w = p.beta.size - 1
    mu = _gar_means(f, p.beta)
    resid = f - mu
    r = resid / p.sigma**2

    d_f = -r.copy()
    for tau in range(1, min(w, T) + 1):
        d_f[: T - tau] += p.beta[tau] * r[tau:]

    d_beta = np.zeros(w + 1)
    d_beta[0] = r.sum()
    for tau in range(1, min(w, T) + 1):
        d_beta[tau] = r[tau:] @ f[: T - tau]

    d_sigma = float(resid @ resid) / p.sigma**3 - T / p.sigma
    return d_f, d_beta, d_sigma


def gar_forecast_step(history: LatentSeq, p: GarParams, noise: float) -> float:
    """One-step-ahead draw: regression mean on the trailing window + sigma*noise.

    Histories shorter than W use the truncated window, mirroring the
    early-timestep rule of the training density.
    """
    history = np.asarray(history, dtype=float)
    if history.size == 0:
        raise ValueError("history must be nonempty")
    w_eff = min(history.size, p.beta.size - 1)
    mean = p.beta[0]
    for tau in range(1, w_eff + 1):
        mean += p.beta[tau] * history[-tau]
    return float(mean + p.sigma * noise)


def se_kernel_matrix(times1, times2, p: GgpParams) -> np.ndarray:
    """Squared-exponential kernel a^2 exp(-(t - t')^2 / (2 ell^2))."""
    t1 = np.asarray(times1, dtype=float).reshape(-1, 1)
    t2 = np.asarray(times2, dtype=float).reshape(1, -1)
    d2 = (t1 - t2) ** 2
    return p.a**2 * np.exp(-d2 / (2.0 * p.ell**2))


def _chol(K: np.ndarray, context: str):
    try:
        return cho_factor(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"{context}: covariance not positive definite after jitter "
            f"(size {K.shape[0]}, diag min {K.diagonal().min():.3g})"
        ) from exc


def ggp_logdensity(f: LatentSeq, p: GgpParams, jitter: float | None = None) -> float:
    """Multivariate normal log density of f with mean c and SE covariance.

    jitter defaults to 1e-6 * a^2 and is added to the diagonal before the
    Cholesky factorization.
    """
    f = np.asarray(f, dtype=float)
    T = f.size
    if jitter is None:
        jitter = DEFAULT_JITTER_SCALE * p.a**2
    times = np.arange(T)
    K = se_kernel_matrix(times, times, p) + jitter * np.eye(T)
    factor = _chol(K, "ggp_logdensity")
    r = f - p.c
    alpha = cho_solve(factor, r)
    logdet = 2.0 * np.sum(np.log(np.diagonal(factor[0])))
    return float(-0.5 * (r @ alpha) - 0.5 * logdet - 0.5 * T * _LOG_2PI)


def ggp_grad_logdensity(
    f: LatentSeq, p: GgpParams, jitter: float | None = None
) -> tuple[np.ndarray, float, float, float]:
    """Gradients of ggp_logdensity w.r.t. (f, c, a, ell).

    With the default jitter (1e-6 * a^2) the a-gradient accounts for the
    jitter's dependence on a; an explicit jitter is treated as constant.
    """
    f = np.asarray(f, dtype=float)
    T = f.size
    jitter_tracks_a = jitter is None
    if jitter is None:
        jitter = DEFAULT_JITTER_SCALE * p.a**2
    times = np.arange(T)
    K0 = se_kernel_matrix(times, times, p)
    K = K0 + jitter * np.eye(T)
    factor = _chol(K, "ggp_grad_logdensity")
    r = f - p.c
    alpha = cho_solve(factor, r)
    K_inv = cho_solve(factor, np.eye(T))
    A = np.outer(alpha, alpha) - K_inv

    d_f = -alpha
    d_c = float(alpha.sum())
    dK_da = (2.0 / p.a) * (K if jitter_tracks_a else K0)
    d_a = 0.5 * float(np.sum(A * dK_da))
    d2 = (times.reshape(-1, 1) - times.reshape(1, -1)) ** 2
    dK_dell = K0 * d2 / p.ell**3
    d_ell = 0.5 * float(np.sum(A * dK_dell))
    return d_f, d_c, d_a, d_ell


def ggp_conditional(
    past_f: LatentSeq,
    past_times,
    future_times,
    p: GgpParams,
    jitter: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """GP predictive (mean, covariance) at future_times given past values.

    The returned covariance carries the jitter on its diagonal so it can
    be sampled directly.  Empty future times give empty outputs; empty
    past times give the prior mean and covariance.
    """
    past_f = np.asarray(past_f, dtype=float)
    past_times = np.asarray(past_times, dtype=float)
    future_times = np.asarray(future_times, dtype=float)
    if jitter is None:
        jitter = DEFAULT_JITTER_SCALE * p.a**2

    n_future = future_times.size
    if n_future == 0:
        return np.empty(0), np.empty((0, 0))
    K_ff = se_kernel_matrix(future_times, future_times, p)
    if past_times.size == 0:
        return np.full(n_future, p.c), K_ff + jitter * np.eye(n_future)

    K_pp = se_kernel_matrix(past_times, past_times, p) + jitter * np.eye(
        past_times.size
    )
    K_pf = se_kernel_matrix(past_times, future_times, p)
    factor = _chol(K_pp, "ggp_conditional")
    solved = cho_solve(factor, K_pf)
    mean = p.c + solved.T @ (past_f - p.c)
    cov = K_ff - K_pf.T @ solved + jitter * np.eye(n_future)
    return mean, cov


def prior_logdensity(params, cfg: PriorConfig) -> float:
    """Sum of log prior densities for a parameter set.

    Accepts GarParams, GgpParams, or dispersion value(s) (a float or a
    sequence of per-site lambdas).  Out-of-support values give -inf.
    """
    if isinstance(params, GarParams):
        total = sum(
            truncnormal_logpdf(params.beta[tau], cfg.beta(tau))
            for tau in range(params.beta.size)
        )
        return total + truncnormal_logpdf(params.sigma, cfg.sigma)
    if isinstance(params, GgpParams):
        return (
            truncnormal_logpdf(params.c, cfg.c)
            + truncnormal_logpdf(params.a, cfg.a)
            + truncnormal_logpdf(params.ell, cfg.ell())
        )
    lams = np.atleast_1d(np.asarray(params, dtype=float))
    return sum(truncnormal_logpdf(float(lam), cfg.lam) for lam in lams)


def prior_grad(params, cfg: PriorConfig):
    """Gradients of prior_logdensity, shaped like the input parameter set."""
    if isinstance(params, GarParams):
        d_beta = np.array(
            [
                truncnormal_grad_logpdf(params.beta[tau], cfg.beta(tau))
                for tau in range(params.beta.size)
            ]
        )
        return d_beta, truncnormal_grad_logpdf(params.sigma, cfg.sigma)
    if isinstance(params, GgpParams):
        return (
            truncnormal_grad_logpdf(params.c, cfg.c),
            truncnormal_grad_logpdf(params.a, cfg.a),
            truncnormal_grad_logpdf(params.ell, cfg.ell()),
        )
    lams = np.atleast_1d(np.asarray(params, dtype=float))
    return np.array([truncnormal_grad_logpdf(float(lam), cfg.lam) for lam in lams])
