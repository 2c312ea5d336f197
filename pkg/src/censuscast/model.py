"""Joint posterior density over an unconstrained parameter vector.

Assembles prior, latent-process, and count-likelihood terms for the
single-site and multi-site models into one log density (with transform
Jacobians) and its gradient, both in unconstrained coordinates suitable
for gradient-based MCMC.

Packing layout: the shared latent-process block alpha first
(gar: beta[0..W], log sigma; ggp: c, log a, log ell), then one block per
site holding z_lam (generalized Poisson only; lam = tanh(z/2)) followed
by the site's T latent values.  Counts enter the likelihood with rate
component theta_t = exp(f_t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import gammaln

from .latents import (
    DEFAULT_JITTER_SCALE,
    GarParams,
    GgpParams,
    PriorConfig,
    _gar_means,
    se_kernel_matrix,
)
from .likelihoods import TruncNormalPrior, truncnormal_mean, _truncnorm_mass

_LOG_2PI = math.log(2.0 * math.pi)
_LOG_2 = math.log(2.0)

GAR = "gar"
GGP = "ggp"
POISSON = "poisson"
GENPOISSON = "genpoisson"


@dataclass(frozen=True)
class ModelSpec:
    """What to fit: latent process, count likelihood, sites, length, priors."""

    latent: str
    likelihood: str
    train_len: int
    n_sites: int = 1
    window: int = 1
    priors: PriorConfig = field(default_factory=PriorConfig)

    def __post_init__(self):
        if self.latent not in (GAR, GGP):
            raise ValueError(f"unknown latent kind {self.latent!r}")
        if self.likelihood not in (POISSON, GENPOISSON):
            raise ValueError(f"unknown likelihood kind {self.likelihood!r}")
        if self.train_len < 1:
            raise ValueError("train_len must be >= 1")
        if self.n_sites < 1:
            raise ValueError("n_sites must be >= 1")
        if self.n_sites > 1 and self.latent != GAR:
            raise ValueError("multi-site models support only the gar latent")
        if self.latent == GAR and self.window < 1:
            raise ValueError("window must be >= 1")

    @property
    def alpha_dim(self) -> int:
        return self.window + 2 if self.latent == GAR else 3

    @property
    def site_dim(self) -> int:
        return self.train_len + (1 if self.likelihood == GENPOISSON else 0)

    @property
    def dim(self) -> int:
        return self.alpha_dim + self.n_sites * self.site_dim

    def param_names(self) -> list[str]:
        """Column names matching the packing layout, constrained scale."""
        if self.latent == GAR:
            names = [f"beta{j}" for j in range(self.window + 1)] + ["sigma"]
        else:
            names = ["c", "a", "ell"]
        for h in range(self.n_sites):
            if self.likelihood == GENPOISSON:
                names.append(f"lam[{h}]")
            names.extend(f"f[{h},{t}]" for t in range(self.train_len))
        return names


@dataclass
class ModelParams:
    """Constrained parameters: shared latent-process block + per-site values."""

    latent_params: GarParams | GgpParams
    lams: np.ndarray | None  # per-site dispersion, None for the Poisson
    latents: np.ndarray  # (n_sites, T)


@dataclass
class PosteriorSample:
    """One joint posterior draw, with forecast latents attached later."""

    latent_params: GarParams | GgpParams
    lams: np.ndarray | None
    latents: np.ndarray  # (n_sites, T)
    chain: int
    draw: int
    forecast_latents: np.ndarray | None = None  # (n_sites, F)


def pack(spec: ModelSpec, params: ModelParams) -> np.ndarray:
    """ModelParams -> unconstrained vector (inverse of unpack)."""
    v = np.empty(spec.dim)
    lp = params.latent_params
    if spec.latent == GAR:
        if not isinstance(lp, GarParams) or lp.window != spec.window:
            raise ValueError("latent_params do not match the model spec")
        v[: spec.window + 1] = lp.beta
        v[spec.window + 1] = math.log(lp.sigma)
    else:
        if not isinstance(lp, GgpParams):
            raise ValueError("latent_params do not match the model spec")
        v[0] = lp.c
        v[1] = math.log(lp.a)
        v[2] = math.log(lp.ell)
    if params.latents.shape != (spec.n_sites, spec.train_len):
        raise ValueError(
            f"latents shape {params.latents.shape} does not match "
            f"({spec.n_sites}, {spec.train_len})"
        )
    off = spec.alpha_dim
    for h in range(spec.n_sites):
        if spec.likelihood == GENPOISSON:
            v[off] = 2.0 * math.atanh(params.lams[h])
            off += 1
        v[off : off + spec.train_len] = params.latents[h]
        off += spec.train_len
    return v


def unpack(spec: ModelSpec, v: np.ndarray) -> ModelParams:
    """Unconstrained vector -> ModelParams (inverse of pack)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (spec.dim,):
        raise ValueError(f"expected vector of length {spec.dim}, got {v.shape}")
    if spec.latent == GAR:
        lp = GarParams(
            beta=v[: spec.window + 1].copy(),
            sigma=math.exp(v[spec.window + 1]),
        )
    else:
        lp = GgpParams(c=v[0], a=math.exp(v[1]), ell=math.exp(v[2]))
    lams = np.empty(spec.n_sites) if spec.likelihood == GENPOISSON else None
    latents = np.empty((spec.n_sites, spec.train_len))
    off = spec.alpha_dim
    for h in range(spec.n_sites):
        if lams is not None:
            lams[h] = math.tanh(v[off] / 2.0)
            off += 1
        latents[h] = v[off : off + spec.train_len]
        off += spec.train_len
    return ModelParams(latent_params=lp, lams=lams, latents=latents)


def _log_cosh(x: float) -> float:
    ax = abs(x)
    return ax + math.log1p(math.exp(-2.0 * ax)) - _LOG_2


class _FastPrior:
    """Truncated-normal prior with the normalization constant precomputed."""

    __slots__ = ("mean", "stddev", "lower", "upper", "log_mass", "inv_var")

    def __init__(self, prior: TruncNormalPrior):
        self.mean = prior.mean
        self.stddev = prior.stddev
        self.lower = prior.lower
        self.upper = prior.upper
        self.log_mass = math.log(_truncnorm_mass(prior))
        self.inv_var = 1.0 / prior.stddev**2

    def logpdf(self, x: float) -> float:
        if x < self.lower or x > self.upper:
            return -math.inf
        z = (x - self.mean) / self.stddev
        return -0.5 * z * z - math.log(self.stddev) - 0.5 * _LOG_2PI - self.log_mass

    def grad(self, x: float) -> float:
        return -(x - self.mean) * self.inv_var


class AssembledModel:
    """Posterior log density and gradient for one ModelSpec and dataset.

    Evaluation is pure: instances may be shared across threads running
    independent sampler chains.
    """

    def __init__(self, spec: ModelSpec, data):
        self.spec = spec
        y = np.atleast_2d(np.asarray(data, dtype=float))
        if y.shape != (spec.n_sites, spec.train_len):
            raise ValueError(
                f"data shape {y.shape} does not match "
                f"({spec.n_sites}, {spec.train_len})"
            )
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("counts must be nonnegative integers")
        self.y = y
        self._ym1 = y - 1.0
        self._y_pair = y * (y - 1.0)
        self._y_sums = y.sum(axis=1)
        self._lgamma_const = float(gammaln(y + 1.0).sum())
        cfg = spec.priors
        if spec.latent == GAR:
            self._beta_priors = [_FastPrior(cfg.beta(t)) for t in range(spec.window + 1)]
            self._sigma_prior = _FastPrior(cfg.sigma)
        else:
            self._c_prior = _FastPrior(cfg.c)
            self._a_prior = _FastPrior(cfg.a)
            self._ell_prior = _FastPrior(cfg.ell())
            self._times = np.arange(spec.train_len, dtype=float)
            self._d2 = (self._times[:, None] - self._times[None, :]) ** 2
        self._lam_prior = _FastPrior(cfg.lam)

    @property
    def dim(self) -> int:
        return self.spec.dim

    def initial_point(self) -> np.ndarray:
        """Latents at log(y + 1), parameters at their prior means."""
        spec = self.spec
        cfg = spec.priors
        v = np.empty(spec.dim)
        if spec.latent == GAR:
            for t in range(spec.window + 1):
                v[t] = truncnormal_mean(cfg.beta(t))
            v[spec.window + 1] = math.log(truncnormal_mean(cfg.sigma))
        else:
            v[0] = truncnormal_mean(cfg.c)
            v[1] = math.log(truncnormal_mean(cfg.a))
            v[2] = math.log(truncnormal_mean(cfg.ell()))
        off = spec.alpha_dim
        for h in range(spec.n_sites):
            if spec.likelihood == GENPOISSON:
                v[off] = 2.0 * math.atanh(truncnormal_mean(cfg.lam))
                off += 1
            v[off : off + spec.train_len] = np.log(self.y[h] + 1.0)
            off += spec.train_len
        return v

    def logp(self, v: np.ndarray) -> float:
        return self.logp_and_grad(v)[0]

    def logp_and_grad(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        """Log joint density and its gradient in unconstrained coordinates.

        Returns (-inf, zeros) wherever the density has no support (e.g.
        negative GP mean c, or a zero-mass count under lam < 0).
        """
        spec = self.spec
        T = spec.train_len
        v = np.asarray(v, dtype=float)
        grad = np.zeros(spec.dim)
        total = 0.0
        neg_inf = (-math.inf, np.zeros(spec.dim))

        if spec.latent == GAR:
            w = spec.window
            beta = v[: w + 1]
            log_sigma = v[w + 1]
            if not -300.0 < log_sigma < 300.0:
                return neg_inf
            sigma = math.exp(log_sigma)
            for t in range(w + 1):
                total += self._beta_priors[t].logpdf(beta[t])
                grad[t] += self._beta_priors[t].grad(beta[t])
            total += self._sigma_prior.logpdf(sigma) + log_sigma
            d_sigma = self._sigma_prior.grad(sigma)
        else:
            c, log_a, log_ell = v[0], v[1], v[2]
            if not (-300.0 < log_a < 300.0 and -300.0 < log_ell < 300.0):
                return neg_inf
            a = math.exp(log_a)
            ell = math.exp(log_ell)
            if c < self._c_prior.lower:
                return neg_inf
            total += (
                self._c_prior.logpdf(c)
                + self._a_prior.logpdf(a)
                + self._ell_prior.logpdf(ell)
                + log_a
                + log_ell
            )
            d_c = self._c_prior.grad(c)
            d_a = self._a_prior.grad(a)
            d_ell = self._ell_prior.grad(ell)
            gp = GgpParams(c=c, a=a, ell=ell)
            jitter = DEFAULT_JITTER_SCALE * a * a
            K = se_kernel_matrix(self._times, self._times, gp) + jitter * np.eye(T)
            try:
                chol = np.linalg.cholesky(K)
            except np.linalg.LinAlgError:
                return neg_inf
            factor = (chol, True)
            K_inv = cho_solve(factor, np.eye(T))
            logdet = 2.0 * float(np.log(np.diagonal(chol)).sum())
            K0 = K - jitter * np.eye(T)

        off = spec.alpha_dim
        for h in range(spec.n_sites):
            if spec.likelihood == GENPOISSON:
                z_lam = v[off]
                lam = math.tanh(z_lam / 2.0)
                total += self._lam_prior.logpdf(lam)
                total += -2.0 * _log_cosh(z_lam / 2.0) - _LOG_2  # log|dlam/dz|
                d_lam = self._lam_prior.grad(lam)
                lam_idx = off
                off += 1
            else:
                lam = 0.0
                d_lam = 0.0
                lam_idx = -1
            f = v[off : off + T]
            y = self.y[h]

            # count likelihood with theta_t = exp(f_t)
            if f.max() > 300.0 or not math.isfinite(f.sum()):
                return neg_inf
            theta = np.exp(f)
            if spec.likelihood == GENPOISSON:
                zz = theta + lam * y
                if zz.min() <= 0.0:
                    return neg_inf
                inv_zz = 1.0 / zz
                total += float(f.sum() + self._ym1[h] @ np.log(zz) - zz.sum())
                d_f_lik = 1.0 + theta * (self._ym1[h] * inv_zz - 1.0)
                d_lam += float(self._y_pair[h] @ inv_zz) - self._y_sums[h]
            else:
                total += float(y @ f - theta.sum())
                d_f_lik = y - theta

            # latent-process density and gradients
            if spec.latent == GAR:
                mu = _gar_means(f, beta)
                resid = f - mu
                r = resid / (sigma * sigma)
                total += float(-0.5 * (resid @ r)) - T * (
                    log_sigma + 0.5 * _LOG_2PI
                )
                d_f = -r.copy()
                for tau in range(1, min(w, T) + 1):
                    d_f[: T - tau] += beta[tau] * r[tau:]
                grad[0] += r.sum()
                for tau in range(1, min(w, T) + 1):
                    grad[tau] += r[tau:] @ f[: T - tau]
                d_sigma += float(resid @ r) / sigma - T / sigma
            else:
                r = f - c
                alpha_vec = K_inv @ r
                total += float(-0.5 * (r @ alpha_vec)) - 0.5 * logdet - 0.5 * T * _LOG_2PI
                d_f = -alpha_vec
                A = np.outer(alpha_vec, alpha_vec) - K_inv
                d_c += float(alpha_vec.sum())
                d_a += 0.5 * float(np.sum(A * K)) * 2.0 / a  # jitter tracks a
                d_ell += 0.5 * float(np.sum(A * (K0 * self._d2))) / ell**3

            grad[off : off + T] = d_f + d_f_lik
            if lam_idx >= 0:
                # chain through lam = tanh(z/2) plus the Jacobian's own z-term
                grad[lam_idx] = d_lam * 0.5 * (1.0 - lam * lam) - lam
            off += T

        total -= self._lgamma_const
        if spec.latent == GAR:
            grad[w + 1] = d_sigma * sigma + 1.0
        else:
            grad[0] += d_c
            grad[1] = d_a * a + 1.0
            grad[2] = d_ell * ell + 1.0

        if not math.isfinite(total):
            return neg_inf
        return total, grad


def log_joint(spec: ModelSpec, v: np.ndarray, data) -> float:
    """Joint log density at unconstrained v (priors + latents + likelihood)."""
    return AssembledModel(spec, data).logp(v)


def grad_log_joint(spec: ModelSpec, v: np.ndarray, data) -> np.ndarray:
    """Gradient of log_joint in unconstrained coordinates."""
    return AssembledModel(spec, data).logp_and_grad(v)[1]


def samples_from_draws(
    spec: ModelSpec, draws_per_chain: list[np.ndarray]
) -> list[PosteriorSample]:
    """Materialize constrained PosteriorSamples from per-chain draw matrices."""
    out = []
    for chain_idx, draws in enumerate(draws_per_chain):
        for i in range(draws.shape[0]):
            p = unpack(spec, draws[i])
            out.append(
                PosteriorSample(
                    latent_params=p.latent_params,
                    lams=p.lams,
                    latents=p.latents,
                    chain=chain_idx,
                    draw=i,
                )
            )
    return out
