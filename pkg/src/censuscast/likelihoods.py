"""Count likelihoods: standard Poisson and generalized Poisson.

The generalized Poisson adds a dispersion parameter ``lam`` to the
Poisson rate component ``theta``: ``lam < 0`` gives underdispersed
counts (variance below the mean), ``lam > 0`` overdispersed, and
``lam = 0`` recovers the standard Poisson exactly.

For ``lam < 0`` the PMF has finite support (mass is zero wherever
``theta + lam * y <= 0``) and the total mass falls slightly short of
one.  We do not renormalize; the deficiency stays below 1% in the
operating regime (``theta >= 5``, ``lam >= -0.5``) and is checked by
the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, ndtr

_LOG_2PI = math.log(2.0 * math.pi)


class SaturationError(RuntimeError):
    """Inversion sampling exhausted its support cap without reaching u."""


@dataclass(frozen=True)
class GenPoissonParams:
    """Generalized Poisson parameters.

    theta : rate-like mean component, strictly positive
    lam   : dispersion in [max(-1, -theta/4), 1]
    """

    theta: float
    lam: float

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        lo = max(-1.0, -self.theta / 4.0)
        if not lo <= self.lam <= 1.0:
            raise ValueError(
                f"lam={self.lam} outside [{lo:.6g}, 1] for theta={self.theta}"
            )


@dataclass(frozen=True)
class TruncNormalPrior:
    """Normal(mean, stddev**2) truncated to [lower, upper].

    Use ``lower=0`` with ``mean=0`` for a half-normal.  Infinite bounds
    give the plain normal.
    """

    mean: float
    stddev: float
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if not self.stddev > 0:
            raise ValueError(f"stddev must be positive, got {self.stddev}")
        if not self.lower < self.upper:
            raise ValueError(f"need lower < upper, got [{self.lower}, {self.upper}]")


def half_normal(stddev: float) -> TruncNormalPrior:
    """|Normal(0, stddev**2)| expressed as a zero-truncated normal."""
    return TruncNormalPrior(0.0, stddev, lower=0.0)


def _validate_count(y) -> int:
    if y < 0 or y != int(y):
        raise ValueError(f"y must be a nonnegative integer, got {y}")
    return int(y)


def poisson_logpmf(y, theta: float) -> float:
    """Log PMF of the Poisson: y*log(theta) - theta - log(y!)."""
    y = _validate_count(y)
    if theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    return y * math.log(theta) - theta - math.lgamma(y + 1)


def _genpoisson_logpmf_arr(y, theta, lam):
    """Vectorized generalized Poisson log PMF, no validation.

    Broadcasts over all arguments; returns -inf where theta + lam*y <= 0
    (zero-mass points of the truncated support).
    """
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    z = theta + lam * y
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(theta) + (y - 1.0) * np.log(z) - z - gammaln(y + 1.0)
    return np.where(z > 0, out, -np.inf)


def genpoisson_logpmf(y, p: GenPoissonParams) -> float:
    """Log PMF of the generalized Poisson.

    log[(1/y!) * theta * (theta + lam*y)**(y-1) * exp(-theta - lam*y)],
    with zero mass (-inf) where lam < 0 makes theta + lam*y nonpositive.
    """
    y = _validate_count(y)
    return float(_genpoisson_logpmf_arr(y, p.theta, p.lam))


def genpoisson_grad_logpmf(y, p: GenPoissonParams) -> tuple[float, float]:
    """Partials (d/dtheta, d/dlam) of the generalized Poisson log PMF."""
    y = _validate_count(y)
    z = p.theta + p.lam * y
    if z <= 0:
        raise ValueError(
            f"log PMF is -inf at y={y}, theta={p.theta}, lam={p.lam}"
        )
    d_theta = 1.0 / p.theta + (y - 1.0) / z - 1.0
    d_lam = y * (y - 1.0) / z - y
    return d_theta, d_lam


def genpoisson_mean_var(p: GenPoissonParams) -> tuple[float, float]:
    """Mean theta/(1-lam) and variance theta/(1-lam)**3."""
    if p.lam >= 1.0:
        raise ValueError("mean and variance diverge at lam = 1")
    one_minus = 1.0 - p.lam
    return p.theta / one_minus, p.theta / one_minus**3


def _support_cap(p: GenPoissonParams) -> int:
    mean, var = genpoisson_mean_var(p)
    return int(10.0 * (mean + 20.0 * math.sqrt(var))) + 1


def genpoisson_sample(p: GenPoissonParams, u: float) -> int:
    """Inversion sampling: smallest y whose CDF reaches u.

    The CDF is accumulated by summing exp(log PMF) from y = 0 upward,
    so the result is deterministic given u.  For lam < 0 the support is
    finite and slightly mass-deficient; a u beyond the total mass maps
    to the top support point.  Scanning past the cap of
    10 * (mean + 20*sqrt(variance)) points raises SaturationError.
    """
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must lie in [0, 1), got {u}")
    cap = _support_cap(p)
    acc = 0.0
    for y in range(cap + 1):
        z = p.theta + p.lam * y
        if z <= 0:
            # lam < 0: support exhausted at y-1; leftover deficiency mass
            # lands on the top support point.
            return max(y - 1, 0)
        acc += math.exp(
            math.log(p.theta) + (y - 1.0) * math.log(z) - z - math.lgamma(y + 1)
        )
        if acc >= u:
            return y
    raise SaturationError(
        f"CDF accumulation reached cap {cap} with mass {acc:.6g} < u={u:.6g} "
        f"(theta={p.theta}, lam={p.lam})"
    )


def genpoisson_sample_many(theta, lam, u) -> np.ndarray:
    """Vectorized inversion sampling for many (theta, lam, u) triples.

    Equivalent to calling genpoisson_sample elementwise; scans all
    still-unresolved draws in lockstep so bulk forecast sampling stays
    cheap.  Inputs broadcast to a common shape.
    """
    theta, lam, u = np.broadcast_arrays(
        np.asarray(theta, float), np.asarray(lam, float), np.asarray(u, float)
    )
    shape = theta.shape
    theta = theta.ravel()
    lam = lam.ravel()
    u = u.ravel()
    if np.any(theta <= 0):
        raise ValueError("theta must be positive")
    if np.any((lam < -1) | (lam >= 1)):
        raise ValueError("lam must lie in [-1, 1)")
    if np.any((u < 0) | (u >= 1)):
        raise ValueError("u must lie in [0, 1)")

    n = theta.size
    out = np.zeros(n, dtype=np.int64)
    acc = np.zeros(n)
    one_minus = 1.0 - lam
    mean = theta / one_minus
    var = theta / one_minus**3
    caps = (10.0 * (mean + 20.0 * np.sqrt(var))).astype(np.int64) + 1
    active = np.arange(n)
    log_theta = np.log(theta)

    y = 0
    while active.size:
        th = theta[active]
        la = lam[active]
        z = th + la * y
        ok = z > 0
        if not np.all(ok):
            # finite support ended for these draws: clamp to top point
            ended = active[~ok]
            out[ended] = max(y - 1, 0)
            active = active[ok]
            z = z[ok]
            if not active.size:
                break
        logpmf = log_theta[active] + (y - 1.0) * np.log(z) - z - math.lgamma(y + 1)
        acc[active] += np.exp(logpmf)
        done = acc[active] >= u[active]
        out[active[done]] = y
        active = active[~done]
        if active.size:
            over = active[y >= caps[active]]
            if over.size:
                raise SaturationError(
                    f"CDF accumulation reached cap at y={y} with mass < u for "
                    f"{over.size} draw(s), e.g. theta={theta[over[0]]:.6g}, "
                    f"lam={lam[over[0]]:.6g}, u={u[over[0]]:.6g}"
                )
        y += 1
    return out.reshape(shape)


def truncnormal_logpdf(x: float, prior: TruncNormalPrior) -> float:
    """Log density of a truncated normal; -inf outside [lower, upper]."""
    if x < prior.lower or x > prior.upper:
        return -math.inf
    z = (x - prior.mean) / prior.stddev
    log_kernel = -0.5 * z * z - math.log(prior.stddev) - 0.5 * _LOG_2PI
    return log_kernel - math.log(_truncnorm_mass(prior))


def truncnormal_grad_logpdf(x: float, prior: TruncNormalPrior) -> float:
    """d/dx of truncnormal_logpdf inside the support."""
    return -(x - prior.mean) / prior.stddev**2


def truncnormal_mean(prior: TruncNormalPrior) -> float:
    """Mean of the truncated normal (used for initializing samplers)."""
    a = (prior.lower - prior.mean) / prior.stddev
    b = (prior.upper - prior.mean) / prior.stddev
    phi_a = 0.0 if math.isinf(a) else math.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)
    phi_b = 0.0 if math.isinf(b) else math.exp(-0.5 * b * b) / math.sqrt(2 * math.pi)
    return prior.mean + prior.stddev * (phi_a - phi_b) / _truncnorm_mass(prior)


def _truncnorm_mass(prior: TruncNormalPrior) -> float:
    a = (prior.lower - prior.mean) / prior.stddev
    b = (prior.upper - prior.mean) / prior.stddev
    return float(ndtr(b) - ndtr(a))
