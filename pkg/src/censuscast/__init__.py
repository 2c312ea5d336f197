"""Bayesian forecasting of daily hospital census counts.

Latent-process count models (autoregressive or Gaussian-process latents
with Poisson or generalized Poisson likelihoods, optionally sharing
dynamics across hospital sites) fitted by a No-U-Turn sampler, with
probabilistic multi-day forecasts, normalized heldout log-likelihood
scoring, and rescaled state-level baselines.
"""

from .baselines import (
    ExternalStateForecast,
    FractionForecast,
    TrendForecast,
    fraction_forecast,
    ols_trend_forecast,
    rescale,
)
from .data import CountSeries, SplitSpec, ingest_csv, split
from .diagnostics import ess, rhat
from .forecast import ForecastResult, HeldoutScore, draw_forecasts, heldout_loglik, mae
from .latents import (
    GarParams,
    GgpParams,
    PriorConfig,
    gar_forecast_step,
    gar_grad_logdensity,
    gar_logdensity,
    ggp_conditional,
    ggp_grad_logdensity,
    ggp_logdensity,
    prior_logdensity,
    se_kernel_matrix,
)
from .likelihoods import (
    GenPoissonParams,
    TruncNormalPrior,
    genpoisson_grad_logpmf,
    genpoisson_logpmf,
    genpoisson_mean_var,
    genpoisson_sample,
    poisson_logpmf,
    truncnormal_logpdf,
)
from .model import (
    AssembledModel,
    ModelSpec,
    PosteriorSample,
    grad_log_joint,
    log_joint,
    pack,
    unpack,
)
from .nuts import ChainResult, SamplerConfig, nuts_sample

__version__ = "0.1.0"
