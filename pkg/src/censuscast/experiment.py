"""Experiment orchestration: grid search, retrospective and prospective runs.

The retrospective protocol fits three models per dataset (single-site GP
latent, single-site autoregressive latent, multi-site autoregressive
with shared dynamics), selecting each single-site model's hyperparameter
by validation heldout likelihood, refitting on train+validation, and
scoring the test window.  The prospective protocol forecasts a horizon
ahead with the autoregressive models next to the two rescaled
state-level baselines and reports MAE against realized counts.

All randomness derives from the experiment seed through SeedSequence, so
a given config reproduces its outputs byte for byte.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .baselines import (
    ExternalStateForecast,
    fraction_forecast,
    ols_trend_forecast,
    read_external_forecast,
    rescale,
)
from .data import (
    CountSeries,
    SplitSpec,
    counts_matrix,
    ingest_csv,
    screen_anomalies,
    split,
    write_forecast_csv,
)
from .diagnostics import rhat, rhat_max_ess_min
from .forecast import ForecastResult, HeldoutScore, draw_forecasts, heldout_loglik, mae
from .latents import PriorConfig
from .model import AssembledModel, ModelSpec, PosteriorSample, samples_from_draws
from .nuts import ChainResult, SamplerConfig, nuts_sample

GAR_SINGLE = "gar-single"
GGP_SINGLE = "ggp-single"
GAR_MULTI = "gar-multi"

_STAGE_GRID = 0
_STAGE_REFIT = 1
_STAGE_FORECAST = 2
_MODEL_CODE = {GAR_SINGLE: 0, GGP_SINGLE: 1, GAR_MULTI: 2}

RHAT_FLAG_THRESHOLD = 1.1
RHAT_FLAG_FRACTION = 0.1


@dataclass
class ExperimentConfig:
    counts_path: str | None = None
    state_path: str | None = None
    external_forecast_path: str | None = None
    latent: str = "gar"
    likelihood: str = "genpoisson"
    window: int = 1
    lengthscale_mean: float = 0.0
    multi_site: bool = False
    screen: bool = False
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    grid_window: tuple = (1, 2, 5, 7, 10, 14)
    grid_lengthscale: tuple = (0, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50)
    group_size: int = 500
    prospective_holdout: bool = True
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if not self.grid_window or not self.grid_lengthscale:
            raise ValueError("hyperparameter grids must be nonempty")


def load_config(path) -> ExperimentConfig:
    """Read the YAML experiment file (keys documented in the README)."""
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    data = raw.get("data", {})
    model = raw.get("model", {})
    sampler = raw.get("sampler", {})
    split_cfg = raw.get("split", {})
    grid = raw.get("grid", {})
    cfg = ExperimentConfig(
        counts_path=data.get("counts"),
        state_path=data.get("state"),
        external_forecast_path=data.get("external_forecast"),
        latent=model.get("latent", "gar"),
        likelihood=model.get("likelihood", "genpoisson"),
        window=int(model.get("window", 1)),
        lengthscale_mean=float(model.get("lengthscale_mean", 0.0)),
        multi_site=bool(model.get("multi_site", False)),
        screen=bool(raw.get("screen_anomalies", False)),
        sampler=SamplerConfig(
            n_chains=int(sampler.get("chains", 2)),
            n_warmup=int(sampler.get("warmup", 1000)),
            n_draws=int(sampler.get("draws", 5000)),
            target_accept=float(sampler.get("target_accept", 0.8)),
            max_tree_depth=int(sampler.get("max_tree_depth", 10)),
            seed=int(raw.get("seed", 0)),
        ),
        split=SplitSpec(
            test_days=int(split_cfg.get("test_days", 14)),
            val_days=int(split_cfg.get("val_days", 14)),
            horizon=int(split_cfg.get("horizon", 14)),
        ),
        grid_window=tuple(grid.get("window", (1, 2, 5, 7, 10, 14))),
        grid_lengthscale=tuple(
            grid.get("lengthscale_mean", (0, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50))
        ),
        group_size=int(raw.get("group_size", 500)),
        prospective_holdout=bool(raw.get("prospective_holdout", True)),
        output_dir=str(raw.get("output_dir", "out")),
        seed=int(raw.get("seed", 0)),
    )
    for p in (cfg.counts_path, cfg.state_path, cfg.external_forecast_path):
        if p is not None and not os.path.exists(p):
            raise FileNotFoundError(f"configured data path does not exist: {p}")
    return cfg


def derive_seed(*parts: int) -> int:
    """Stable sub-seed from integer coordinates (seed, site, model, ...)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def make_spec(cfg: ExperimentConfig, train_len: int, n_sites: int = 1, **overrides):
    kwargs = dict(
        latent=cfg.latent,
        likelihood=cfg.likelihood,
        train_len=train_len,
        n_sites=n_sites,
        window=cfg.window,
        priors=PriorConfig(mu_ell=cfg.lengthscale_mean),
    )
    kwargs.update(overrides)
    if kwargs["latent"] == "ggp":
        kwargs["window"] = 1
    return ModelSpec(**kwargs)


@dataclass
class FitResult:
    spec: ModelSpec
    chains: list[ChainResult]
    samples: list[PosteriorSample]
    max_rhat: float
    min_ess: float
    divergences: int
    flagged: bool  # R-hat above threshold on too many parameters


def fit_model(spec: ModelSpec, counts, sampler_cfg: SamplerConfig) -> FitResult:
    """Run the sampler on an assembled model and collect diagnostics."""
    model = AssembledModel(spec, counts)
    chains = nuts_sample(
        model.logp_and_grad, model.dim, sampler_cfg, model.initial_point()
    )
    draws = [c.draws for c in chains]
    samples = samples_from_draws(spec, draws)
    flagged = False
    max_rhat, min_ess = math.nan, math.nan
    if sampler_cfg.n_chains >= 2:
        max_rhat, min_ess = rhat_max_ess_min(draws)
        stacked = np.stack(draws)
        n_bad = sum(
            rhat(stacked[:, :, j]) > RHAT_FLAG_THRESHOLD for j in range(spec.dim)
        )
        flagged = n_bad > RHAT_FLAG_FRACTION * spec.dim
    return FitResult(
        spec=spec,
        chains=chains,
        samples=samples,
        max_rhat=max_rhat,
        min_ess=min_ess,
        divergences=sum(c.divergences for c in chains),
        flagged=flagged,
    )


@dataclass
class SiteScore:
    """Heldout scoring of one site: pooled and per-chain, plus forecasts."""

    pooled: HeldoutScore
    per_chain: list[HeldoutScore]
    forecast: ForecastResult
    mae: float | None = None


def score_fit(
    fit: FitResult,
    y_future: np.ndarray,
    forecast_seed: int,
    group_size: int = 500,
) -> list[SiteScore]:
    """Draw forecast latents once and score every site, per chain and pooled."""
    y_future = np.atleast_2d(np.asarray(y_future))
    horizon = y_future.shape[1]
    forecasts = draw_forecasts(fit.samples, fit.spec, horizon, forecast_seed)
    out = []
    for site in range(fit.spec.n_sites):
        pooled = heldout_loglik(
            fit.samples, fit.spec, y_future[site], site=site, group_size=group_size
        )
        per_chain = []
        for k in range(len(fit.chains)):
            chain_samples = [s for s in fit.samples if s.chain == k]
            per_chain.append(
                heldout_loglik(
                    chain_samples,
                    fit.spec,
                    y_future[site],
                    site=site,
                    group_size=group_size,
                )
            )
        out.append(
            SiteScore(
                pooled=pooled,
                per_chain=per_chain,
                forecast=forecasts[site],
                mae=mae(forecasts[site].mean, y_future[site]),
            )
        )
    return out


@dataclass
class GridPoint:
    value: float
    score: float
    sem: float
    flagged: bool


@dataclass
class GridSearchResult:
    parameter: str  # "window" or "lengthscale_mean"
    points: list[GridPoint]
    best: float

    def as_rows(self):
        return [
            (p.value, p.score, p.sem, "flagged" if p.flagged else "ok")
            for p in self.points
        ]


def grid_search_site(
    series: CountSeries, cfg: ExperimentConfig, latent: str, site_idx: int = 0
) -> GridSearchResult:
    """Fit each grid value on train, score on validation, pick the argmax.

    Grid values whose fit shows R-hat > 1.1 on more than 10% of
    parameters are flagged and excluded from selection unless every
    value is flagged.  Ties break toward the smaller value.
    """
    train, val, _ = split(series, cfg.split)
    parameter = "window" if latent == "gar" else "lengthscale_mean"
    grid = cfg.grid_window if latent == "gar" else cfg.grid_lengthscale
    model_code = _MODEL_CODE[GAR_SINGLE if latent == "gar" else GGP_SINGLE]

    points = []
    for gi, value in enumerate(grid):
        overrides = (
            {"latent": latent, "window": int(value)}
            if latent == "gar"
            else {"latent": latent, "priors": PriorConfig(mu_ell=float(value))}
        )
        spec = make_spec(cfg, len(train), **overrides)
        sampler_cfg = replace(
            cfg.sampler, seed=derive_seed(cfg.seed, site_idx, model_code, _STAGE_GRID, gi)
        )
        fit = fit_model(spec, train.counts[None, :], sampler_cfg)
        scores = score_fit(
            fit,
            val.counts[None, :],
            derive_seed(cfg.seed, site_idx, model_code, _STAGE_FORECAST, gi),
            group_size=cfg.group_size,
        )
        points.append(
            GridPoint(
                value=float(value),
                score=scores[0].pooled.mean,
                sem=scores[0].pooled.sem,
                flagged=fit.flagged,
            )
        )

    return GridSearchResult(
        parameter=parameter, points=points, best=select_best(points)
    )


def select_best(points: list[GridPoint]) -> float:
    """Argmax of the validation score; ties break toward the smaller value.

    Flagged values are excluded unless every value is flagged.
    """
    usable = [p for p in points if not p.flagged]
    if not usable:
        usable = points
    return max(usable, key=lambda p: (p.score, -p.value)).value


def _fit_and_score_single(
    series: CountSeries,
    cfg: ExperimentConfig,
    latent: str,
    hyper_value: float,
    site_idx: int,
) -> tuple[FitResult, SiteScore]:
    """Refit on train+val with the chosen hyperparameter; score the test set."""
    train, val, test = split(series, cfg.split)
    fit_len = len(train) + len(val)
    counts_fit = series.counts[:fit_len][None, :]
    overrides = (
        {"latent": latent, "window": int(hyper_value)}
        if latent == "gar"
        else {"latent": latent, "priors": PriorConfig(mu_ell=float(hyper_value))}
    )
    spec = make_spec(cfg, fit_len, **overrides)
    model_code = _MODEL_CODE[GAR_SINGLE if latent == "gar" else GGP_SINGLE]
    sampler_cfg = replace(
        cfg.sampler, seed=derive_seed(cfg.seed, site_idx, model_code, _STAGE_REFIT, 0)
    )
    fit = fit_model(spec, counts_fit, sampler_cfg)
    scores = score_fit(
        fit,
        test.counts[None, :],
        derive_seed(cfg.seed, site_idx, model_code, _STAGE_FORECAST, 999),
        group_size=cfg.group_size,
    )
    return fit, scores[0]


@dataclass
class RetrospectiveEntry:
    site: str
    model: str
    hyper: float | None
    score: SiteScore
    max_rhat: float
    min_ess: float
    grid: GridSearchResult | None = None


@dataclass
class RetrospectiveReport:
    entries: list[RetrospectiveEntry]

    def entry(self, site: str, model: str) -> RetrospectiveEntry:
        for e in self.entries:
            if e.site == site and e.model == model:
                return e
        raise KeyError((site, model))


def run_retrospective(cfg: ExperimentConfig, series_list=None) -> RetrospectiveReport:
    """Table-style protocol: GGP and GAR per site plus multi-site GAR (W=1)."""
    if series_list is None:
        series_list = ingest_csv(cfg.counts_path)
    if cfg.screen:
        report = screen_anomalies(series_list)
        for site, reasons in sorted(report.items()):
            print(f"anomaly screen: excluding {site}: {'; '.join(reasons)}")
        series_list = [s for s in series_list if (s.site or "site") not in report]
        if not series_list:
            raise ValueError("anomaly screening excluded every site")
    entries = []

    for site_idx, series in enumerate(series_list):
        site_name = series.site or "site"
        for latent, model_name in ((GGP_SINGLE, GGP_SINGLE), (GAR_SINGLE, GAR_SINGLE)):
            kind = "ggp" if latent == GGP_SINGLE else "gar"
            grid = grid_search_site(series, cfg, kind, site_idx)
            fit, score = _fit_and_score_single(series, cfg, kind, grid.best, site_idx)
            entries.append(
                RetrospectiveEntry(
                    site=site_name,
                    model=model_name,
                    hyper=grid.best,
                    score=score,
                    max_rhat=fit.max_rhat,
                    min_ess=fit.min_ess,
                    grid=grid,
                )
            )

    # multi-site GAR with shared dynamics, fixed window of 1
    splits = [split(s, cfg.split) for s in series_list]
    fit_len = len(splits[0][0]) + len(splits[0][1])
    counts_fit = np.stack([s.counts[:fit_len] for s in series_list])
    y_test = np.stack([sp[2].counts for sp in splits])
    spec = make_spec(
        cfg, fit_len, n_sites=len(series_list), latent="gar", window=1
    )
    sampler_cfg = replace(
        cfg.sampler, seed=derive_seed(cfg.seed, 0, _MODEL_CODE[GAR_MULTI], _STAGE_REFIT, 0)
    )
    fit = fit_model(counts=counts_fit, spec=spec, sampler_cfg=sampler_cfg)
    scores = score_fit(
        fit,
        y_test,
        derive_seed(cfg.seed, 0, _MODEL_CODE[GAR_MULTI], _STAGE_FORECAST, 0),
        group_size=cfg.group_size,
    )
    for site_idx, series in enumerate(series_list):
        entries.append(
            RetrospectiveEntry(
                site=series.site or "site",
                model=GAR_MULTI,
                hyper=1,
                score=scores[site_idx],
                max_rhat=fit.max_rhat,
                min_ess=fit.min_ess,
            )
        )
    return RetrospectiveReport(entries=entries)


@dataclass
class ProspectiveEntry:
    site: str
    method: str
    mean: np.ndarray
    lower: np.ndarray  # 2.5th percentile or CI lower bound
    upper: np.ndarray
    median: np.ndarray | None = None
    mae: float | None = None


@dataclass
class ProspectiveReport:
    entries: list[ProspectiveEntry]
    dates: list

    def methods(self, site: str) -> list[str]:
        return [e.method for e in self.entries if e.site == site]

    def entry(self, site: str, method: str) -> ProspectiveEntry:
        for e in self.entries:
            if e.site == site and e.method == method:
                return e
        raise KeyError((site, method))


def run_prospective(
    cfg: ExperimentConfig,
    series_list=None,
    state_series: CountSeries | None = None,
    external: ExternalStateForecast | None = None,
) -> ProspectiveReport:
    """Horizon-ahead forecasts: GAR models plus the rescaled baselines."""
    if series_list is None:
        series_list = ingest_csv(cfg.counts_path)
    if state_series is None and cfg.state_path:
        state_series = ingest_csv(cfg.state_path)[0]
    if external is None and cfg.external_forecast_path:
        external = read_external_forecast(cfg.external_forecast_path)

    horizon = cfg.split.horizon
    if cfg.prospective_holdout:
        if len(series_list[0]) <= horizon + 1:
            raise ValueError("series too short to hold out the forecast horizon")
        histories = [s.slice(0, len(s) - horizon) for s in series_list]
        actuals = [s.counts[-horizon:] for s in series_list]
    else:
        histories = list(series_list)
        actuals = [None] * len(series_list)
    import datetime as _dt

    forecast_dates = [
        histories[0].dates[-1] + _dt.timedelta(days=k + 1) for k in range(horizon)
    ]

    entries = []

    # single-site GAR per site
    for site_idx, hist in enumerate(histories):
        spec = make_spec(cfg, len(hist), latent="gar", window=cfg.window)
        sampler_cfg = replace(
            cfg.sampler,
            seed=derive_seed(cfg.seed, site_idx, _MODEL_CODE[GAR_SINGLE], _STAGE_REFIT, 1),
        )
        fit = fit_model(spec, hist.counts[None, :], sampler_cfg)
        fc = draw_forecasts(
            fit.samples,
            spec,
            horizon,
            derive_seed(cfg.seed, site_idx, _MODEL_CODE[GAR_SINGLE], _STAGE_FORECAST, 1),
        )[0]
        entries.append(
            ProspectiveEntry(
                site=hist.site or "site",
                method=GAR_SINGLE,
                mean=fc.mean,
                lower=fc.p2_5,
                upper=fc.p97_5,
                median=fc.p50,
                mae=None if actuals[site_idx] is None else mae(fc.mean, actuals[site_idx]),
            )
        )

    # multi-site GAR, shared dynamics, W=1
    if len(histories) > 1:
        spec = make_spec(cfg, len(histories[0]), n_sites=len(histories), latent="gar", window=1)
        sampler_cfg = replace(
            cfg.sampler,
            seed=derive_seed(cfg.seed, 0, _MODEL_CODE[GAR_MULTI], _STAGE_REFIT, 1),
        )
        fit = fit_model(spec, counts_matrix(histories), sampler_cfg)
        fcs = draw_forecasts(
            fit.samples,
            spec,
            horizon,
            derive_seed(cfg.seed, 0, _MODEL_CODE[GAR_MULTI], _STAGE_FORECAST, 1),
        )
        for site_idx, hist in enumerate(histories):
            fc = fcs[site_idx]
            entries.append(
                ProspectiveEntry(
                    site=hist.site or "site",
                    method=GAR_MULTI,
                    mean=fc.mean,
                    lower=fc.p2_5,
                    upper=fc.p97_5,
                    median=fc.p50,
                    mae=None
                    if actuals[site_idx] is None
                    else mae(fc.mean, actuals[site_idx]),
                )
            )

    # rescaled baselines need the state series
    if state_series is not None:
        state_hist = state_series
        if cfg.prospective_holdout:
            state_hist = state_series.slice(0, len(state_series) - horizon)
        tail = state_hist.slice(len(state_hist) - 28, len(state_hist))
        state_fc = ols_trend_forecast(tail.counts, horizon)
        for site_idx, hist in enumerate(histories):
            frac = fraction_forecast(hist, state_hist, horizon=horizon)
            site_fc = rescale(frac, state_fc)
            entries.append(
                ProspectiveEntry(
                    site=hist.site or "site",
                    method="rescaled-ols",
                    mean=site_fc.mean,
                    lower=site_fc.lower,
                    upper=site_fc.upper,
                    mae=None
                    if actuals[site_idx] is None
                    else mae(site_fc.mean, actuals[site_idx]),
                )
            )
            if external is not None:
                if list(external.dates) != forecast_dates:
                    raise ValueError(
                        "external forecast dates do not match the forecast horizon "
                        f"({external.dates[0]}..{external.dates[-1]} vs "
                        f"{forecast_dates[0]}..{forecast_dates[-1]})"
                    )
                ext_fc = rescale(frac, external)
                entries.append(
                    ProspectiveEntry(
                        site=hist.site or "site",
                        method="rescaled-external",
                        mean=ext_fc.mean,
                        lower=ext_fc.lower,
                        upper=ext_fc.upper,
                        mae=None
                        if actuals[site_idx] is None
                        else mae(ext_fc.mean, actuals[site_idx]),
                    )
                )
    elif external is not None:
        raise ValueError("rescaling an external forecast requires the state series")

    return ProspectiveReport(entries=entries, dates=forecast_dates)


def format_retrospective(report: RetrospectiveReport) -> str:
    """Fixed-format text table: one block per site, two chain rows per model."""
    lines = ["retrospective heldout log likelihood (normalized per test day)", ""]
    sites = []
    for e in report.entries:
        if e.site not in sites:
            sites.append(e.site)
    for site in sites:
        lines.append(f"site: {site}")
        for model in (GGP_SINGLE, GAR_SINGLE, GAR_MULTI):
            try:
                e = report.entry(site, model)
            except KeyError:
                continue
            hyper = (
                f" ({'W' if 'gar' in model else 'mu_ell'}={e.hyper:g})"
                if e.hyper is not None
                else ""
            )
            lines.append(
                f"  {model:<11}{hyper:<14} pooled {e.score.pooled.mean:+.3f} "
                f"+/- {e.score.pooled.sem:.3f}   mae {e.score.mae:.3f}   "
                f"rhat {e.max_rhat:.3f}   ess {e.min_ess:.0f}"
            )
            for k, ch in enumerate(e.score.per_chain):
                lines.append(
                    f"      chain {k}: {ch.mean:+.3f} +/- {ch.sem:.3f} "
                    f"({ch.n_groups} groups of {ch.group_size})"
                )
        lines.append("")
    return "\n".join(lines)


def format_prospective(report: ProspectiveReport) -> str:
    lines = ["prospective forecasts", ""]
    sites = []
    for e in report.entries:
        if e.site not in sites:
            sites.append(e.site)
    for site in sites:
        lines.append(f"site: {site}")
        for e in report.entries:
            if e.site != site:
                continue
            mae_txt = f"{e.mae:.3f}" if e.mae is not None else "n/a"
            lines.append(
                f"  {e.method:<18} mae {mae_txt:>8}   "
                f"day1 {e.mean[0]:.1f} [{e.lower[0]:.1f}, {e.upper[0]:.1f}]   "
                f"day{len(e.mean)} {e.mean[-1]:.1f} [{e.lower[-1]:.1f}, {e.upper[-1]:.1f}]"
            )
        lines.append("")
    return "\n".join(lines)


def write_prospective_outputs(report: ProspectiveReport, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "prospective_metrics.txt"), "w") as fh:
        fh.write(format_prospective(report) + "\n")
    for e in report.entries:
        fname = f"forecast_{e.site}_{e.method}.csv".replace(" ", "_")
        write_forecast_csv(
            os.path.join(out_dir, fname),
            report.dates,
            e.mean,
            e.lower,
            e.median if e.median is not None else e.mean,
            e.upper,
        )


def write_retrospective_outputs(report: RetrospectiveReport, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "retrospective_metrics.txt"), "w") as fh:
        fh.write(format_retrospective(report) + "\n")
    with open(os.path.join(out_dir, "retrospective_scores.csv"), "w") as fh:
        fh.write("site,model,hyper,chain,score,sem,n_groups,group_size,mae\n")
        for e in report.entries:
            pooled = e.score.pooled
            fh.write(
                f"{e.site},{e.model},{e.hyper:g},pooled,{pooled.mean:.6f},"
                f"{pooled.sem:.6f},{pooled.n_groups},{pooled.group_size},"
                f"{e.score.mae:.6f}\n"
            )
            for k, ch in enumerate(e.score.per_chain):
                fh.write(
                    f"{e.site},{e.model},{e.hyper:g},{k},{ch.mean:.6f},"
                    f"{ch.sem:.6f},{ch.n_groups},{ch.group_size},\n"
                )
