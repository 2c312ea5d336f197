"""Command-line interface.

Subcommands:
  simulate      draw a synthetic count series from the generative model
  fit           sample the posterior on the fit window, save draws
  forecast      extend saved draws into per-day forecast summaries
  evaluate      heldout log likelihood and MAE on the held-out test window
  grid-search   validation-scored hyperparameter sweep
  retrospective full protocol: GGP/GAR per site + multi-site GAR
  prospective   horizon-ahead forecasts against the rescaled baselines

The fit window is everything except the last ``split.test_days`` days;
set ``split.test_days: 0`` to fit on the whole series.
"""

from __future__ import annotations

import argparse
import datetime
import math
import os
from dataclasses import replace

import numpy as np
import yaml

from .data import (
    counts_matrix,
    ingest_csv,
    load_draws,
    save_draws,
    screen_anomalies,
    write_counts_csv,
    write_forecast_csv,
)
from .experiment import (
    ExperimentConfig,
    derive_seed,
    fit_model,
    grid_search_site,
    load_config,
    make_spec,
    run_prospective,
    run_retrospective,
    score_fit,
    write_prospective_outputs,
    write_retrospective_outputs,
)
from .forecast import draw_forecasts
from .latents import GarParams, GgpParams
from .model import samples_from_draws
from .simulate import (
    DEFAULT_START_DATE,
    simulate_gar_counts,
    simulate_ggp_counts,
    to_count_series,
)


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, sampler=replace(cfg.sampler, seed=args.seed))
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    if getattr(args, "screen_anomalies", False):
        cfg = replace(cfg, screen=True)
    return cfg


def _load_sites(cfg: ExperimentConfig):
    series_list = ingest_csv(cfg.counts_path)
    series_list.sort(key=lambda s: s.site or "")
    if cfg.screen:
        report = screen_anomalies(series_list)
        for site, reasons in sorted(report.items()):
            print(f"anomaly screen: excluding {site}: {'; '.join(reasons)}")
        series_list = [s for s in series_list if (s.site or "site") not in report]
        if not series_list:
            raise SystemExit("anomaly screening excluded every site")
    return series_list


def _fit_window(cfg, series):
    n = len(series) - cfg.split.test_days
    if n < 1:
        raise SystemExit("split.test_days leaves no data to fit")
    return series.slice(0, n)


def _fit_groups(cfg: ExperimentConfig, series_list):
    """Yield (label, spec, counts, fitted series list) per fit to run."""
    if cfg.multi_site and len(series_list) > 1:
        windows = [_fit_window(cfg, s) for s in series_list]
        spec = make_spec(cfg, len(windows[0]), n_sites=len(windows))
        yield "all-sites", spec, counts_matrix(windows), windows
    else:
        for s in series_list:
            window = _fit_window(cfg, s)
            spec = make_spec(cfg, len(window))
            yield (s.site or "site"), spec, window.counts[None, :], [window]


def cmd_simulate(args):
    with open(args.config) as fh:
        raw = yaml.safe_load(fh) or {}
    sim = raw.get("simulate", {})
    kind = sim.get("kind", "gar")
    days = int(sim.get("days", 69))
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    start = datetime.date.fromisoformat(str(sim.get("start_date", DEFAULT_START_DATE)))
    lam = sim.get("lam", 0.0)
    if kind == "gar":
        params = GarParams(
            beta=np.asarray(sim.get("beta", [0.05, 0.98]), dtype=float),
            sigma=float(sim.get("sigma", 0.05)),
        )
        sites = int(sim.get("sites", 1))
        _, counts = simulate_gar_counts(params, lam, days, sites, seed)
    elif kind == "ggp":
        params = GgpParams(
            c=float(sim.get("c", 3.0)),
            a=float(sim.get("a", 0.5)),
            ell=float(sim.get("ell", 10.0)),
        )
        _, counts = simulate_ggp_counts(params, float(lam), days, seed)
    else:
        raise SystemExit(f"unknown simulate.kind {kind!r}")
    out = args.out or "simulated.csv"
    write_counts_csv(out, to_count_series(counts, start_date=start))
    print(f"wrote {counts.shape[0]} site(s) x {days} days to {out}")


def cmd_fit(args):
    cfg = _apply_overrides(load_config(args.config), args)
    series_list = _load_sites(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    for label, spec, counts, _ in _fit_groups(cfg, series_list):
        fit = fit_model(spec, counts, cfg.sampler)
        path = os.path.join(cfg.output_dir, f"draws_{label}.csv".replace(" ", "_"))
        save_draws(path, spec.param_names(), [c.draws for c in fit.chains])
        rhat_txt = "n/a" if math.isnan(fit.max_rhat) else f"{fit.max_rhat:.4f}"
        ess_txt = "n/a" if math.isnan(fit.min_ess) else f"{fit.min_ess:.0f}"
        print(
            f"{label}: dim={spec.dim} max-rhat={rhat_txt} min-ess={ess_txt} "
            f"divergences={fit.divergences} -> {path}"
        )


def _load_fit_draws(cfg, label):
    path = os.path.join(cfg.output_dir, f"draws_{label}.csv".replace(" ", "_"))
    if not os.path.exists(path):
        raise SystemExit(f"no draw file at {path}; run `fit` first")
    _, chains = load_draws(path)
    return chains


def cmd_forecast(args):
    cfg = _apply_overrides(load_config(args.config), args)
    series_list = _load_sites(cfg)
    horizon = cfg.split.horizon
    for label, spec, _, windows in _fit_groups(cfg, series_list):
        chains = _load_fit_draws(cfg, label)
        samples = samples_from_draws(spec, chains)
        seed = derive_seed(cfg.seed, 7, len(windows), 0)
        results = draw_forecasts(samples, spec, horizon, seed)
        for site_idx, window in enumerate(windows):
            fc = results[site_idx]
            dates = [
                window.dates[-1] + datetime.timedelta(days=k + 1)
                for k in range(horizon)
            ]
            site_name = window.site or "site"
            path = os.path.join(
                cfg.output_dir, f"forecast_{site_name}.csv".replace(" ", "_")
            )
            write_forecast_csv(path, dates, fc.mean, fc.p2_5, fc.p50, fc.p97_5)
            print(f"{site_name}: wrote {horizon}-day forecast to {path}")


def cmd_evaluate(args):
    cfg = _apply_overrides(load_config(args.config), args)
    if cfg.split.test_days < 1:
        raise SystemExit("evaluate needs split.test_days >= 1")
    series_list = _load_sites(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    lines = ["evaluation on the held-out test window", ""]
    for label, spec, _, windows in _fit_groups(cfg, series_list):
        chains = _load_fit_draws(cfg, label)
        samples = samples_from_draws(spec, chains)
        full = {s.site: s for s in series_list}
        y_test = np.stack(
            [
                full[w.site].counts[len(w) : len(w) + cfg.split.test_days]
                for w in windows
            ]
        )
        fit_like = _RescoredFit(spec, chains, samples)
        scores = score_fit(
            fit_like,
            y_test,
            derive_seed(cfg.seed, 8, len(windows), 0),
            group_size=cfg.group_size,
        )
        for site_idx, w in enumerate(windows):
            sc = scores[site_idx]
            site_name = w.site or "site"
            lines.append(
                f"{site_name}: heldout {sc.pooled.mean:+.4f} +/- {sc.pooled.sem:.4f} "
                f"({sc.pooled.n_groups} groups of {sc.pooled.group_size}), "
                f"mae {sc.mae:.4f}"
            )
            for k, ch in enumerate(sc.per_chain):
                lines.append(f"  chain {k}: {ch.mean:+.4f} +/- {ch.sem:.4f}")
    text = "\n".join(lines)
    path = os.path.join(cfg.output_dir, "evaluation.txt")
    with open(path, "w") as fh:
        fh.write(text + "\n")
    print(text)


class _RescoredFit:
    """Duck-typed FitResult for re-scoring saved draws without refitting."""

    def __init__(self, spec, chain_draws, samples):
        self.spec = spec
        self.chains = chain_draws
        self.samples = samples


def cmd_grid_search(args):
    cfg = _apply_overrides(load_config(args.config), args)
    series_list = _load_sites(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    lines = [f"grid search ({cfg.latent} latent)", ""]
    for site_idx, series in enumerate(series_list):
        res = grid_search_site(series, cfg, cfg.latent, site_idx)
        lines.append(f"site: {series.site or 'site'}  (best {res.parameter}={res.best:g})")
        for value, score, sem, status in res.as_rows():
            lines.append(
                f"  {res.parameter}={value:<6g} score {score:+.4f} +/- {sem:.4f}  {status}"
            )
        lines.append("")
    text = "\n".join(lines)
    with open(os.path.join(cfg.output_dir, "grid_search.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)


def cmd_retrospective(args):
    cfg = _apply_overrides(load_config(args.config), args)
    report = run_retrospective(cfg)
    write_retrospective_outputs(report, cfg.output_dir)
    with open(os.path.join(cfg.output_dir, "retrospective_metrics.txt")) as fh:
        print(fh.read())


def cmd_prospective(args):
    cfg = _apply_overrides(load_config(args.config), args)
    report = run_prospective(cfg)
    write_prospective_outputs(report, cfg.output_dir)
    with open(os.path.join(cfg.output_dir, "prospective_metrics.txt")) as fh:
        print(fh.read())


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="censuscast",
        description="Bayesian forecasting of daily hospital census counts",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML experiment config")
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument("--out", default=None, help="override output location")

    ingest_flags = argparse.ArgumentParser(add_help=False)
    ingest_flags.add_argument(
        "--screen-anomalies",
        action="store_true",
        help="report and exclude sites with zeros or implausible jumps",
    )

    handlers = {
        "simulate": (cmd_simulate, [common]),
        "fit": (cmd_fit, [common, ingest_flags]),
        "forecast": (cmd_forecast, [common, ingest_flags]),
        "evaluate": (cmd_evaluate, [common, ingest_flags]),
        "grid-search": (cmd_grid_search, [common, ingest_flags]),
        "retrospective": (cmd_retrospective, [common, ingest_flags]),
        "prospective": (cmd_prospective, [common, ingest_flags]),
    }
    for name, (fn, parents) in handlers.items():
        p = sub.add_parser(name, parents=parents)
        p.set_defaults(handler=fn)

    args = parser.parse_args(argv)
    args.handler(args)


if __name__ == "__main__":
    main()
