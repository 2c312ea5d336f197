"""Stakeholder baselines: rescaled state-level trend and external forecasts.

Both baselines predict a site's counts by multiplying a state-level
forecast by the site's predicted share of state volume.  The share and
the state trend each come from ordinary least squares on the day index
over the trailing window, with 95% *prediction* intervals (they include
residual noise, since the target is a realized count, not its mean).

Interval bounds combine multiplicatively (lower x lower, upper x upper),
which is valid for nonnegative quantities but conservative; it is a
convention, not a calibrated interval.
"""

from __future__ import annotations

import csv
import datetime
from dataclasses import dataclass

import numpy as np
from scipy.stats import t as student_t

from .data import CountSeries

TRAILING_WINDOW = 28


@dataclass
class TrendForecast:
    """Per-day forecast mean with a symmetric 95% interval."""

    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if not (self.mean.shape == self.lower.shape == self.upper.shape):
            raise ValueError("mean, lower, upper must have equal length")


@dataclass
class FractionForecast(TrendForecast):
    """Trend forecast of a site's share of state volume, clamped to [0, 1]."""

    clamped: bool = False


@dataclass
class ExternalStateForecast:
    """State-level forecast supplied from outside (mean and 95% CI per day)."""

    dates: list[datetime.date]
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if not (
            len(self.dates) == self.mean.size == self.lower.size == self.upper.size
        ):
            raise ValueError("dates and columns must have equal length")
        if np.any(self.lower > self.mean) or np.any(self.mean > self.upper):
            raise ValueError("need lower <= mean <= upper on every day")


def read_external_forecast(path) -> ExternalStateForecast:
    """Load a state forecast CSV with header date,mean,lower95,upper95."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip().lower() for h in next(reader)]
        if header != ["date", "mean", "lower95", "upper95"]:
            raise ValueError(
                f"{path}: expected header date,mean,lower95,upper95, "
                f"got {','.join(header)}"
            )
        dates, mean, lower, upper = [], [], [], []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            dates.append(datetime.date.fromisoformat(row[0].strip()))
            mean.append(float(row[1]))
            lower.append(float(row[2]))
            upper.append(float(row[3]))
    return ExternalStateForecast(dates, np.array(mean), np.array(lower), np.array(upper))


def ols_trend_forecast(y, horizon: int, level: float = 0.95) -> TrendForecast:
    """OLS of y on its day index, extrapolated ``horizon`` days ahead.

    Prediction intervals use the t distribution with n-2 degrees of
    freedom and variance s^2 (1 + 1/n + (x* - xbar)^2 / Sxx).
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if n < 3:
        raise ValueError(f"need at least 3 points to fit a trend, got {n}")
    x = np.arange(n, dtype=float)
    xbar = x.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    slope = float(np.sum((x - xbar) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * xbar)
    resid = y - (intercept + slope * x)
    s2 = float(resid @ resid) / (n - 2)

    x_new = np.arange(n, n + horizon, dtype=float)
    mean = intercept + slope * x_new
    se_pred = np.sqrt(s2 * (1.0 + 1.0 / n + (x_new - xbar) ** 2 / sxx))
    tq = student_t.ppf(0.5 + level / 2.0, n - 2)
    return TrendForecast(mean=mean, lower=mean - tq * se_pred, upper=mean + tq * se_pred)


def fraction_forecast(
    site: CountSeries,
    state: CountSeries,
    window: int = TRAILING_WINDOW,
    horizon: int = 14,
) -> FractionForecast:
    """Trend-forecast the site's fraction of state volume from the
    trailing window, clamping predictions and bounds to [0, 1]."""
    if len(site) < window or len(state) < window:
        raise ValueError(f"need at least {window} days of site and state data")
    site_tail = site.slice(len(site) - window, len(site))
    state_tail = state.slice(len(state) - window, len(state))
    if site_tail.dates != state_tail.dates:
        raise ValueError("site and state dates are not aligned over the window")
    zero_days = [
        d for d, c in zip(state_tail.dates, state_tail.counts) if c == 0
    ]
    if zero_days:
        raise ValueError(
            "state count is zero on " + ", ".join(str(d) for d in zero_days)
        )
    frac = site_tail.counts / state_tail.counts
    if np.any(frac > 1.0):
        raise ValueError("site counts exceed state counts in the window")
    fc = ols_trend_forecast(frac, horizon)
    clipped_mean = np.clip(fc.mean, 0.0, 1.0)
    clipped_lower = np.clip(fc.lower, 0.0, 1.0)
    clipped_upper = np.clip(fc.upper, 0.0, 1.0)
    clamped = bool(
        np.any(clipped_mean != fc.mean)
        or np.any(clipped_lower != fc.lower)
        or np.any(clipped_upper != fc.upper)
    )
    return FractionForecast(
        mean=clipped_mean, lower=clipped_lower, upper=clipped_upper, clamped=clamped
    )


def rescale(site_fraction: TrendForecast, state_forecast) -> TrendForecast:
    """Site-level forecast: fraction x state, bounds multiplied pairwise.

    ``state_forecast`` may be a TrendForecast/ExternalStateForecast or a
    plain per-day point vector (bounds then equal the point forecast).
    """
    if hasattr(state_forecast, "mean"):
        s_mean = np.asarray(state_forecast.mean, dtype=float)
        s_lower = np.asarray(state_forecast.lower, dtype=float)
        s_upper = np.asarray(state_forecast.upper, dtype=float)
    else:
        s_mean = np.asarray(state_forecast, dtype=float)
        s_lower = s_mean
        s_upper = s_mean
    if s_mean.shape != site_fraction.mean.shape:
        raise ValueError(
            f"horizon mismatch: fraction covers {site_fraction.mean.size} days, "
            f"state forecast {s_mean.size}"
        )
    return TrendForecast(
        mean=site_fraction.mean * s_mean,
        lower=site_fraction.lower * s_lower,
        upper=site_fraction.upper * s_upper,
    )
