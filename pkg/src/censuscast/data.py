"""CSV ingestion, chronological splitting, anomaly screening, and draw files.

Input formats (ISO-8601 dates, one row per day):
  single site:  header ``date,count``
  multi site:   header ``date,site,count``

Counts must be nonnegative integers on contiguous daily dates; multi-site
files must cover the same date range for every site.
"""

from __future__ import annotations

import csv
import datetime
from dataclasses import dataclass

import numpy as np


@dataclass
class CountSeries:
    """Daily census counts for one site."""

    dates: list[datetime.date]
    counts: np.ndarray
    site: str | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if len(self.dates) != self.counts.size:
            raise ValueError("dates and counts must have equal length")
        if np.any(self.counts < 0) or self.counts.dtype.kind not in "iu":
            if np.any(self.counts != np.round(self.counts)) or np.any(
                self.counts < 0
            ):
                raise ValueError("counts must be nonnegative integers")
            self.counts = self.counts.astype(np.int64)
        for prev, cur in zip(self.dates, self.dates[1:]):
            if (cur - prev).days != 1:
                raise ValueError(
                    f"dates are not contiguous: gap between {prev} and {cur}"
                )

    def __len__(self) -> int:
        return self.counts.size

    def slice(self, start: int, stop: int) -> "CountSeries":
        return CountSeries(self.dates[start:stop], self.counts[start:stop], self.site)


@dataclass(frozen=True)
class SplitSpec:
    """Chronological partition: last test_days for testing, val_days before."""

    test_days: int = 14
    val_days: int = 14
    horizon: int = 14


def _parse_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        header = [h.strip().lower() for h in header]
        rows = list(reader)
    return header, rows


def ingest_csv(path) -> list[CountSeries]:
    """Parse a single-site or multi-site counts CSV into CountSeries.

    Raises ValueError naming offending rows (bad counts) or the missing
    dates (gaps in the daily index).
    """
    header, rows = _parse_rows(path)
    if header == ["date", "count"]:
        multi = False
    elif header == ["date", "site", "count"]:
        multi = True
    else:
        raise ValueError(
            f"{path}: expected header 'date,count' or 'date,site,count', "
            f"got {','.join(header)}"
        )

    by_site: dict[str, list[tuple[datetime.date, int]]] = {}
    bad_rows = []
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            d = datetime.date.fromisoformat(row[0].strip())
            site = row[1].strip() if multi else "site"
            count = int(row[-1].strip())
            if count < 0:
                raise ValueError
        except (ValueError, IndexError):
            bad_rows.append(lineno)
            continue
        by_site.setdefault(site, []).append((d, count))
    if bad_rows:
        raise ValueError(
            f"{path}: invalid date or count on row(s) {bad_rows} "
            "(counts must be nonnegative integers)"
        )
    if not by_site:
        raise ValueError(f"{path}: no data rows")

    out = []
    for site, pairs in by_site.items():
        pairs.sort(key=lambda p: p[0])
        dates = [p[0] for p in pairs]
        missing = []
        for prev, cur in zip(dates, dates[1:]):
            delta = (cur - prev).days
            if delta == 0:
                raise ValueError(f"{path}: duplicate date {cur} for site {site}")
            for k in range(1, delta):
                missing.append(prev + datetime.timedelta(days=k))
        if missing:
            raise ValueError(
                f"{path}: missing dates for site {site}: "
                + ", ".join(str(d) for d in missing)
            )
        out.append(
            CountSeries(
                dates=dates,
                counts=np.array([p[1] for p in pairs], dtype=np.int64),
                site=site if multi else None,
            )
        )

    if multi and len(out) > 1:
        ref = out[0]
        for s in out[1:]:
            if s.dates[0] != ref.dates[0] or s.dates[-1] != ref.dates[-1]:
                raise ValueError(
                    f"{path}: sites cover different date ranges "
                    f"({ref.site}: {ref.dates[0]}..{ref.dates[-1]}, "
                    f"{s.site}: {s.dates[0]}..{s.dates[-1]})"
                )
    return out


def split(series: CountSeries, spec: SplitSpec):
    """(train, val, test): test is the last test_days, val the prior val_days."""
    n = len(series)
    needed = spec.val_days + spec.test_days + 1
    if n < needed:
        raise ValueError(
            f"series of length {n} leaves no training data "
            f"(need >= {needed} days)"
        )
    n_test, n_val = spec.test_days, spec.val_days
    return (
        series.slice(0, n - n_val - n_test),
        series.slice(n - n_val - n_test, n - n_test),
        series.slice(n - n_test, n),
    )


def screen_anomalies(
    series_list: list[CountSeries], jump: int = 50, neighborhood: int = 4
) -> dict[str, list[str]]:
    """Report sites with zero counts or implausible isolated jumps.

    A day is an implausible jump when its count differs by more than
    ``jump`` from every available count in the previous and next
    ``neighborhood`` days.  Returns {site name: [reasons]} for failing
    sites only; callers decide whether to exclude them.
    """
    report: dict[str, list[str]] = {}
    for s in series_list:
        reasons = []
        zero_days = int(np.sum(s.counts == 0))
        if zero_days:
            reasons.append(f"contains zero counts on {zero_days} day(s)")
        y = s.counts
        for t in range(len(s)):
            lo = max(0, t - neighborhood)
            neighbors = np.concatenate(
                [y[lo:t], y[t + 1 : t + 1 + neighborhood]]
            )
            if neighbors.size and np.all(np.abs(y[t] - neighbors) > jump):
                reasons.append(f"implausible jump on {s.dates[t]} (count {y[t]})")
        if reasons:
            report[s.site or "site"] = reasons
    return report


def counts_matrix(series_list: list[CountSeries]) -> np.ndarray:
    """Stack aligned site series into the (n_sites, T) model input."""
    return np.stack([s.counts for s in series_list])


def write_counts_csv(path, series_list: list[CountSeries]):
    """Write series back out in the single- or multi-site input format."""
    multi = len(series_list) > 1 or series_list[0].site is not None
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if multi:
            writer.writerow(["date", "site", "count"])
            for s in series_list:
                for d, c in zip(s.dates, s.counts):
                    writer.writerow([d.isoformat(), s.site, int(c)])
        else:
            writer.writerow(["date", "count"])
            s = series_list[0]
            for d, c in zip(s.dates, s.counts):
                writer.writerow([d.isoformat(), int(c)])


def write_forecast_csv(path, dates, mean, p2_5, p50, p97_5):
    """Per-day forecast summary table: date,mean,p2.5,p50,p97.5."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "mean", "p2.5", "p50", "p97.5"])
        for d, m, lo, med, hi in zip(dates, mean, p2_5, p50, p97_5):
            writer.writerow(
                [d.isoformat(), f"{m:.6f}", f"{lo:.6f}", f"{med:.6f}", f"{hi:.6f}"]
            )


def save_draws(path, param_names: list[str], draws_per_chain: list[np.ndarray]):
    """Persist posterior draws as CSV: chain,draw,<one column per parameter>."""
    with open(path, "w", newline="") as fh:
        fh.write("chain,draw," + ",".join(param_names) + "\n")
        for chain_idx, draws in enumerate(draws_per_chain):
            for i in range(draws.shape[0]):
                vals = ",".join(f"{x:.17g}" for x in draws[i])
                fh.write(f"{chain_idx},{i},{vals}\n")


def load_draws(path) -> tuple[list[str], list[np.ndarray]]:
    """Read a draw file back into (param names, per-chain draw matrices)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:2] != ["chain", "draw"]:
            raise ValueError(f"{path}: not a draw file (header {header[:2]})")
        names = header[2:]
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        raise ValueError(f"{path}: empty draw file")
    chains = []
    for chain_idx in np.unique(data[:, 0]):
        block = data[data[:, 0] == chain_idx]
        order = np.argsort(block[:, 1])
        chains.append(block[order, 2:])
    return names, chains
