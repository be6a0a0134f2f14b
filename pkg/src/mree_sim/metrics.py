"""Market indices, inflation series, and fit diagnostics.

The headline metric is the relative growth of the mean publicly visible
estimate (lambda + v) against its day-0 value; the owner-side index
(lambda + u + rho) is reported alongside so either view of the market
can be charted. Everything here is a pure function over immutable
snapshots and safe to evaluate concurrently per day or per run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .repp import City, MarketState, ModelError, Money

SERIES_COLUMNS = ("day", "mree_index", "owner_index", "mree_inflation",
                  "owner_inflation", "closings", "mean_closing_price")
SUMMARY_COLUMNS = ("error_range", "neighborhood", "opt_out", "seed", "days",
                   "final_mree_inflation", "final_owner_inflation")


class SeriesRow(NamedTuple):
    day: int
    mree_index: Money
    owner_index: Money
    mree_inflation: float
    owner_inflation: float
    closings: int
    mean_closing_price: Money  # NaN on days without closings


def market_indices(state: MarketState, houses: City) -> tuple[Money, Money]:
    """(mean lambda + v, mean lambda + u + rho), in ascending house order.

    The first index reads only fields the estimator publishes; the second
    adds the owner-side values.
    """
    mree = float(np.mean(state.lam + houses.v))
    owner = float(np.mean(state.lam + houses.u + state.rho))
    return mree, owner


@dataclass
class InflationSeries:
    """Per-day market indices and inflation fractions for one run."""

    day: np.ndarray
    mree_index: np.ndarray
    owner_index: np.ndarray
    mree_inflation: np.ndarray
    owner_inflation: np.ndarray
    closings: np.ndarray
    mean_closing_price: np.ndarray

    def __len__(self) -> int:
        return self.day.shape[0]

    def row(self, k: int) -> SeriesRow:
        return SeriesRow(int(self.day[k]), float(self.mree_index[k]),
                         float(self.owner_index[k]), float(self.mree_inflation[k]),
                         float(self.owner_inflation[k]), int(self.closings[k]),
                         float(self.mean_closing_price[k]))

    @property
    def final(self) -> SeriesRow:
        return self.row(len(self) - 1)


class SeriesBuilder:
    """Accumulates one SeriesRow per day, day 0 being the initial state."""

    def __init__(self, houses: City, initial_state: MarketState):
        self.houses = houses
        mree0, owner0 = market_indices(initial_state, houses)
        if not (mree0 > 0 and owner0 > 0):
            raise ModelError("market indices must be positive at day 0")
        self.mree0 = mree0
        self.owner0 = owner0
        self.rows: list[SeriesRow] = [
            SeriesRow(0, mree0, owner0, 0.0, 0.0, 0, math.nan)]

    def record_day(self, day: int, state: MarketState,
                   closing_prices: Sequence[Money]) -> SeriesRow:
        mree, owner = market_indices(state, self.houses)
        count = len(closing_prices)
        mean_price = float(np.mean(closing_prices)) if count else math.nan
        row = SeriesRow(day, mree, owner, mree / self.mree0 - 1.0,
                        owner / self.owner0 - 1.0, count, mean_price)
        self.rows.append(row)
        return row

    def build(self) -> InflationSeries:
        cols = list(zip(*self.rows))
        return InflationSeries(
            day=np.array(cols[0], dtype=np.int64),
            mree_index=np.array(cols[1]),
            owner_index=np.array(cols[2]),
            mree_inflation=np.array(cols[3]),
            owner_inflation=np.array(cols[4]),
            closings=np.array(cols[5], dtype=np.int64),
            mean_closing_price=np.array(cols[6]),
        )


def linear_fit(points: Iterable[tuple[float, float]]) -> tuple[float, float, float]:
    """Ordinary least squares over (x, y) pairs: (slope, intercept, r2).

    Rejects fewer than 3 points or all-equal x. A constant y is a perfect
    fit of the zero-slope line, so its r2 is 1.
    """
    pts = list(points)
    if len(pts) < 3:
        raise ModelError(f"need at least 3 points, got {len(pts)}")
    x = np.array([p[0] for p in pts], dtype=np.float64)
    y = np.array([p[1] for p in pts], dtype=np.float64)
    var_x = np.var(x)
    if var_x == 0.0:
        raise ModelError("all x values equal; fit is degenerate")
    slope = float(np.cov(x, y, bias=True)[0, 1] / var_x)
    intercept = float(y.mean() - slope * x.mean())
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return slope, intercept, float(np.clip(r2, 0.0, 1.0))


def cell_lambda_growth(initial: MarketState, final: MarketState, side: int,
                       cell: int) -> np.ndarray:
    """Relative growth of mean lambda per key-grid cell block.

    Returns a 2-D array over cell blocks of ``cell`` x ``cell`` houses
    (edge blocks may be smaller), for inspecting where the city inflated
    without asserting anything about it.
    """
    lam0 = initial.lam.reshape(side, side)
    lam1 = final.lam.reshape(side, side)
    k = math.ceil(side / cell)
    out = np.empty((k, k))
    for by in range(k):
        for bx in range(k):
            sl = (slice(by * cell, min((by + 1) * cell, side)),
                  slice(bx * cell, min((bx + 1) * cell, side)))
            out[by, bx] = lam1[sl].mean() / lam0[sl].mean() - 1.0
    return out


# --------------------------------------------------------------------------
# CSV persistence


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def write_metadata(fh, metadata: dict[str, object]) -> None:
    for key, value in metadata.items():
        fh.write(f"#{key}={value}\n")


def read_metadata_lines(lines: list[str]) -> tuple[dict[str, str], int]:
    """Parse leading '#key=value' lines; returns (metadata, body offset)."""
    meta: dict[str, str] = {}
    k = 0
    for line in lines:
        if not line.startswith("#"):
            break
        key, _, value = line[1:].rstrip("\n").partition("=")
        meta[key] = value
        k += 1
    return meta, k


def write_series_csv(path, series: InflationSeries,
                     metadata: dict[str, object]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_metadata(fh, metadata)
        fh.write(",".join(SERIES_COLUMNS) + "\n")
        for k in range(len(series)):
            row = series.row(k)
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_series_csv(path) -> tuple[InflationSeries, dict[str, str]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    meta, offset = read_metadata_lines(lines)
    header = lines[offset].rstrip("\n").split(",")
    if tuple(header) != SERIES_COLUMNS:
        raise ModelError(f"unexpected series columns: {header}")
    rows = []
    for line in lines[offset + 1:]:
        line = line.rstrip("\n")
        if not line:
            continue
        d, mi, oi, minf, oinf, c, mp = line.split(",")
        rows.append(SeriesRow(int(d), float(mi), float(oi), float(minf),
                              float(oinf), int(c),
                              float(mp) if mp else math.nan))
    cols = list(zip(*rows))
    series = InflationSeries(
        day=np.array(cols[0], dtype=np.int64),
        mree_index=np.array(cols[1]),
        owner_index=np.array(cols[2]),
        mree_inflation=np.array(cols[3]),
        owner_inflation=np.array(cols[4]),
        closings=np.array(cols[5], dtype=np.int64),
        mean_closing_price=np.array(cols[6]),
    )
    return series, meta


class SweepRecord(NamedTuple):
    error_range: float
    neighborhood: int
    opt_out: float
    seed: int
    days: int
    final_mree_inflation: float
    final_owner_inflation: float


def write_summary_csv(path, records: Sequence[SweepRecord],
                      metadata: dict[str, object]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_metadata(fh, metadata)
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for rec in records:
            fh.write(",".join(_fmt(v) for v in rec) + "\n")


def read_summary_csv(path) -> tuple[list[SweepRecord], dict[str, str]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    meta, offset = read_metadata_lines(lines)
    header = lines[offset].rstrip("\n").split(",")
    if tuple(header) != SUMMARY_COLUMNS:
        raise ModelError(f"unexpected summary columns: {header}")
    records = []
    for line in lines[offset + 1:]:
        line = line.rstrip("\n")
        if not line:
            continue
        e, r, o, s, d, fm, fo = line.split(",")
        records.append(SweepRecord(float(e), int(r), float(o), int(s), int(d),
                                   float(fm), float(fo)))
    return records, meta
