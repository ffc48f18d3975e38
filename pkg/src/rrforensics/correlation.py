"""Pearson correlation diagnostics over voting centers.

Covers the global and stratified sí-vs-signature correlations, the moving
window correlation along the s axis, per-geography correlations against
1998 and their cross-unit coupling, and the median-split correlation of
opposition share against s.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import UndefinedStatistic
from .ingest import COMPUTERIZED, MANUAL, RR, CenterRecord, Dataset
from .metrics import E1998, compute_s, pct_opposition

CHANNEL_NAMES = {MANUAL: "manual", COMPUTERIZED: "computerized", None: "both"}
LEVELS = ("state", "county", "township")
MIN_UNIT_CENTERS = 3


@dataclass(frozen=True)
class Moments:
    n: int
    mean_x: float
    mean_y: float
    var_x: float
    var_y: float
    cov: float


def moments(xs, ys) -> Moments:
    """Sample means, variances and covariance (n - 1 denominators)."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    n = len(x)
    if n < 2:
        raise UndefinedStatistic(f"need at least 2 pairs, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    return Moments(n, float(x.mean()), float(y.mean()), float(dx @ dx / (n - 1)),
                   float(dy @ dy / (n - 1)), float(dx @ dy / (n - 1)))


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise UndefinedStatistic(f"need at least 2 pairs, got {len(x)}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedStatistic("correlation undefined for constant input")
    dx = x - x.mean()
    dy = y - y.mean()
    r = float(dx @ dy / math.sqrt(float(dx @ dx) * float(dy @ dy)))
    return min(1.0, max(-1.0, r))


@dataclass(frozen=True)
class LogPearson:
    r: float
    n: int
    excluded: tuple[int, ...] = ()


def pearson_log(xs, ys) -> LogPearson:
    """Pearson correlation of natural logs, dropping pairs with a non-positive value."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    keep = (x > 0) & (y > 0)
    excluded = tuple(int(i) for i in np.flatnonzero(~keep))
    r = pearson(np.log(x[keep]), np.log(y[keep]))
    return LogPearson(r, int(keep.sum()), excluded)


def _maybe_r(xs, ys, min_n: int = MIN_UNIT_CENTERS) -> float | None:
    if len(xs) < min_n:
        return None
    try:
        return pearson(xs, ys)
    except UndefinedStatistic:
        return None


def _defined_s(c: CenterRecord) -> float | None:
    rr = c.tally(RR)
    if rr is None or rr.total == 0:
        return None
    return c.signatures / rr.total


# -- sí votes vs signatures by channel and s stratum --------------------------

@dataclass(frozen=True)
class Cell:
    r: float | None
    n: int


def table1(ds: Dataset, split: float = 0.5) -> dict[tuple[str, str], Cell]:
    """Grid of r(signatures, sí) keyed by (channel, stratum).

    Channels are ``manual``, ``computerized`` and ``both``; strata are
    ``low`` (s <= split), ``high`` (s > split) and ``all``. Cells with fewer
    than three centers, or constant data, have ``r = None``.
    """
    buckets: dict[tuple[str, str], list[tuple[int, int]]] = {
        (ch, st): [] for ch in ("manual", "computerized", "both") for st in ("low", "high", "all")
    }
    for c in ds:
        s = _defined_s(c)
        if s is None:
            continue
        stratum = "low" if s <= split else "high"
        pair = (c.signatures, c.tally(RR).favorable)
        for ch in (CHANNEL_NAMES[c.channel], "both"):
            buckets[(ch, stratum)].append(pair)
            buckets[(ch, "all")].append(pair)
    grid = {}
    for key, pairs in buckets.items():
        if pairs:
            sig, si = zip(*pairs)
            grid[key] = Cell(_maybe_r(sig, si), len(pairs))
        else:
            grid[key] = Cell(None, 0)
    return grid


# -- moving-window correlation -------------------------------------------------

@dataclass(frozen=True)
class WindowPoint:
    start: int
    mean_s: float
    r: float | None


@dataclass(frozen=True)
class WindowSeries:
    channel: str
    window: int
    scale: str
    points: tuple[WindowPoint, ...]
    excluded: tuple[str, ...] = field(default=())

    def r_values(self) -> np.ndarray:
        return np.array([np.nan if p.r is None else p.r for p in self.points])

    def quartile_min(self, which: str = "low") -> float:
        """Smallest defined r among the lowest- or highest-s quarter of windows."""
        r = self.r_values()
        q = max(1, math.ceil(len(r) / 4))
        part = r[:q] if which == "low" else r[-q:]
        part = part[~np.isnan(part)]
        if part.size == 0:
            raise UndefinedStatistic(f"{self.channel}: no defined correlation in {which} quartile")
        return float(part.min())


def _window_r(x: np.ndarray, y: np.ndarray, window: int) -> np.ndarray:
    wx = sliding_window_view(x, window)
    wy = sliding_window_view(y, window)
    dx = wx - wx.mean(axis=1, keepdims=True)
    dy = wy - wy.mean(axis=1, keepdims=True)
    sxx = np.einsum("ij,ij->i", dx, dx)
    syy = np.einsum("ij,ij->i", dy, dy)
    sxy = np.einsum("ij,ij->i", dx, dy)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = sxy / np.sqrt(sxx * syy)
    # exactly constant windows have no correlation
    constant = (wx == wx[:, :1]).all(axis=1) | (wy == wy[:, :1]).all(axis=1)
    r[constant] = np.nan
    return np.clip(r, -1.0, 1.0)


def windowed_series(ds: Dataset, channel: str, window: int = 150, scale: str = "linear") -> WindowSeries:
    """Correlation of (signatures, sí) over a window sliding along sorted s.

    Centers of ``channel`` with defined s are sorted by (s, code). In log
    scale, centers with zero signatures or zero sí votes are dropped before
    windowing and listed in ``excluded``.
    """
    if scale not in ("linear", "log"):
        raise ValueError(f"scale must be linear or log, got {scale!r}")
    if window < 2:
        raise ValueError("window must be at least 2")
    name = CHANNEL_NAMES.get(channel, channel)
    rows = []
    excluded = []
    for c in ds:
        if channel is not None and c.channel != channel:
            continue
        s = _defined_s(c)
        if s is None:
            continue
        si = c.tally(RR).favorable
        if scale == "log" and (c.signatures <= 0 or si <= 0):
            excluded.append(c.code)
            continue
        rows.append((s, c.code, c.signatures, si))
    if len(rows) < window:
        raise UndefinedStatistic(
            f"channel {name}: {len(rows)} centers with defined s, fewer than the window of {window}")
    rows.sort(key=lambda t: (t[0], t[1]))
    s = np.array([t[0] for t in rows])
    x = np.array([t[2] for t in rows], dtype=float)
    y = np.array([t[3] for t in rows], dtype=float)
    if scale == "log":
        x, y = np.log(x), np.log(y)
    r = _window_r(x, y, window)
    mean_s = sliding_window_view(s, window).mean(axis=1)
    points = tuple(
        WindowPoint(i, float(ms), None if np.isnan(ri) else float(ri))
        for i, (ms, ri) in enumerate(zip(mean_s, r))
    )
    return WindowSeries(name, window, scale, points, tuple(excluded))


def windowed_correlation(ds: Dataset, window: int = 150, scale: str = "linear",
                         channels: Sequence[str] = (MANUAL, COMPUTERIZED)) -> dict[str, WindowSeries]:
    """One independently sorted series per channel; any short channel raises."""
    return {CHANNEL_NAMES[ch]: windowed_series(ds, ch, window, scale) for ch in channels}


def write_window_csv(series: Iterable[WindowSeries], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["channel", "scale", "window_start", "mean_s", "r"])
    for ser in series:
        for p in ser.points:
            w.writerow([ser.channel, ser.scale, p.start, repr(p.mean_s), "" if p.r is None else repr(p.r)])


# -- geographic units ---------------------------------------------------------

@dataclass(frozen=True)
class GeoAggregate:
    unit: tuple[str, ...]
    level: str
    n_centers: int
    mean_s: float
    delta_pct: float
    r_1998: float | None
    r_si: float | None
    codes: tuple[str, ...] = field(default=(), repr=False)

    @property
    def name(self) -> str:
        return "/".join(self.unit)


@dataclass(frozen=True)
class SkippedUnit:
    unit: tuple[str, ...]
    n_centers: int
    reason: str


@dataclass(frozen=True)
class GeoResult:
    level: str
    aggregates: tuple[GeoAggregate, ...]
    skipped: tuple[SkippedUnit, ...]


def geo_aggregates(ds: Dataset, level: str = "township", channel: str | None = None,
                   min_centers: int = MIN_UNIT_CENTERS) -> GeoResult:
    """Per-unit r(RR%, 1998%), r(signatures, sí), mean s and pooled change.

    Only centers with positive RR2004 and E1998 totals count. The unit's
    opposition change is computed from summed tallies. Units with fewer
    than ``min_centers`` such centers, or with an undefined r_1998, are
    listed in ``skipped``.
    """
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    units: dict[tuple[str, ...], list[CenterRecord]] = {}
    for c in ds:
        if channel is not None and c.channel != channel:
            continue
        rr, old = c.tally(RR), c.tally(E1998)
        if rr is None or old is None or rr.total == 0 or old.total == 0:
            continue
        units.setdefault(c.geo.at(level), []).append(c)

    aggs, skipped = [], []
    for unit in sorted(units):
        members = units[unit]
        n = len(members)
        if n < min_centers:
            skipped.append(SkippedUnit(unit, n, f"fewer than {min_centers} centers"))
            continue
        pct_rr = [pct_opposition(c, RR) for c in members]
        pct_98 = [pct_opposition(c, E1998) for c in members]
        r98 = _maybe_r(pct_rr, pct_98, min_centers)
        if r98 is None:
            skipped.append(SkippedUnit(unit, n, "r_1998 undefined (constant percentages)"))
            continue
        sig = [c.signatures for c in members]
        si = [c.tally(RR).favorable for c in members]
        fav_rr = sum(si)
        tot_rr = sum(c.tally(RR).total for c in members)
        fav_98 = sum(c.tally(E1998).favorable for c in members)
        tot_98 = sum(c.tally(E1998).total for c in members)
        aggs.append(GeoAggregate(
            unit=unit, level=level, n_centers=n,
            mean_s=float(np.mean([compute_s(c) for c in members])),
            delta_pct=100.0 * fav_rr / tot_rr - 100.0 * fav_98 / tot_98,
            r_1998=r98, r_si=_maybe_r(sig, si, min_centers),
            codes=tuple(c.code for c in members),
        ))
    return GeoResult(level, tuple(aggs), tuple(skipped))


def r_star(aggs: Sequence[GeoAggregate]) -> float:
    """Correlation across units between the opposition change and r_1998."""
    usable = [a for a in aggs if a.r_1998 is not None]
    if len(usable) < 3:
        raise UndefinedStatistic(f"r_star needs at least 3 units with defined r_1998, got {len(usable)}")
    return pearson([a.delta_pct for a in usable], [a.r_1998 for a in usable])


def write_geo_csv(aggs: Iterable[GeoAggregate], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["level", "unit", "n_centers", "mean_s", "delta_pct", "r_1998", "r_si"])
    for a in aggs:
        w.writerow([a.level, a.name, a.n_centers, repr(a.mean_s), repr(a.delta_pct),
                    "" if a.r_1998 is None else repr(a.r_1998), "" if a.r_si is None else repr(a.r_si)])


# -- median split --------------------------------------------------------------

@dataclass(frozen=True)
class SplitResult:
    event_id: str
    median_s: float
    r_low: float
    r_high: float
    n_low: int
    n_high: int

    @property
    def diff(self) -> float:
        return self.r_high - self.r_low


def median_split_rs(ds: Dataset, event_id: str = RR) -> SplitResult:
    """r(s, opposition %) for computerized centers below/above the median s.

    The median is taken over the centers that have both a defined s and a
    usable tally for ``event_id``, so it is recomputed per event.
    """
    pairs = []
    for c in ds:
        if not c.computerized:
            continue
        s = _defined_s(c)
        t = c.tally(event_id)
        if s is None or t is None or t.total == 0:
            continue
        pairs.append((s, 100.0 * t.favorable / t.total))
    if len(pairs) < 4:
        raise UndefinedStatistic(f"median split needs at least 4 centers, got {len(pairs)}")
    s = np.array([p[0] for p in pairs])
    opp = np.array([p[1] for p in pairs])
    med = float(np.median(s))
    low = s <= med
    high = ~low
    return SplitResult(event_id, med, pearson(s[low], opp[low]), pearson(s[high], opp[high]),
                       int(low.sum()), int(high.sum()))
