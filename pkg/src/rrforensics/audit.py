"""Hot- and cold-audit forensics and the in/out comparison of the counties
the hot-audit draw was restricted to.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import IO, Sequence

import numpy as np

from .correlation import pearson
from .errors import UndefinedStatistic
from .ingest import RR, CenterRecord, Dataset, Filter, stratify
from .metrics import E1998, compute_k, compute_s
from .significance import TestResult, ecdf, ks_two_sample, skewness, subsample_mean_test


def _pooled_pct(centers: Sequence[CenterRecord], event_id: str, side: str = "favorable") -> float | None:
    tallies = [c.tally(event_id) for c in centers]
    if any(t is None for t in tallies):
        return None
    total = sum(t.total for t in tallies)
    if total == 0:
        return None
    return 100.0 * sum(getattr(t, side) for t in tallies) / total


# -- hot audit --------------------------------------------------------------------

@dataclass(frozen=True)
class AuditSummary:
    n_selected: int
    n_audited: int
    mean_s_selected: float
    mean_s_audited: float
    skew_selected: float | None
    skew_audited: float | None
    mc: TestResult
    audited_pct_si: float | None
    audited_pct_no: float | None
    audited_delta_pct: float | None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mc"] = self.mc.to_dict()
        return d


def _skew_or_none(xs):
    try:
        return skewness(xs)
    except UndefinedStatistic:
        return None


def hot_audit_report(ds: Dataset, replicates: int = 100_000, seed: int = 0, stream: int = 0,
                     subset_size: int | None = None, workers: int = 1) -> AuditSummary:
    """Compare the s of the audited centers with the s of the selected pool.

    The Monte Carlo draws ``subset_size`` centers (default: the number
    actually audited) from the selected pool and reports how often their
    mean s reaches the audited mean. Pooled sí/no percentages and the
    1998-to-referendum change are computed from summed tallies of the
    audited centers.
    """
    selected = [c for c in ds if c.selected_192]
    audited = [c for c in selected if c.audited_26]
    if not selected or not audited:
        raise UndefinedStatistic("no selected or no audited centers flagged")
    s_sel = []
    for c in selected:
        try:
            s_sel.append(compute_s(c))
        except UndefinedStatistic:
            continue
    s_aud = [compute_s(c) for c in audited
             if c.tally(RR) is not None and c.tally(RR).total > 0]
    if not s_sel or not s_aud:
        raise UndefinedStatistic("no defined s among selected or audited centers")
    k = subset_size if subset_size is not None else len(s_aud)
    mean_aud = float(np.mean(s_aud))
    mc = subsample_mean_test(s_sel, k, mean_aud, replicates, seed, stream, workers)
    pct_si = _pooled_pct(audited, RR)
    pct_98 = _pooled_pct(audited, E1998)
    return AuditSummary(
        n_selected=len(selected), n_audited=len(audited),
        mean_s_selected=float(np.mean(s_sel)), mean_s_audited=mean_aud,
        skew_selected=_skew_or_none(s_sel), skew_audited=_skew_or_none(s_aud), mc=mc,
        audited_pct_si=pct_si, audited_pct_no=_pooled_pct(audited, RR, "unfavorable"),
        audited_delta_pct=None if pct_si is None or pct_98 is None else pct_si - pct_98,
    )


# -- stem and leaf ------------------------------------------------------------------

def _hundredths(x: float) -> int:
    if x < 0 or math.isnan(x):
        raise ValueError(f"stem-and-leaf values must be non-negative, got {x}")
    # the rounding guard keeps 0.3 from landing in stem 2 through 0.29999999999999998
    return math.floor(round(x * 100.0, 9))


def _stems(xs) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for x in xs:
        h = _hundredths(float(x))
        out.setdefault(h // 10, []).append(h % 10)
    for leaves in out.values():
        leaves.sort()
    return out


def stem_and_leaf(xs, back_to_back_with=None) -> str:
    """Render values as ``stem | leaves`` with stem unit 0.1 and leaf unit 0.01.

    With ``back_to_back_with``, that sample is drawn on the left with its
    leaves mirrored (largest leaf farthest from the stem) and ``xs`` on the
    right: ``leaves | stem | leaves``. Every stem between the smallest and
    largest present is printed, empty or not.
    """
    right = _stems(xs)
    left = _stems(back_to_back_with) if back_to_back_with is not None else None
    keys = set(right) | (set(left) if left else set())
    if not keys:
        return ""
    stems = range(min(keys), max(keys) + 1)
    sw = max(len(str(s)) for s in stems)
    lines = []
    if left is None:
        for s in stems:
            leaves = " ".join(map(str, right.get(s, [])))
            lines.append(f"{s:>{sw}} | {leaves}".rstrip())
    else:
        lefts = {s: " ".join(map(str, reversed(left.get(s, [])))) for s in stems}
        lw = max(len(v) for v in lefts.values())
        for s in stems:
            leaves = " ".join(map(str, right.get(s, [])))
            lines.append(f"{lefts[s]:>{lw}} | {s:>{sw}} | {leaves}".rstrip())
    return "\n".join(lines) + "\n"


# -- 20-county comparison -------------------------------------------------------------

@dataclass(frozen=True)
class GroupStats:
    mean_k: float
    mean_s: float
    n: int


@dataclass(frozen=True)
class GroupMeans:
    event_id: str
    group_in20: GroupStats
    group_out: GroupStats

    @property
    def k_excess_pct(self) -> float:
        """How much larger the in-20 mean k is than the outside mean k, in percent."""
        return 100.0 * (self.group_in20.mean_k / self.group_out.mean_k - 1.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_excess_pct"] = self.k_excess_pct
        return d


@dataclass(frozen=True)
class DistComparison:
    variable: str
    bin_edges: np.ndarray
    histogram_in: np.ndarray
    histogram_out: np.ndarray
    ecdf_in: tuple[np.ndarray, np.ndarray]
    ecdf_out: tuple[np.ndarray, np.ndarray]
    ks: TestResult

    def to_dict(self) -> dict:
        return {
            "variable": self.variable,
            "bin_edges": self.bin_edges.tolist(),
            "histogram_in": self.histogram_in.tolist(),
            "histogram_out": self.histogram_out.tolist(),
            "ecdf_in": {"x": self.ecdf_in[0].tolist(), "F": self.ecdf_in[1].tolist()},
            "ecdf_out": {"x": self.ecdf_out[0].tolist(), "F": self.ecdf_out[1].tolist()},
            "ks": self.ks.to_dict(),
        }


def shared_bins(values_a, values_b) -> np.ndarray:
    """Freedman-Diaconis bin edges on the pooled sample (one bin if the IQR is zero)."""
    pooled = np.concatenate([np.asarray(values_a, float), np.asarray(values_b, float)])
    return np.histogram_bin_edges(pooled, bins="fd")


def county20_comparison(ds: Dataset, event_id: str = RR, variable: str = "k") -> tuple[DistComparison, GroupMeans]:
    """Distribution and mean comparison of computerized centers inside vs outside the 20 counties.

    Centers count when both k and s are defined for ``event_id``; k for a
    non-referendum event uses that event's favorable share over s.
    """
    if variable not in ("k", "s"):
        raise ValueError("variable must be 'k' or 's'")
    groups: dict[bool, list[tuple[float, float]]] = {True: [], False: []}
    for c in ds:
        if not c.computerized:
            continue
        t = c.tally(event_id)
        if t is None or t.total == 0:
            continue
        try:
            groups[c.in_20_counties].append((compute_k(c, event_id), compute_s(c)))
        except UndefinedStatistic:
            continue
    if not groups[True] or not groups[False]:
        raise UndefinedStatistic("one of the in/out groups is empty")
    arr = {g: np.array(v) for g, v in groups.items()}
    col = 0 if variable == "k" else 1
    v_in, v_out = arr[True][:, col], arr[False][:, col]
    edges = shared_bins(v_in, v_out)
    h_in, _ = np.histogram(v_in, bins=edges, density=True)
    h_out, _ = np.histogram(v_out, bins=edges, density=True)
    dist = DistComparison(variable, edges, h_in, h_out, ecdf(v_in), ecdf(v_out), ks_two_sample(v_in, v_out))
    means = GroupMeans(
        event_id,
        GroupStats(float(arr[True][:, 0].mean()), float(arr[True][:, 1].mean()), len(v_in)),
        GroupStats(float(arr[False][:, 0].mean()), float(arr[False][:, 1].mean()), len(v_out)),
    )
    return dist, means


def write_dist_csv(dist: DistComparison, fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["kind", "group", "x_left", "x_right", "value"])
    edges = dist.bin_edges
    for group, h in (("in20", dist.histogram_in), ("out", dist.histogram_out)):
        for lo, hi, v in zip(edges[:-1], edges[1:], h):
            w.writerow(["pdf", group, repr(float(lo)), repr(float(hi)), repr(float(v))])
    for group, (x, f) in (("in20", dist.ecdf_in), ("out", dist.ecdf_out)):
        for xi, fi in zip(x, f):
            w.writerow(["cdf", group, repr(float(xi)), "", repr(float(fi))])


# -- cold audit ------------------------------------------------------------------------

@dataclass(frozen=True)
class ColdAudit:
    r_universe: float
    r_sample: float
    n_universe: int
    n_sample: int
    n_common_with_hot: int


def _sig_si(centers) -> tuple[list[int], list[int]]:
    pairs = [(c.signatures, c.tally(RR).favorable) for c in centers if c.tally(RR) is not None]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def cold_audit_compare(ds: Dataset) -> ColdAudit:
    """r(signatures, sí) over all computerized centers and over the cold-audited ones."""
    universe = [c for c in ds if c.computerized]
    sample = [c for c in universe if c.cold_audited]
    if not sample:
        raise UndefinedStatistic("no cold-audited computerized centers flagged")
    ux, uy = _sig_si(universe)
    sx, sy = _sig_si(sample)
    common = sum(1 for c in ds if c.selected_192 and c.cold_audited)
    return ColdAudit(pearson(ux, uy), pearson(sx, sy), len(ux), len(sx), common)


# -- REP variation ---------------------------------------------------------------------

@dataclass(frozen=True)
class RepPoint:
    code: str
    delta_pct: float
    rep_growth: float
    selected: bool


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    n: int

    def residuals(self, x, y) -> np.ndarray:
        return np.asarray(y, float) - (self.intercept + self.slope * np.asarray(x, float))


def least_squares_line(xs, ys) -> LineFit:
    """Ordinary least squares y = intercept + slope * x, from centered sums."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise UndefinedStatistic("line fit needs at least 2 points")
    mx, my = x.mean(), y.mean()
    sxx = float(((x - mx) ** 2).sum())
    if sxx == 0.0:
        raise UndefinedStatistic("line fit undefined: all x values equal")
    slope = float(((x - mx) * (y - my)).sum()) / sxx
    return LineFit(slope, float(my - slope * mx), int(x.size))


@dataclass(frozen=True)
class RepVariation:
    points: tuple[RepPoint, ...]
    fit: LineFit | None
    excluded: tuple[tuple[str, str], ...] = field(default=())

    def rectangle(self, delta_range: tuple[float, float],
                  growth_range: tuple[float, float]) -> tuple[list[str], bool]:
        """Codes inside the closed box and whether any selected center is among them."""
        (d0, d1), (g0, g1) = sorted(delta_range), sorted(growth_range)
        inside = [p for p in self.points if d0 <= p.delta_pct <= d1 and g0 <= p.rep_growth <= g1]
        return [p.code for p in inside], any(p.selected for p in inside)


def rep_variation(ds: Dataset, channel: str | None = "C", group: Filter | None = None) -> RepVariation:
    """Registry growth April->July against the 1998-to-referendum opposition change."""
    centers = stratify(ds, group) if group is not None else ds
    points, excluded = [], []
    for c in centers:
        if channel is not None and c.channel != channel:
            continue
        if c.rep_april2004 == 0:
            excluded.append((c.code, "rep_apr is zero"))
            continue
        rr, old = c.tally(RR), c.tally(E1998)
        if rr is None or old is None or rr.total == 0 or old.total == 0:
            excluded.append((c.code, "no usable RR2004/E1998 tallies"))
            continue
        delta = 100.0 * rr.favorable / rr.total - 100.0 * old.favorable / old.total
        growth = (c.rep_july2004 - c.rep_april2004) / c.rep_april2004
        points.append(RepPoint(c.code, delta, growth, c.selected_192))
    try:
        fit = least_squares_line([p.delta_pct for p in points], [p.rep_growth for p in points])
    except UndefinedStatistic:
        fit = None
    return RepVariation(tuple(points), fit, tuple(excluded))


def write_rep_csv(rv: RepVariation, fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["code", "delta_pct", "rep_growth", "sel192"])
    for p in rv.points:
        w.writerow([p.code, repr(p.delta_pct), repr(p.rep_growth), int(p.selected)])
