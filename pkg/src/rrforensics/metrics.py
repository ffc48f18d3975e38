"""Per-center signature/vote ratios.

k is sí votes per signature, s is signatures per total vote (nulls
included), and 1/s is the largest k a center can reach. Opposition shares are
percentages of the event's total votes, nulls included in the denominator.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO

from .errors import UndefinedStatistic
from .ingest import EVENTS, RR, CenterRecord, Dataset

E1998 = "E1998"


def compute_s(center: CenterRecord) -> float:
    rr = center.tally(RR)
    if rr is None or rr.total == 0:
        raise UndefinedStatistic(f"center {center.code}: s undefined (no RR2004 votes)")
    return center.signatures / rr.total


def compute_k_max(s: float) -> float:
    if s <= 0:
        raise UndefinedStatistic("k_max undefined at s = 0")
    return 1.0 / s


def pct_opposition(center: CenterRecord, event_id: str = RR) -> float:
    t = center.tally(event_id)
    if t is None:
        raise UndefinedStatistic(f"center {center.code}: no {event_id} tally")
    if t.total == 0:
        raise UndefinedStatistic(f"center {center.code}: {event_id} has zero total votes")
    return 100.0 * t.favorable / t.total


def compute_k(center: CenterRecord, event_id: str = RR) -> float:
    """Favorable votes per signature.

    For the referendum this is sí / signatures. For any other event the
    event's favorable share replaces the sí share in (sí/total)/s, which
    gives the exit-poll and 1998 variants of k.
    """
    if center.signatures == 0:
        raise UndefinedStatistic(f"center {center.code}: k undefined (no signatures)")
    if event_id == RR:
        rr = center.tally(RR)
        if rr is None:
            raise UndefinedStatistic(f"center {center.code}: no {RR} tally")
        return rr.favorable / center.signatures
    return pct_opposition(center, event_id) / 100.0 / compute_s(center)


def compute_delta(center: CenterRecord, later: str = RR, earlier: str = E1998) -> float:
    """Opposition percentage change, ``later`` minus ``earlier``, in points."""
    return pct_opposition(center, later) - pct_opposition(center, earlier)


@dataclass(frozen=True)
class CenterMetrics:
    code: str
    channel: str
    s: float
    k: float | None
    k_max: float | None
    total_votes: int
    pct_opposition: dict[str, float] = field(default_factory=dict)
    delta_pct_1998_rr: float | None = None


@dataclass(frozen=True)
class Exclusion:
    code: str
    metric: str
    reason: str


def center_metrics(center: CenterRecord) -> tuple[CenterMetrics, list[Exclusion]]:
    """Metrics for one center; raises UndefinedStatistic when s itself is undefined."""
    s = compute_s(center)
    excluded = []
    try:
        k = compute_k(center)
        k_max = compute_k_max(s)
    except UndefinedStatistic as exc:
        k = k_max = None
        excluded.append(Exclusion(center.code, "k", str(exc)))
    pcts = {}
    for event in EVENTS:
        if event in center.tallies:
            try:
                pcts[event] = pct_opposition(center, event)
            except UndefinedStatistic as exc:
                excluded.append(Exclusion(center.code, f"pct_{event}", str(exc)))
    delta = None
    if RR in pcts and E1998 in pcts:
        delta = pcts[RR] - pcts[E1998]
    else:
        excluded.append(Exclusion(center.code, "delta", "no usable E1998 tally"))
    m = CenterMetrics(
        code=center.code, channel=center.channel, s=s, k=k, k_max=k_max,
        total_votes=center.tally(RR).total, pct_opposition=pcts, delta_pct_1998_rr=delta,
    )
    return m, excluded


def metrics_table(ds: Dataset) -> tuple[list[CenterMetrics], list[Exclusion]]:
    """Metrics for every center with a defined s, plus every exclusion made.

    Centers with zero RR2004 votes are dropped entirely (s undefined).
    Centers with zero signatures stay in the table with k left empty.
    """
    rows, exclusions = [], []
    for center in ds:
        try:
            m, excl = center_metrics(center)
        except UndefinedStatistic as exc:
            exclusions.append(Exclusion(center.code, "s", str(exc)))
            continue
        rows.append(m)
        exclusions.extend(excl)
    return rows, exclusions


METRICS_COLUMNS = ("code", "channel", "s", "k", "k_max", "pct_opp_rr", "pct_opp_1998", "delta")


def _cell(x):
    return "" if x is None else repr(float(x))


def write_metrics_csv(rows: list[CenterMetrics], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for m in rows:
        w.writerow([
            m.code, m.channel, _cell(m.s), _cell(m.k), _cell(m.k_max),
            _cell(m.pct_opposition.get(RR)), _cell(m.pct_opposition.get(E1998)),
            _cell(m.delta_pct_1998_rr),
        ])
