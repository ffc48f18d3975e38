"""Synthetic center-level elections, honest or with forced-linear sí counts.

Honest model, per center: total votes T from a log-normal, s from a Beta
mixture (urban counties high s, rural counties low s), signatures
``round(s T)``. Signers vote sí with ``signer_si_prob``; non-signers vote sí
with a per-center propensity drawn around a township mean, so centers with
few signatures have a k that is mostly driven by non-signers and varies a
lot. The 1998 result comes from the same latent propensity plus township
and center drift.

Forced-linear model: the honest dataset is generated first, then the sí
count of every computerized center is overwritten with
``clamp(round(lam * signatures + N(0, noise_sigma)), 0, valid votes)``.
The honest sí count is kept as the EXITPOLL2004 tally, so the truth stays
available to the analyses.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .correlation import geo_aggregates, median_split_rs, windowed_series
from .errors import UndefinedStatistic
from .ingest import COMPUTERIZED, MANUAL, RR, CenterRecord, Dataset, EventTally, GeoPath
from .rng import derive_seed, make_generator
from .significance import perm_test_rstar

MODELS = ("honest", "forced_linear")
CENTER_BLOCK = 256


@dataclass(frozen=True)
class SynthConfig:
    n_centers: int = 1200
    model: str = "honest"
    # log-normal (mu, sigma) of total votes at computerized centers
    size_dist: tuple[float, float] = (7.0, 0.6)
    manual_size_scale: float = 0.3
    # Beta parameters of s: (urban component, rural component)
    s_dist: tuple[tuple[float, float], tuple[float, float]] = ((5.0, 4.0), (1.5, 12.0))
    urban_fraction: float = 0.5
    manual_fraction_rural: float = 0.6
    signer_si_prob: float = 0.95
    nonsigner_si_base: tuple[float, float] = (2.0, 5.0)
    township_concentration: float = 30.0
    lam: float = 1.0
    noise_sigma: float = 2.0
    township_drift_sigma: float = 0.05
    center_drift_sigma: float = 0.03
    manual_null_rate: float = 0.01
    hamlet_prob: tuple[float, float] = (0.4, 0.1)
    centers_per_township: int = 8
    townships_per_county: int = 4
    counties_per_state: int = 5
    n_selected: int = 192
    n_audited: int = 26
    n_cold: int = 150
    rep_growth: tuple[float, float] = (0.149, 0.05)
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.n_centers < 1:
            raise ValueError("n_centers must be at least 1")
        for name in ("signer_si_prob", "urban_fraction", "manual_fraction_rural", "manual_null_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        if any(not 0.0 <= p <= 1.0 for p in self.hamlet_prob):
            raise ValueError("hamlet_prob entries must be probabilities")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.noise_sigma < 0 or self.size_dist[1] < 0:
            raise ValueError("standard deviations must be non-negative")
        if min(self.centers_per_township, self.townships_per_county, self.counties_per_state) < 1:
            raise ValueError("geography sizes must be positive")
        for a, b in (*self.s_dist, self.nonsigner_si_base):
            if a <= 0 or b <= 0:
                raise ValueError("Beta parameters must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SynthReport:
    n_centers: int
    clamped_signers: int
    clamped_forced: int

    @property
    def clamp_rate(self) -> float:
        return (self.clamped_signers + self.clamped_forced) / self.n_centers


def _layout(cfg: SynthConfig, rng: np.random.Generator):
    """Assign centers to townships; draw county type and township latent values."""
    sizes = []
    remaining = cfg.n_centers
    while remaining > 0:
        k = min(remaining, 3 + int(rng.poisson(max(cfg.centers_per_township - 3, 0))))
        sizes.append(k)
        remaining -= k
    n_town = len(sizes)
    n_county = math.ceil(n_town / cfg.townships_per_county)
    urban_county = rng.random(n_county) < cfg.urban_fraction
    urban_idx = np.flatnonzero(urban_county)
    in20_county = np.zeros(n_county, dtype=bool)
    if urban_idx.size:
        chosen = rng.choice(urban_idx, size=max(1, urban_idx.size // 2), replace=False)
        in20_county[chosen] = True
    town_mean = rng.beta(*cfg.nonsigner_si_base, size=n_town)
    town_drift = rng.normal(0.0, cfg.township_drift_sigma, size=n_town)

    town_of = np.repeat(np.arange(n_town), sizes)
    county_of_town = np.arange(n_town) // cfg.townships_per_county
    return town_of, county_of_town, urban_county, in20_county, town_mean, town_drift


def _centers_block(cfg, rng, town, county_of_town, urban_county, town_mean, town_drift):
    n = town.size
    county = county_of_town[town]
    urban = urban_county[county]
    manual = ~urban & (rng.random(n) < cfg.manual_fraction_rural)

    mu, sigma = cfg.size_dist
    log_size = rng.normal(mu, sigma, size=n) + np.where(manual, math.log(cfg.manual_size_scale), 0.0)
    total = np.maximum(np.rint(np.exp(log_size)).astype(np.int64), 20)

    (ua, ub), (ra, rb) = cfg.s_dist
    s = np.where(urban, rng.beta(ua, ub, size=n), rng.beta(ra, rb, size=n))
    signatures = np.rint(s * total).astype(np.int64)

    null = np.where(manual, rng.binomial(total, cfg.manual_null_rate), 0)
    valid = total - null
    signer_voters = np.minimum(signatures, valid)
    clamped_signers = int(np.sum(signatures > valid))

    m = town_mean[town]
    kappa = cfg.township_concentration
    p_non = rng.beta(np.maximum(kappa * m, 1e-3), np.maximum(kappa * (1 - m), 1e-3))
    si_true = rng.binomial(signer_voters, cfg.signer_si_prob) + rng.binomial(valid - signer_voters, p_non)

    latent = (signer_voters * cfg.signer_si_prob + (valid - signer_voters) * p_non) / total
    share98 = np.clip(latent - town_drift[town] + rng.normal(0.0, cfg.center_drift_sigma, size=n), 0.01, 0.99)
    total98 = np.maximum(np.rint(total * rng.uniform(0.7, 0.9, size=n)).astype(np.int64), 1)
    fav98 = rng.binomial(total98, share98)

    si = si_true.copy()
    clamped_forced = 0
    if cfg.model == "forced_linear":
        forced = np.rint(cfg.lam * signatures + rng.normal(0.0, cfg.noise_sigma, size=n)).astype(np.int64)
        comp = ~manual
        clamped_forced = int(np.sum(comp & ((forced < 0) | (forced > valid))))
        si = np.where(comp, np.clip(forced, 0, valid), si_true)

    turnout = rng.uniform(0.6, 0.8, size=n)
    rep_apr = np.maximum(np.rint(total / turnout).astype(np.int64), total)
    g_mu, g_sd = cfg.rep_growth
    growth = np.maximum(rng.normal(g_mu, g_sd, size=n), 0.0)
    rep_jul = np.rint(rep_apr * (1.0 + growth)).astype(np.int64)

    h_manual, h_comp = cfg.hamlet_prob
    hamlet = ~urban & (rng.random(n) < np.where(manual, h_manual, h_comp))

    cols = dict(manual=manual, total=total, signatures=signatures, null=null, valid=valid,
                si=si, si_true=si_true, total98=total98, fav98=fav98, rep_apr=rep_apr,
                rep_jul=rep_jul, hamlet=hamlet, county=county)
    return cols, clamped_signers, clamped_forced


def generate_with_report(cfg: SynthConfig) -> tuple[Dataset, SynthReport]:
    geo_rng = make_generator(cfg.seed, 0)
    town_of, county_of_town, urban_county, in20_county, town_mean, town_drift = _layout(cfg, geo_rng)

    blocks = []
    clamped_s = clamped_f = 0
    for b, start in enumerate(range(0, cfg.n_centers, CENTER_BLOCK)):
        town = town_of[start:start + CENTER_BLOCK]
        cols, cs, cf = _centers_block(cfg, make_generator(cfg.seed, 1, b), town, county_of_town,
                                      urban_county, town_mean, town_drift)
        blocks.append(cols)
        clamped_s += cs
        clamped_f += cf
    col = {k: np.concatenate([blk[k] for blk in blocks]) for k in blocks[0]}

    comp = ~col["manual"]
    in20 = in20_county[col["county"]]
    flag_rng = make_generator(cfg.seed, 2)
    pool = np.flatnonzero(comp & in20)
    selected = np.zeros(cfg.n_centers, dtype=bool)
    audited = np.zeros(cfg.n_centers, dtype=bool)
    if pool.size:
        sel = flag_rng.choice(pool, size=min(cfg.n_selected, pool.size), replace=False)
        selected[sel] = True
        aud = flag_rng.choice(sel, size=min(cfg.n_audited, sel.size), replace=False)
        audited[aud] = True
    cold = np.zeros(cfg.n_centers, dtype=bool)
    comp_idx = np.flatnonzero(comp)
    if comp_idx.size:
        cold[flag_rng.choice(comp_idx, size=min(cfg.n_cold, comp_idx.size), replace=False)] = True

    centers = []
    cpt = cfg.counties_per_state
    for i in range(cfg.n_centers):
        t = int(town_of[i])
        c = int(county_of_town[t])
        st = c // cpt
        geo = GeoPath(f"State {st + 1:02d}", f"County {st + 1:02d}.{c % cpt + 1:02d}",
                      f"Township {st + 1:02d}.{c % cpt + 1:02d}.{t % cfg.townships_per_county + 1:02d}")
        si, valid, null = int(col["si"][i]), int(col["valid"][i]), int(col["null"][i])
        si_true = int(col["si_true"][i])
        tallies = {
            RR: EventTally(RR, si, valid - si, null),
            "E1998": EventTally("E1998", int(col["fav98"][i]), int(col["total98"][i] - col["fav98"][i]), 0),
            "EXITPOLL2004": EventTally("EXITPOLL2004", si_true, valid - si_true, null),
        }
        centers.append(CenterRecord(
            code=f"{st + 1:02d}.{c % cpt + 1:02d}.{i + 1:05d}",
            geo=geo,
            channel=MANUAL if col["manual"][i] else COMPUTERIZED,
            signatures=int(col["signatures"][i]),
            tallies=tallies,
            hamlet=bool(col["hamlet"][i]),
            rep_april2004=int(col["rep_apr"][i]),
            rep_july2004=int(col["rep_jul"][i]),
            in_20_counties=bool(in20[i]),
            selected_192=bool(selected[i]),
            audited_26=bool(audited[i]),
            cold_audited=bool(cold[i]),
        ))
    report = SynthReport(cfg.n_centers, clamped_s, clamped_f)
    prov = (f"synthetic {cfg.model} seed={cfg.seed} n={cfg.n_centers} "
            f"clamped={clamped_s + clamped_f}")
    return Dataset(tuple(centers), provenance=prov), report


def generate(cfg: SynthConfig) -> Dataset:
    return generate_with_report(cfg)[0]


# -- detectors -------------------------------------------------------------------

DETECTORS = ("windowed_flatness", "median_split_diff", "rstar_perm")


def windowed_flatness(ds: Dataset, window: int = 150, threshold: float = 0.9) -> tuple[bool, float]:
    """Flag when even the lowest-s windows of computerized centers stay highly correlated."""
    stat = windowed_series(ds, COMPUTERIZED, window).quartile_min("low")
    return stat > threshold, stat


def median_split_flag(ds: Dataset) -> tuple[bool, float]:
    """Flag when the above-median correlation does not exceed the below-median one."""
    diff = median_split_rs(ds, RR).diff
    return diff <= 0.0, diff


def rstar_flag(ds: Dataset, replicates: int = 2000, seed: int = 0, alpha: float = 0.05,
               level: str = "township") -> tuple[bool, float]:
    aggs = geo_aggregates(ds, level, COMPUTERIZED).aggregates
    p = perm_test_rstar(aggs, replicates=replicates, seed=seed).p_value
    return p < alpha, p


def run_detector(name: str, ds: Dataset, *, seed: int, window: int = 150, threshold: float = 0.9,
                 perm_replicates: int = 2000, alpha: float = 0.05) -> tuple[bool, float]:
    if name == "windowed_flatness":
        return windowed_flatness(ds, window, threshold)
    if name == "median_split_diff":
        return median_split_flag(ds)
    if name == "rstar_perm":
        return rstar_flag(ds, perm_replicates, seed, alpha)
    raise ValueError(f"unknown detector {name!r}")


@dataclass(frozen=True)
class PowerRow:
    cell: int
    model: str
    noise_sigma: float
    lam: float
    detector: str
    replicates: int
    flagged: int
    undefined: int

    @property
    def rate(self) -> float:
        return self.flagged / self.replicates if self.replicates else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rate"] = self.rate
        return d


def detector_power(cfg_grid: Sequence[SynthConfig], detectors: Iterable[str], replicates_per_cell: int,
                   seed: int, seeds: Sequence[int] | None = None, window: int = 150,
                   threshold: float = 0.9, perm_replicates: int = 2000,
                   alpha: float = 0.05) -> list[PowerRow]:
    """Fraction of synthetic datasets each detector flags, per config cell.

    Replicate ``r`` of cell ``c`` uses dataset seed ``seeds[r]`` when given,
    otherwise a seed derived from ``(seed, c, r)``. A detector that cannot
    be evaluated on a dataset counts as not flagged and as ``undefined``.
    """
    detectors = list(detectors)
    for d in detectors:
        if d not in DETECTORS:
            raise ValueError(f"unknown detector {d!r}")
    if not detectors:
        return []
    if seeds is not None and len(seeds) < replicates_per_cell:
        raise ValueError("fewer explicit seeds than replicates")
    rows = []
    for ci, cfg in enumerate(cfg_grid):
        flagged = dict.fromkeys(detectors, 0)
        undefined = dict.fromkeys(detectors, 0)
        for r in range(replicates_per_cell):
            ds_seed = seeds[r] if seeds is not None else derive_seed(seed, ci, r)
            ds = generate(replace(cfg, seed=ds_seed))
            for d in detectors:
                try:
                    hit, _ = run_detector(d, ds, seed=derive_seed(ds_seed, 99), window=window,
                                          threshold=threshold, perm_replicates=perm_replicates, alpha=alpha)
                except UndefinedStatistic:
                    undefined[d] += 1
                    continue
                flagged[d] += bool(hit)
        for d in detectors:
            rows.append(PowerRow(ci, cfg.model, cfg.noise_sigma, cfg.lam, d, replicates_per_cell,
                                 flagged[d], undefined[d]))
    return rows
