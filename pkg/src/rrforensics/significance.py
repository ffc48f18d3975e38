"""Significance tests: two-sample KS, correlation permutation test,
subsample-mean Monte Carlo, skewness and normal fitting.

Randomized tests run in fixed-size blocks of replicates. Block ``b`` draws
from the Philox stream ``(seed, stream, b)``, so the replicate statistics
are identical whatever the number of worker threads.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import IO

import numpy as np

from .errors import UndefinedStatistic
from .rng import make_generator

BLOCK = 4096
KS_SERIES_EPS = 1e-80
KS_MAX_TERMS = 1000
# replicate statistics within this distance of the observed value count as ties
TIE_TOL = 1e-12


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest class

    method: str
    statistic: float
    p_value: float
    n1: int
    n2: int = 0
    replicates: int = 0
    seed: int | None = None
    stream: int | None = None
    null_fit: tuple[float, float] | None = None
    extras: dict = field(default_factory=dict)
    replicate_stats: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value out of range: {self.p_value}")
        if self.seed is not None and self.replicates <= 0:
            raise ValueError("seeded result must have replicates > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("replicate_stats")
        if d["null_fit"] is not None:
            d["null_fit"] = {"mu": self.null_fit[0], "sigma": self.null_fit[1]}
        return d


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


# -- Kolmogorov-Smirnov --------------------------------------------------------

def kolmogorov_q(lam: float) -> float:
    """Q(lam) = 2 sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lam^2), the asymptotic KS tail."""
    if lam < 0.2:
        # Q(0.2) differs from 1 by far less than double precision resolves
        return 1.0
    a2 = -2.0 * lam * lam
    total = 0.0
    sign = 1.0
    for j in range(1, KS_MAX_TERMS + 1):
        term = 2.0 * sign * math.exp(a2 * j * j)
        total += term
        if abs(term) < KS_SERIES_EPS * abs(total):
            break
        sign = -sign
    return min(1.0, max(0.0, total))


def ks_pvalue(d: float, n1: int, n2: int) -> float:
    """Asymptotic two-sample p-value with the lam = D (sqrt(ne) + 0.12 + 0.11/sqrt(ne)) correction."""
    if n1 < 1 or n2 < 1:
        raise ValueError("both samples must be non-empty")
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"D must lie in [0, 1], got {d}")
    en = math.sqrt(n1 * n2 / (n1 + n2))
    return kolmogorov_q(d * (en + 0.12 + 0.11 / en))


def ecdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Distinct sorted values and the ECDF evaluated at each of them."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise ValueError("empty sample")
    uniq = np.unique(x)
    return uniq, np.searchsorted(x, uniq, side="right") / x.size


def ks_statistic(xs, ys) -> float:
    x = np.sort(np.asarray(xs, dtype=float))
    y = np.sort(np.asarray(ys, dtype=float))
    if x.size == 0 or y.size == 0:
        raise ValueError("empty sample")
    grid = np.concatenate([x, y])
    f1 = np.searchsorted(x, grid, side="right") / x.size
    f2 = np.searchsorted(y, grid, side="right") / y.size
    return float(np.max(np.abs(f1 - f2)))


def ks_two_sample(xs, ys) -> TestResult:
    d = ks_statistic(xs, ys)
    n1, n2 = len(xs), len(ys)
    return TestResult("ks_two_sample", d, ks_pvalue(d, n1, n2), n1, n2)


# -- replicate engine ------------------------------------------------------------

def _run_blocks(fn, replicates: int, seed: int, stream: int, workers: int) -> np.ndarray:
    nblocks = math.ceil(replicates / BLOCK)

    def one(b):
        count = min(BLOCK, replicates - b * BLOCK)
        return fn(make_generator(seed, stream, b), count)

    if workers > 1 and nblocks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, range(nblocks)))
    else:
        parts = [one(b) for b in range(nblocks)]
    return np.concatenate(parts)


def _shuffled_indices(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    idx = np.broadcast_to(np.arange(n), (count, n)).copy()
    # row-wise Fisher-Yates
    return rng.permuted(idx, axis=1)


def _standardize(v: np.ndarray) -> np.ndarray:
    d = v - v.mean()
    return d / math.sqrt(float(d @ d))


def permutation_correlations(xs, ys, replicates: int, seed: int, stream: int = 0,
                             workers: int = 1) -> tuple[float, np.ndarray]:
    """Correlation of xs with each of ``replicates`` random reorderings of ys.

    Returns the observed correlation (computed on the same standardized
    vectors, so the identity permutation reproduces it) and the replicates.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedStatistic("correlation undefined for constant input")
    xz, yz = _standardize(x), _standardize(y)
    observed = float(yz @ xz)

    def block(rng, count):
        return yz[_shuffled_indices(rng, count, len(yz))] @ xz

    return observed, _run_blocks(block, replicates, seed, stream, workers)


def normal_fit(xs) -> tuple[float, float]:
    x = np.asarray(xs, dtype=float)
    if x.size < 2:
        raise UndefinedStatistic("normal fit needs at least 2 values")
    sigma = float(np.std(x, ddof=1))
    if sigma == 0.0:
        raise UndefinedStatistic("normal fit: zero spread, sigma undefined")
    return float(np.mean(x)), sigma


def perm_test_corr(xs, ys, replicates: int = 100_000, seed: int = 0, stream: int = 0,
                   workers: int = 1, method: str = "perm_rstar") -> TestResult:
    """Upper-tail permutation test of the correlation between xs and ys.

    ``p_value`` is the upper tail of the observed correlation under a normal
    fitted to the replicate correlations. The empirical tail proportion
    (ties counted, no add-one) and both two-sided values are in ``extras``.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise UndefinedStatistic("permutation test needs at least 3 pairs of equal length")
    if replicates < 2:
        raise ValueError("replicates must be at least 2")
    observed, reps = permutation_correlations(x, y, replicates, seed, stream, workers)
    mu, sigma = normal_fit(reps)
    z = (observed - mu) / sigma
    upper = _normal_sf(z)
    lower = _normal_sf(-z)
    extras = {
        "p_empirical": float(np.mean(reps >= observed - TIE_TOL)),
        "p_two_sided": min(1.0, 2.0 * min(upper, lower)),
        "p_empirical_two_sided": float(np.mean(np.abs(reps - mu) >= abs(observed - mu) - TIE_TOL)),
        "z": z,
    }
    return TestResult(method, observed, upper, int(x.size), int(x.size), replicates, seed, stream,
                      (mu, sigma), extras, reps)


def perm_test_rstar(aggs, replicates: int = 100_000, seed: int = 0, stream: int = 0,
                    workers: int = 1) -> TestResult:
    """Permutation test of r_star: r_1998 values are shuffled against the opposition change."""
    usable = [a for a in aggs if a.r_1998 is not None]
    if len(usable) < 3:
        raise UndefinedStatistic(f"need at least 3 aggregates with defined r_1998, got {len(usable)}")
    return perm_test_corr([a.delta_pct for a in usable], [a.r_1998 for a in usable],
                          replicates, seed, stream, workers)


# -- subsample mean ----------------------------------------------------------------

def subset_mean_null(values, subset_size: int) -> tuple[float, float]:
    """Mean and standard deviation of the mean of a uniform random subset."""
    v = np.asarray(values, dtype=float)
    n = v.size
    var_pop = float(np.var(v))
    if n == 1:
        return float(v.mean()), 0.0
    return float(v.mean()), math.sqrt(var_pop / subset_size * (n - subset_size) / (n - 1))


def subsample_mean_test(values, subset_size: int = 26, observed_mean: float | None = None,
                        replicates: int = 100_000, seed: int = 0, stream: int = 0,
                        workers: int = 1) -> TestResult:
    """Chance that a random ``subset_size``-subset of ``values`` has mean >= ``observed_mean``.

    Each replicate shuffles the population and takes the first
    ``subset_size`` entries. ``extras['p_analytic']`` is the normal
    approximation from the finite-population variance of subset means,
    useful when the tail is far beyond what the replicates can resolve.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty population")
    if not 1 <= subset_size <= v.size:
        raise ValueError(f"subset_size {subset_size} must be between 1 and population size {v.size}")
    if observed_mean is None:
        raise ValueError("observed_mean is required")
    if replicates < 1:
        raise ValueError("replicates must be positive")

    def block(rng, count):
        idx = _shuffled_indices(rng, count, v.size)[:, :subset_size]
        return v[idx].mean(axis=1)

    reps = _run_blocks(block, replicates, seed, stream, workers)
    tol = TIE_TOL * max(1.0, abs(observed_mean))
    p = float(np.mean(reps >= observed_mean - tol))
    mu, se = subset_mean_null(v, subset_size)
    if se > 0:
        p_analytic = _normal_sf((observed_mean - mu) / se)
    else:
        p_analytic = 1.0 if observed_mean <= mu + tol else 0.0
    extras = {
        "p_analytic": p_analytic,
        "population_mean": mu,
        "subset_mean_se": se,
        "replicate_mean": float(reps.mean()),
    }
    return TestResult("subsample_mean", float(observed_mean), p, int(v.size), subset_size,
                      replicates, seed, stream, (mu, se) if se > 0 else None, extras, reps)


# -- descriptive -------------------------------------------------------------------

def skewness(xs) -> float:
    """Adjusted Fisher-Pearson skewness G1 = g1 * sqrt(n (n - 1)) / (n - 2)."""
    x = np.asarray(xs, dtype=float)
    n = x.size
    if n < 3:
        raise UndefinedStatistic("skewness needs at least 3 values")
    d = x - x.mean()
    m2 = float(np.mean(d ** 2))
    if m2 == 0.0:
        raise UndefinedStatistic("skewness undefined for a constant sample")
    m3 = float(np.mean(d ** 3))
    return m3 / m2 ** 1.5 * math.sqrt(n * (n - 1)) / (n - 2)


def write_replicate_histogram(result: TestResult, fh: IO[str], bins: int = 100) -> None:
    """Histogram of replicate statistics, with the fitted normal density per bin."""
    if result.replicate_stats is None:
        raise ValueError("result carries no replicate statistics")
    counts, edges = np.histogram(result.replicate_stats, bins=bins)
    width = edges[1] - edges[0]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["bin_left", "bin_right", "count", "density", "normal_density", "observed"])
    total = counts.sum()
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        mid = 0.5 * (lo + hi)
        nd = ""
        if result.null_fit is not None:
            mu, sd = result.null_fit
            nd = repr(math.exp(-0.5 * ((mid - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi)))
        w.writerow([repr(float(lo)), repr(float(hi)), int(c), repr(float(c / total / width)), nd,
                    repr(result.statistic)])

