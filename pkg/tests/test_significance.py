import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from rrforensics.correlation import GeoAggregate, geo_aggregates
from rrforensics.errors import UndefinedStatistic
from rrforensics.ingest import COMPUTERIZED
from rrforensics.rng import RngSpec, derive_seed, make_generator
from rrforensics.significance import (TestResult, ecdf, kolmogorov_q, ks_pvalue, ks_statistic,
                                      ks_two_sample, normal_fit, perm_test_corr, perm_test_rstar,
                                      permutation_correlations, skewness, subsample_mean_test,
                                      subset_mean_null)
from rrforensics.synth import SynthConfig, generate


# -- rng -----------------------------------------------------------------------

def test_same_seed_same_stream():
    a = make_generator(7, 1, 2).random(5)
    b = RngSpec(7, 1).generator(2).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, make_generator(7, 1, 3).random(5))


def test_philox_raw_output_pinned():
    # regression pin: the raw counter-based output must not drift between releases
    raw = make_generator(42, 0, 0).bit_generator.random_raw(3)
    assert raw.tolist() == [6790269272406677543, 8883013525489704428, 1293172066741714736]


def test_derive_seed_is_64_bit_and_stable():
    s = derive_seed(1, 2, 3)
    assert s == derive_seed(1, 2, 3) and 0 <= s < 2 ** 64 and s != derive_seed(1, 2, 4)


def test_rngspec_validation():
    with pytest.raises(ValueError):
        RngSpec(-1)
    with pytest.raises(ValueError):
        RngSpec(1, -2)


# -- KS ----------------------------------------------------------------------------

def test_identical_samples():
    res = ks_two_sample([0.3, 0.1, 0.7, 0.7], [0.7, 0.1, 0.3, 0.7])
    assert res.statistic == 0.0 and res.p_value == 1.0


def test_separated_samples():
    assert ks_statistic([1, 2, 3], [4, 5, 6]) == 1.0


def test_national_scale_pvalue_order():
    p = ks_pvalue(0.233, 2040, 2553)
    assert 2.6e-54 / 3 <= p <= 2.6e-54 * 3


def test_q_matches_kolmogorov_distribution():
    for lam in (0.25, 0.5, 0.83, 1.0, 1.36, 2.0, 3.0, 5.0, 7.8):
        assert kolmogorov_q(lam) == pytest.approx(stats.kstwobign.sf(lam), rel=1e-9)


def test_q_below_series_range_is_one():
    assert kolmogorov_q(0.0) == 1.0 and kolmogorov_q(0.1) == 1.0


def test_statistic_matches_scipy():
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.normal(size=rng.integers(1, 60))
        y = rng.normal(0.3, size=rng.integers(1, 60))
        assert ks_statistic(x, y) == pytest.approx(stats.ks_2samp(x, y).statistic, abs=1e-12)


def test_ecdf_steps():
    vals, f = ecdf([2, 1, 2, 3])
    assert vals.tolist() == [1, 2, 3] and f.tolist() == [0.25, 0.75, 1.0]


def test_ks_errors():
    with pytest.raises(ValueError):
        ks_two_sample([], [1.0])
    with pytest.raises(ValueError):
        ks_pvalue(1.5, 3, 3)


@settings(max_examples=100)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.lists(st.floats(-10, 10), min_size=1, max_size=30))
def test_ks_symmetric_and_bounded(xs, ys):
    a, b = ks_two_sample(xs, ys), ks_two_sample(ys, xs)
    assert 0.0 <= a.statistic <= 1.0
    assert (a.statistic, a.p_value) == (b.statistic, b.p_value)


@given(st.integers(1, 5000), st.integers(1, 5000))
def test_ks_p_monotone_in_d(n1, n2):
    ps = [ks_pvalue(d, n1, n2) for d in np.linspace(0, 1, 41)]
    assert all(b <= a for a, b in zip(ps, ps[1:]))


# -- permutation test ---------------------------------------------------------------

X5 = [1.0, 2.0, 3.0, 4.0, 5.0]
Y5 = [2.0, 1.0, 4.0, 3.0, 5.0]


def _exhaustive_tail(xs, ys):
    obs = np.corrcoef(xs, ys)[0, 1]
    rs = [np.corrcoef(xs, perm)[0, 1] for perm in itertools.permutations(ys)]
    return sum(r >= obs - 1e-9 for r in rs) / len(rs)


def test_permutation_matches_exhaustive_enumeration():
    exact = _exhaustive_tail(X5, Y5)
    t0 = time.perf_counter()
    res = perm_test_corr(X5, Y5, replicates=100_000, seed=11)
    assert time.perf_counter() - t0 < 5.0
    se = math.sqrt(exact * (1 - exact) / 100_000)
    assert abs(res.extras["p_empirical"] - exact) <= 3 * se
    assert res.statistic == pytest.approx(0.8, abs=1e-12)


def test_monotone_aggregates_give_tiny_tail():
    r98 = np.linspace(-0.5, 0.9, 12)
    aggs = [GeoAggregate(("S", f"T{i}"), "township", 5, 0.5, 3.0 * r + 1, float(r), 0.9, ())
            for i, r in enumerate(r98)]
    res = perm_test_rstar(aggs, replicates=50_000, seed=3)
    assert res.statistic == pytest.approx(1.0, abs=1e-12)
    # only the identity ordering reaches r = 1; 12! makes it vanishingly rare
    assert res.extras["p_empirical"] <= 1e-4
    # permutation r has sd 1/sqrt(n - 1), so r = 1 sits near z = sqrt(11)
    assert res.p_value == pytest.approx(stats.norm.sf(math.sqrt(11)), rel=0.05)


def test_worker_count_does_not_change_replicates():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=40), rng.normal(size=40)
    a = perm_test_corr(x, y, replicates=30_000, seed=9, workers=1)
    b = perm_test_corr(x, y, replicates=30_000, seed=9, workers=4)
    assert a.replicate_stats.tobytes() == b.replicate_stats.tobytes()
    assert a == b
    c = perm_test_corr(x, y, replicates=30_000, seed=9, stream=1)
    assert c.replicate_stats.tobytes() != a.replicate_stats.tobytes()


def test_identity_permutation_reproduces_observed():
    obs, _ = permutation_correlations(X5, Y5, 10, seed=0)
    assert obs == pytest.approx(np.corrcoef(X5, Y5)[0, 1], abs=1e-12)


def test_null_replicate_mean_near_zero():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=30), rng.normal(size=30)
    _, reps = permutation_correlations(x, y, 100_000, seed=4)
    # sd of r under permutation is 1/sqrt(n-1)
    assert abs(reps.mean()) < 5 / math.sqrt(29) / math.sqrt(100_000)


def test_empirical_p_roughly_uniform_under_null():
    master = np.random.default_rng(2024)
    hits = 0
    for run in range(200):
        x, y = master.normal(size=10), master.normal(size=10)
        res = perm_test_corr(x, y, replicates=2000, seed=run)
        hits += res.extras["p_empirical"] < 0.1
    assert 0.04 <= hits / 200 <= 0.18


def test_honest_townships_not_significant():
    aggs = geo_aggregates(generate(SynthConfig(seed=42)), "township", COMPUTERIZED).aggregates
    res = perm_test_rstar(aggs, replicates=100_000, seed=42)
    assert res.p_value > 0.05
    assert res.extras["p_empirical"] > 0.05


def test_forced_townships_significant():
    aggs = geo_aggregates(generate(SynthConfig(model="forced_linear", seed=42)), "township",
                          COMPUTERIZED).aggregates
    res = perm_test_rstar(aggs, replicates=100_000, seed=42)
    assert res.statistic > 0 and res.p_value < 0.01


def test_perm_errors():
    with pytest.raises(UndefinedStatistic):
        perm_test_corr([1, 2], [2, 1])
    with pytest.raises(UndefinedStatistic):
        perm_test_corr([1, 1, 1, 1], [1, 2, 3, 4])
    with pytest.raises(UndefinedStatistic):
        perm_test_rstar([])


# -- subsample mean ----------------------------------------------------------------

def test_subsample_exact_oracle():
    pop = [1, 2, 3, 4, 5, 6]
    means = [Fraction(a + b, 2) for a, b in itertools.combinations(pop, 2)]
    exact = sum(m >= Fraction(11, 2) for m in means) / Fraction(len(means))
    assert exact == Fraction(1, 15)
    t0 = time.perf_counter()
    res = subsample_mean_test(pop, 2, 5.5, replicates=100_000, seed=5)
    assert time.perf_counter() - t0 < 2.0
    se = math.sqrt(float(exact) * (1 - float(exact)) / 100_000)
    assert abs(res.p_value - float(exact)) <= 3 * se


def test_subsample_min_mean_gives_one():
    rng = np.random.default_rng(3)
    pop = rng.uniform(0, 1, 192)
    res = subsample_mean_test(pop, 26, float(pop.min()), replicates=5000, seed=1)
    assert res.p_value == 1.0


def test_subsample_larger_exhaustive_instance():
    pop = [0.1, 0.5, 0.2, 0.9, 0.4, 0.7, 0.3, 0.8]
    combos = list(itertools.combinations(pop, 3))
    obs = 0.6
    exact = sum(sum(c) / 3 >= obs - 1e-12 for c in combos) / len(combos)
    res = subsample_mean_test(pop, 3, obs, replicates=100_000, seed=8)
    assert abs(res.p_value - exact) <= 3 * math.sqrt(exact * (1 - exact) / 100_000)


def test_finite_population_se_matches_enumeration():
    pop = np.array([0.1, 0.5, 0.2, 0.9, 0.4, 0.7, 0.3])
    means = np.array([np.mean(c) for c in itertools.combinations(pop, 3)])
    mu, se = subset_mean_null(pop, 3)
    assert mu == pytest.approx(means.mean(), abs=1e-12)
    assert se == pytest.approx(means.std(), abs=1e-12)


def test_analytic_tail_on_synthetic_selected_population():
    # 192 values averaging 0.372; an audited mean of 0.540 sits far in the tail
    rng = np.random.default_rng(12)
    pop = np.clip(rng.gamma(4.0, 0.093, 192), 0.01, 1.5)
    pop = pop - pop.mean() + 0.372
    res = subsample_mean_test(pop, 26, 0.540, replicates=20_000, seed=2)
    mu, se = subset_mean_null(pop, 26)
    assert res.extras["subset_mean_se"] == pytest.approx(se)
    assert res.extras["p_analytic"] == pytest.approx(stats.norm.sf((0.540 - mu) / se), rel=1e-9)
    assert res.extras["p_analytic"] < 1e-5
    assert res.p_value <= 1e-3
    assert np.std(res.replicate_stats) == pytest.approx(se, rel=0.03)


def test_subsample_validation():
    with pytest.raises(ValueError):
        subsample_mean_test([1, 2], 3, 1.0)
    with pytest.raises(ValueError):
        subsample_mean_test([], 1, 1.0)


def test_subsample_worker_invariance():
    pop = np.arange(50) / 50
    a = subsample_mean_test(pop, 10, 0.6, replicates=20_000, seed=3, workers=1)
    b = subsample_mean_test(pop, 10, 0.6, replicates=20_000, seed=3, workers=3)
    assert a.replicate_stats.tobytes() == b.replicate_stats.tobytes()


# -- descriptive ----------------------------------------------------------------

def test_skewness_examples():
    assert skewness([1, 2, 3, 4, 5]) == pytest.approx(0.0, abs=1e-15)
    assert skewness([1, 1, 1, 10]) > 0


def test_skewness_hand_computed():
    xs = [Fraction(v) for v in (0, 9, 9, 9, 10)]
    n = len(xs)
    mean = sum(xs) / n
    m2 = sum((x - mean) ** 2 for x in xs) / n
    m3 = sum((x - mean) ** 3 for x in xs) / n
    g1 = float(m3) / float(m2) ** 1.5
    expected = g1 * math.sqrt(n * (n - 1)) / (n - 2)
    assert skewness([0, 9, 9, 9, 10]) == pytest.approx(expected, rel=1e-12)
    assert skewness([0, 9, 9, 9, 10]) == pytest.approx(stats.skew([0, 9, 9, 9, 10], bias=False), rel=1e-12)


def test_skewness_undefined():
    with pytest.raises(UndefinedStatistic):
        skewness([2, 2, 2])
    with pytest.raises(UndefinedStatistic):
        skewness([1, 2])


def test_normal_fit():
    assert normal_fit([1, 3]) == pytest.approx((2.0, math.sqrt(2)))
    with pytest.raises(UndefinedStatistic):
        normal_fit([0, 0, 0, 0])


def test_result_invariants():
    with pytest.raises(ValueError):
        TestResult("x", 0.0, 1.5, 3)
    with pytest.raises(ValueError):
        TestResult("x", 0.0, 0.5, 3, seed=1, replicates=0)
    d = perm_test_corr(X5, Y5, replicates=100, seed=1).to_dict()
    assert "replicate_stats" not in d and set(d["null_fit"]) == {"mu", "sigma"}
