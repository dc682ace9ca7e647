import math

import numpy as np
import pytest
from scipy import integrate, special, stats
from statsmodels.duration.survfunc import SurvfuncRight, survdiff

from survtraction.metrics import (Z_95, c_index, chi2_sf, gamma_q, km_estimate, log_rank,
                                  median_split)


def brute_c_index(scores, times, cens):
    num = den = 0.0
    n = len(scores)
    for i in range(n):
        for j in range(n):
            if i == j or cens[i] == 1 or not times[i] < times[j]:
                continue
            den += 1
            if scores[i] > scores[j]:
                num += 1
            elif scores[i] == scores[j]:
                num += 0.5
    return num / den


def random_instance(rng):
    n = int(rng.integers(2, 51))
    scores = rng.integers(0, 6, n).astype(float)  # many score ties
    times = rng.integers(1, 15, n).astype(float)  # many time ties
    cens = (rng.random(n) < 0.4).astype(int)
    cens[0] = 0
    times[0] = 0.5  # guarantees a comparable pair
    return scores, times, cens


def test_c_index_examples():
    s = np.array([0.9, 0.8, 0.2, 0.1])
    t = np.array([1.0, 2.0, 3.0, 4.0])
    assert c_index(s, t, np.zeros(4)) == 1.0
    assert c_index(-s, t, np.zeros(4)) == 0.0
    assert c_index(np.ones(4), t, np.zeros(4)) == 0.5


def test_c_index_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        s, t, c = random_instance(rng)
        assert c_index(s, t, c) == brute_c_index(s, t, c)


def test_c_index_antisymmetry():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = 30
        s = rng.permutation(n).astype(float)
        t = rng.exponential(1.0, n)
        c = (rng.random(n) < 0.3).astype(int)
        c[np.argmin(t)] = 0
        assert c_index(s, t, c) + c_index(-s, t, c) == pytest.approx(1.0, abs=1e-15)


def test_c_index_no_pairs():
    with pytest.raises(ValueError):
        c_index([1.0, 2.0], [1.0, 2.0], [1, 1])


def test_km_uncensored_example():
    km = km_estimate([1, 2, 3, 4], [0, 0, 0, 0])
    np.testing.assert_allclose(km.survival, [0.75, 0.5, 0.25, 0.0], rtol=0, atol=1e-15)


def test_km_all_censored():
    km = km_estimate([1, 2, 3], [1, 1, 1])
    assert np.all(km.survival == 1.0)


def test_km_hand_example():
    km = km_estimate([1, 2, 3], [0, 1, 0])
    np.testing.assert_allclose(km.survival, [2 / 3, 2 / 3, 0.0], rtol=0, atol=1e-15)


def test_km_equals_empirical_survival():
    rng = np.random.default_rng(2)
    for _ in range(100):
        t = rng.integers(1, 20, int(rng.integers(1, 40))).astype(float)
        km = km_estimate(t, np.zeros(t.size))
        ecdf = np.array([(t <= u).mean() for u in km.times])
        np.testing.assert_allclose(km.survival, 1.0 - ecdf, rtol=0, atol=1e-12)


def test_km_matches_statsmodels():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = 60
        t = np.round(rng.exponential(5.0, n), 1) + 0.1
        e = (rng.random(n) < 0.7).astype(int)
        e[0] = 1
        ref = SurvfuncRight(t, e)
        km = km_estimate(t, 1 - e)
        at_events = km.n_events > 0
        np.testing.assert_allclose(km.survival[at_events], ref.surv_prob, rtol=0, atol=1e-12)
        alive = ref.surv_prob > 0
        half = Z_95 * ref.surv_prob_se[alive] / ref.surv_prob[alive]
        np.testing.assert_allclose(km.ci_low[at_events][alive],
                                   ref.surv_prob[alive] * np.exp(-half), rtol=1e-10)


def test_km_band_brackets_estimate():
    rng = np.random.default_rng(4)
    for _ in range(50):
        t = rng.exponential(3.0, 40)
        c = (rng.random(40) < 0.4).astype(int)
        km = km_estimate(t, c)
        assert np.all(km.ci_low <= km.survival + 1e-15)
        assert np.all(km.survival <= km.ci_high + 1e-15)
        assert np.all((km.ci_low >= 0) & (km.ci_high <= 1))


def test_km_csv(tmp_path):
    km_estimate([1, 2, 2, 5], [0, 1, 0, 0]).to_csv(tmp_path / "km.csv")
    lines = (tmp_path / "km.csv").read_text().splitlines()
    assert lines[0] == "time,survival,ci_low,ci_high,n_at_risk"
    assert len(lines) == 4


def test_log_rank_identical_groups():
    t = [1.0, 2.0, 3.0, 5.0, 8.0]
    c = [0, 1, 0, 0, 1]
    res = log_rank(t, c, t, c)
    assert res.statistic == pytest.approx(0.0, abs=1e-15)
    assert res.p_value == pytest.approx(1.0, abs=1e-12)


def test_log_rank_symmetric_and_matches_statsmodels():
    rng = np.random.default_rng(5)
    for _ in range(30):
        ta, tb = rng.integers(1, 30, 25).astype(float), rng.integers(1, 30, 30).astype(float)
        ca, cb = (rng.random(25) < 0.3).astype(int), (rng.random(30) < 0.3).astype(int)
        ab, ba = log_rank(ta, ca, tb, cb), log_rank(tb, cb, ta, ca)
        assert ab.statistic == pytest.approx(ba.statistic, rel=1e-12)
        chi2, p = survdiff(np.r_[ta, tb], 1 - np.r_[ca, cb], np.r_[np.zeros(25), np.ones(30)])
        assert ab.statistic == pytest.approx(chi2, rel=1e-10)
        assert ab.p_value == pytest.approx(p, rel=1e-9, abs=1e-15)


def test_log_rank_hazard_ratio_three():
    rng = np.random.default_rng(6)
    ta, tb = rng.exponential(1.0, 100), rng.exponential(1.0 / 3.0, 100)
    ca = (rng.exponential(2.0, 100) < ta).astype(int)
    cb = (rng.exponential(2.0, 100) < tb).astype(int)
    assert log_rank(ta, ca, tb, cb).p_value < 0.01


def test_median_split_ties_go_low():
    high = median_split([1.0, 2.0, 2.0, 2.0, 5.0])
    assert high.tolist() == [False, False, False, False, True]


def test_chi2_examples():
    assert chi2_sf(0.0) == 1.0
    assert chi2_sf(3.841, 1) == pytest.approx(0.0500, abs=5e-4)
    assert chi2_sf(1e4) == 0.0 or chi2_sf(1e4) < 1e-300
    assert chi2_sf(math.inf) == 0.0
    assert isinstance(chi2_sf(np.float64(2.0)), float)


def test_chi2_against_density_integral():
    pdf = lambda u: math.exp(-u / 2) / math.sqrt(2 * math.pi * u)  # noqa: E731
    tail, _ = integrate.quad(pdf, 3.841, math.inf)
    assert chi2_sf(3.841) == pytest.approx(tail, rel=1e-9)


@pytest.mark.parametrize("a", [0.5, 1.0, 1.5, 2.0, 3.5, 10.0, 40.0])
def test_gamma_q_against_scipy(a):
    for x in np.concatenate([np.linspace(0.01, 3 * a + 10, 60), [a + 0.999, a + 1.0, a + 1.001]]):
        assert gamma_q(a, x) == pytest.approx(special.gammaincc(a, x), rel=1e-10, abs=1e-300)


def test_chi2_sf_against_scipy_many_dof():
    for dof in range(1, 8):
        for x in (0.1, 1.0, 3.841, 10.0, 40.0):
            assert chi2_sf(x, dof) == pytest.approx(stats.chi2.sf(x, dof), rel=1e-10)


def test_chi2_p_decreases_with_statistic():
    ps = [chi2_sf(x) for x in np.linspace(0, 30, 200)]
    assert all(b < a for a, b in zip(ps, ps[1:]))
