"""Censored-data evaluation: concordance, Kaplan-Meier and the log-rank test."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

Z_95 = 1.959963984540054


@dataclass
class KMCurve:
    times: np.ndarray
    survival: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_at_risk: np.ndarray
    n_events: np.ndarray

    @property
    def event_times(self) -> np.ndarray:
        return self.times

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "survival", "ci_low", "ci_high", "n_at_risk"])
            for row in zip(self.times, self.survival, self.ci_low, self.ci_high, self.n_at_risk):
                w.writerow([repr(float(v)) for v in row[:4]] + [int(row[4])])


@dataclass
class LogRankResult:
    statistic: float
    p_value: float
    dof: int = 1


def c_index(scores, times, censorship) -> float:
    """Harrell's concordance index.

    A pair (i, j) is comparable when ``t_i < t_j`` and subject i had the event
    (``censorship[i] == 0``). It is concordant when ``score_i > score_j``;
    tied scores count one half.
    """
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    c = np.asarray(censorship)
    if not (len(s) == len(t) == len(c)) or len(s) < 2:
        raise ValueError("c_index needs equal-length inputs with at least 2 subjects")
    comparable = (t[:, None] < t[None, :]) & (c[:, None] == 0)
    n_pairs = comparable.sum()
    if n_pairs == 0:
        raise ValueError("c_index: no comparable pairs")
    concordant = (comparable & (s[:, None] > s[None, :])).sum()
    tied = (comparable & (s[:, None] == s[None, :])).sum()
    return float((concordant + 0.5 * tied) / n_pairs)


def km_estimate(times, censorship, conf_z: float = Z_95) -> KMCurve:
    """Product-limit estimate at every distinct observed time.

    Confidence bands use Greenwood's variance on the log scale,
    ``S * exp(+-z * sqrt(sum d / (n (n - d))))``, clipped to [0, 1]. Once the
    estimate reaches zero the band collapses to zero.
    """
    t = np.asarray(times, dtype=np.float64)
    c = np.asarray(censorship)
    if t.size == 0:
        raise ValueError("km_estimate: no subjects")
    uniq = np.unique(t)
    events = c == 0
    n_at_risk = np.array([(t >= u).sum() for u in uniq])
    n_events = np.array([(events & (t == u)).sum() for u in uniq])
    survival = np.cumprod(1.0 - n_events / n_at_risk)

    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(n_events > 0, n_events / (n_at_risk * (n_at_risk - n_events)), 0.0)
    green = np.cumsum(terms)
    with np.errstate(over="ignore", invalid="ignore"):
        half = conf_z * np.sqrt(green)
        lo = survival * np.exp(-half)
        hi = np.minimum(survival * np.exp(half), 1.0)
    dead = survival <= 0
    lo[dead] = 0.0
    hi[dead] = 0.0
    return KMCurve(uniq, survival, lo, hi, n_at_risk, n_events)


def log_rank(times_a, cens_a, times_b, cens_b) -> LogRankResult:
    """Two-group log-rank test with hypergeometric variance."""
    ta, tb = np.asarray(times_a, dtype=np.float64), np.asarray(times_b, dtype=np.float64)
    ea, eb = np.asarray(cens_a) == 0, np.asarray(cens_b) == 0
    if ta.size == 0 or tb.size == 0:
        raise ValueError("log_rank: both groups must be non-empty")
    event_times = np.unique(np.concatenate([ta[ea], tb[eb]]))
    if event_times.size == 0:
        raise ValueError("log_rank: no events")
    o_minus_e = 0.0
    var = 0.0
    for u in event_times:
        n1 = (ta >= u).sum()
        n = n1 + (tb >= u).sum()
        d1 = (ea & (ta == u)).sum()
        d = d1 + (eb & (tb == u)).sum()
        o_minus_e += d1 - d * n1 / n
        if n > 1:
            var += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1)
    if var <= 0:
        raise ValueError("log_rank: zero variance")
    stat = o_minus_e ** 2 / var
    return LogRankResult(float(stat), chi2_sf(stat, 1))


def median_split(scores) -> np.ndarray:
    """True for the high-risk group: score strictly above the median."""
    s = np.asarray(scores, dtype=np.float64)
    return s > np.median(s)


# ---------------------------------------------------------------------------
# chi-square tail via the regularized incomplete gamma function

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000


def _gamma_p_series(a: float, x: float) -> float:
    term = total = 1.0 / a
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a: float, x: float) -> float:
    # Modified Lentz evaluation of the continued fraction for Q(a, x).
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x)."""
    if a <= 0 or x < 0:
        raise ValueError("gamma_q needs a > 0 and x >= 0")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gamma_p_series(a, x))
    return _gamma_q_contfrac(a, x)


def chi2_sf(x: float, dof: int = 1) -> float:
    if dof < 1:
        raise ValueError("dof must be at least 1")
    if x < 0:
        raise ValueError("chi2_sf needs x >= 0")
    return float(gamma_q(dof / 2.0, float(x) / 2.0))
