"""
Binomial confidence intervals and convergence diagnostics for Monte Carlo tail estimates
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats


def wilson_interval(k, n, confidence=0.99):
    """ Wilson score interval for a binomial proportion k/n.
    # Arguments
        k:  exceedance count
        n:  replication count
        confidence:  two-sided confidence level
    # Returns
        (lo, hi) clipped to [0, 1] and bracketing k/n
    """
    assert 0 <= k <= n and n > 0, f'need 0 <= k <= n, n > 0, got k={k}, n={n}'
    p = k / n
    z = stats.norm.ppf(1 - (1 - confidence) / 2)
    c = 1 + z ** 2 / n
    center = (p + z ** 2 / (2 * n)) / c
    half = z * math.sqrt(p * (1 - p) / n + z ** 2 / (4 * n ** 2)) / c
    return max(0.0, min(p, center - half)), min(1.0, max(p, center + half))


def clopper_pearson_upper(n, confidence=0.99):
    # Exact one-sided upper bound for a proportion with zero successes in n trials
    assert n > 0, 'need n > 0'
    return float(stats.beta.ppf(confidence, 1, n))


def binomial_interval(k, n, confidence=0.99):
    # Wilson interval, one-sided Clopper-Pearson [0, upper] when k = 0
    return (0.0, clopper_pearson_upper(n, confidence)) if k == 0 else wilson_interval(k, n, confidence)


def mean_stderr(x):
    # Sample mean and its standard error
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


@dataclass(frozen=True)
class RatioTrend:
    label: str  # PASS or SOFT-FAIL
    levels: tuple  # u levels used
    deviations: tuple  # |ratio - 1| per used level
    skipped: tuple = ()  # levels without exceedances or without an asymptotic value
    note: str = ''

    def __str__(self):
        s = ', '.join(f'u={u:g}: {d:.3g}' for u, d in zip(self.levels, self.deviations))
        return f'{self.label} |ratio-1| {s}' + (f' (skipped u={list(self.skipped)})' if self.skipped else '') + \
            (f' {self.note}' if self.note else '')


def compare_ratio_trend(rows, tol=1e-12):
    # Check that |phat/asymptotic - 1| is non-increasing over increasing u, a soft diagnostic only
    used, dev, skipped = [], [], []
    for r in sorted(rows, key=lambda r: r['u']):
        ratio = r.get('ratio')
        if not r.get('phat') or ratio is None or not math.isfinite(ratio):
            skipped.append(r['u'])
            continue
        used.append(r['u'])
        dev.append(abs(ratio - 1))
    if len(used) < 3:
        return RatioTrend('SOFT-FAIL', tuple(used), tuple(dev), tuple(skipped), 'fewer than 3 usable levels')
    ok = all(b <= a + tol for a, b in zip(dev, dev[1:]))
    return RatioTrend('PASS' if ok else 'SOFT-FAIL', tuple(used), tuple(dev), tuple(skipped))
