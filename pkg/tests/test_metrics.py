import pytest

from utils.metrics import (binomial_interval, clopper_pearson_upper, compare_ratio_trend, mean_stderr,
                           wilson_interval)


@pytest.mark.parametrize('k, n', [(1, 10), (50, 100), (999, 1000), (1000, 1000), (3, 1000000)])
def test_wilson_brackets(k, n):
    lo, hi = wilson_interval(k, n, 0.99)
    assert 0 <= lo <= k / n <= hi <= 1


def test_wilson_narrows():
    a, b = wilson_interval(100, 1000), wilson_interval(1000, 10000)
    assert b[1] - b[0] < a[1] - a[0]
    assert wilson_interval(100, 1000, 0.9)[1] < a[1]


def test_clopper_pearson():
    # zero exceedances: upper bound 1 - (1 - conf)^(1/n)
    assert clopper_pearson_upper(1000, 0.99) == pytest.approx(1 - 0.01 ** (1 / 1000), rel=1e-10)
    assert binomial_interval(0, 1000) == (0.0, clopper_pearson_upper(1000))
    assert binomial_interval(5, 1000) == wilson_interval(5, 1000)


def test_mean_stderr():
    assert mean_stderr([1.0, 3.0]) == (2.0, 1.0)
    assert mean_stderr([4.0]) == (4.0, 0.0)


def _rows(ratios, phat=1e-3):
    return [{'u': float(u), 'phat': phat, 'ratio': r} for u, r in zip(range(1, len(ratios) + 1), ratios)]


class TestRatioTrend:

    def test_pass(self):
        trend = compare_ratio_trend(_rows([1.3, 0.85, 1.05, 1.0]))
        assert trend.label == 'PASS' and trend.levels == (1.0, 2.0, 3.0, 4.0)
        assert 'PASS' in str(trend)

    def test_soft_fail(self):
        assert compare_ratio_trend(_rows([1.05, 1.3, 1.0])).label == 'SOFT-FAIL'

    def test_unordered_rows(self):
        assert compare_ratio_trend(_rows([1.3, 1.1, 1.0])[::-1]).label == 'PASS'

    def test_skips_levels_without_exceedances(self):
        rows = _rows([1.3, 1.1, 1.05]) + [{'u': 4.0, 'phat': 0.0, 'ratio': 0.0}, {'u': 5.0, 'phat': 1e-6}]
        trend = compare_ratio_trend(rows)
        assert trend.label == 'PASS' and trend.skipped == (4.0, 5.0)

    def test_too_few_levels(self):
        trend = compare_ratio_trend(_rows([1.3, 1.1]))
        assert trend.label == 'SOFT-FAIL' and 'fewer than 3' in trend.note
