import math

import numpy as np
import pytest

from utils import ConfigError, HypothesisError
from utils.constants import (ConstantEstimate, ConstantSpec, ConstantsRegistry, _snap_step, alpha2_quadrature,
                             closed_form_H1_window, closed_form_H2_window, closed_form_P21, closed_form_P21_two_sided,
                             closed_form_P21_window, estimate_windowed, intercept_weights, pickands_limit,
                             piterbarg_limit, richardson, sample_functionals, window_sups)
from utils.samplers import SampleGrid, SeedSpec, sample_fbm

SQRT_PI = math.sqrt(math.pi)


class TestClosedForms:

    def test_P21(self):
        printed, derived = closed_form_P21(1.0)
        assert printed == pytest.approx(1.02676, abs=1e-5)
        assert derived == pytest.approx(1.19964, abs=1e-5)
        with pytest.raises(ConfigError):
            closed_form_P21(0.0)

    def test_P21_window_limits(self):
        assert closed_form_P21_window(1.5, 0.0) == pytest.approx(1.0, abs=1e-14)
        assert closed_form_P21_window(1.5, 50.0) == pytest.approx(closed_form_P21(1.5)[1], rel=1e-12)
        assert closed_form_P21_two_sided(1.0) > closed_form_P21(1.0)[1]

    def test_H_windows(self):
        assert closed_form_H1_window(2.0) == pytest.approx(3.84932, abs=1e-5)
        assert closed_form_H1_window(0.0) == 1.0
        assert closed_form_H2_window(1.0) == pytest.approx(1 + 1 / SQRT_PI)

    @pytest.mark.parametrize('S', [0.5, 1.0, 3.0])
    def test_quadrature_H2(self, S):
        assert alpha2_quadrature(S=S) == pytest.approx(closed_form_H2_window(S), rel=1e-5)

    @pytest.mark.parametrize('d, S', [(1.0, 1.0), (1.5, 2.0), (3.0, 0.5)])
    def test_quadrature_P21(self, d, S):
        assert alpha2_quadrature(d, 1.0, S) == pytest.approx(closed_form_P21_window(d, S), rel=1e-4)

    def test_quadrature_two_sided(self):
        assert alpha2_quadrature(1.0, 1.0, 30.0, two_sided=True) == pytest.approx(closed_form_P21_two_sided(1.0),
                                                                                  rel=1e-4)


class TestWindowed:

    def test_H2_window(self):
        est = estimate_windowed(ConstantSpec('pickands', 2.0, S=1.0, delta=1 / 256, nsim=20000))
        assert abs(est.value - closed_form_H2_window(1.0)) < 5 * est.stderr + 0.005
        assert (est.S, est.nsim) == (1.0, 20000)

    def test_H1_window_biased_low(self):
        # discrete sup on a delta-grid underestimates the continuous window functional
        est = estimate_windowed(ConstantSpec('pickands', 1.0, S=2.0, delta=1 / 64, nsim=20000))
        assert est.value < closed_form_H1_window(2.0) + 3 * est.stderr
        assert est.value > 0.8 * closed_form_H1_window(2.0)

    def test_P21_window(self):
        est = estimate_windowed(ConstantSpec('piterbarg', 2.0, 1.0, 1.0, S=1.5, delta=1.5 / 256, nsim=20000))
        assert abs(est.value - closed_form_P21_window(1.0, 1.5)) < 5 * est.stderr + 0.01

    def test_two_sided(self):
        spec = ConstantSpec('piterbarg2', 2.0, 1.0, 1.0, S=1.0, delta=1 / 128, nsim=20000)
        assert spec.two_sided
        est = estimate_windowed(spec)
        assert abs(est.value - alpha2_quadrature(1.0, 1.0, 1.0, two_sided=True)) < 5 * est.stderr + 0.01

    def test_empty_window(self):
        est = estimate_windowed(ConstantSpec('pickands', 1.5, S=0.0))
        assert (est.value, est.stderr) == (1.0, 0.0)

    def test_window_not_multiple_of_delta(self):
        with pytest.raises(ConfigError):
            estimate_windowed(ConstantSpec('pickands', 1.0, S=1.0, delta=0.3, nsim=100))

    def test_deterministic(self):
        spec = ConstantSpec('pickands', 1.0, S=1.0, delta=1 / 32, nsim=3000, seeds=SeedSpec(4, stream=1, block=512))
        assert estimate_windowed(spec).value == estimate_windowed(spec).value

    def test_stderr(self):
        spec = ConstantSpec('pickands', 1.0, S=1.0, delta=1 / 32, nsim=2000)
        y = sample_functionals(spec, [1.0], [1], 1 / 32)[:, 0, 0]
        est = estimate_windowed(spec)
        assert est.value == pytest.approx(y.mean(), rel=1e-12)
        assert est.stderr == pytest.approx(y.std(ddof=1) / math.sqrt(y.size), rel=1e-12)

    def test_H2_long_window_biased_low(self):
        # the window sup is Z^2 / 2, E exp(Z^2 / 2) on [0, 20] is carried by |Z| up to 28, far beyond any sample
        est = estimate_windowed(ConstantSpec('pickands', 2.0, S=20.0, delta=20 / 1024, nsim=20000))
        assert est.value < 0.5 * closed_form_H2_window(20.0)

    @pytest.mark.parametrize('kw', [dict(family='mills'), dict(alpha=2.5), dict(family='piterbarg', d=0.0),
                                    dict(S=1.0, delta=2.0), dict(S=-1.0), dict(nsim=1), dict(beta=-1.0)])
    def test_invalid_spec(self, kw):
        with pytest.raises(ConfigError):
            ConstantSpec(**kw)

    def test_pickands_ignores_drift(self):
        assert ConstantSpec('pickands', 1.0, d=5.0).d == 0.0
        assert ConstantSpec('piterbarg', 1.0, d=1.0).beta == 0.5


class TestLimits:

    def test_pickands_alpha2_intercept(self):
        est = pickands_limit(2.0, s_ladder=(0.25, 0.5, 1.0), delta_divisors=(64, 256), nsim=100000,
                             method='intercept')
        assert 'INTERCEPT' in est.flags
        assert est.value == pytest.approx(1 / SQRT_PI, rel=0.1)
        assert est.diagnostics['windows'] == [0.25, 0.5, 1.0]
        assert len(est.diagnostics['values']) == 3

    def test_pickands_largest(self):
        est = pickands_limit(1.0, s_ladder=(1, 2, 4), delta_divisors=(16, 64), nsim=2000)
        assert est.S == 4 and est.delta == pytest.approx(4 / 64)
        assert 'INTERCEPT' not in est.flags
        assert est.value == pytest.approx(est.diagnostics['largest'])

    def test_P21_limit(self):
        est = piterbarg_limit(2.0, 1.0, 1.0, s_ladder=(0.5, 1.0, 1.5), delta_divisors=(64, 256), nsim=20000)
        assert 'EXPERIMENTAL' not in est.flags
        assert abs(est.value - closed_form_P21_window(1.0, 1.5)) < 5 * est.stderr + 0.01
        values = np.array(est.diagnostics['values'])[:, -1]
        assert np.all(np.diff(values) >= 0)  # nested windows on common random numbers

    def test_experimental(self):
        est = piterbarg_limit(1.0, 0.7, 1.0, s_ladder=(0.5, 1.0, 2.0), delta_divisors=(16, 64), nsim=200)
        assert est.flags[0] == 'EXPERIMENTAL'

    def test_extrapolated(self):
        est = pickands_limit(1.0, s_ladder=(1, 2, 4), delta_divisors=(16, 64), nsim=500, extrapolate=0.5)
        assert 'EXTRAPOLATED' in est.flags
        assert len(est.diagnostics['deltas']) == 1

    @pytest.mark.parametrize('kw', [dict(s_ladder=(1, 2)), dict(delta_divisors=(64,)), dict(delta_divisors=(100, 256)),
                                    dict(method='median'), dict(s_ladder=(0, 1, 2))])
    def test_invalid_ladder(self, kw):
        with pytest.raises(ConfigError):
            pickands_limit(1.0, **{'nsim': 100, **kw})

    def test_richardson(self):
        assert richardson(2.0, 1.0, 2, 1) == 3.0
        assert richardson(2.0, 1.0, 2, 2) == pytest.approx(2 + 1 / 3)

    def test_intercept_weights(self):
        w = intercept_weights([0.25, 0.5, 1.0])
        assert w == pytest.approx([-0.5, 0.5, 1.0])
        assert w @ (3.0 + 2.0 / np.array([0.25, 0.5, 1.0])) == pytest.approx(3.0)

    @pytest.mark.parametrize('windows, base, expected', [([2, 5, 20], 20 / 256, 1 / 13),
                                                         ([0.5, 1, 1.5], 1.5 / 16, 1 / 12),
                                                         ([1, 2, 4], 4 / 64, 4 / 64)])
    def test_snap_step(self, windows, base, expected):
        step = _snap_step(windows, base)
        assert step == pytest.approx(expected, rel=1e-12) and step <= base
        assert all(abs(s / step - round(s / step)) < 1e-9 for s in windows)

    def test_snapped_ladder(self):
        est = pickands_limit(2.0, s_ladder=(0.5, 1.0, 1.5), delta_divisors=(16, 64), nsim=200, method='intercept')
        assert est.diagnostics['deltas'] == pytest.approx([1 / 12, 1 / 48])

    def test_window_sups_direct(self):
        spec = ConstantSpec('pickands', 2.0, S=1.5, delta=1.5 / 64, nsim=200)
        windows, strides = [0.5, 1.0, 1.5], [4, 1]
        step = _snap_step(windows, 1.5 / 16) / 4
        n = round(1.5 / step)
        sups = window_sups(spec, windows, strides, step)
        t = np.arange(n + 1) * step
        y = math.sqrt(2) * sample_fbm(2.0, SampleGrid(0.0, n * step, n + 1), 200, spec.seeds).values - t ** 2
        for i, S in enumerate(windows):
            for j, k in enumerate(strides):
                keep = (np.arange(n + 1) % k == 0) & (t <= S + 1e-9)
                assert np.allclose(sups[:, i, j], y[:, keep].max(1), rtol=0, atol=1e-12)


class TestRegistry:

    def test_anchors(self):
        reg = ConstantsRegistry()
        assert reg.pickands_constant(1) == (1.0, 'anchor')
        assert reg.pickands_constant(2.0) == (1 / SQRT_PI, 'anchor')
        with pytest.raises(HypothesisError):
            reg.pickands_constant(1.5)

    def test_piterbarg_closed_form(self):
        reg = ConstantsRegistry()
        assert reg.piterbarg_constant(2, 1, 1.5) == (closed_form_P21(1.5)[1], 'closed-form')
        assert reg.piterbarg_constant(2, 1, 1.5, two_sided=True) == (closed_form_P21_two_sided(1.5), 'closed-form')
        with pytest.raises(HypothesisError):
            reg.piterbarg_constant(1, 0.5, 2)

    def test_from_config(self):
        reg = ConstantsRegistry.from_config({1.5: 1.2}, {'2,1,1': 1.1})
        assert reg.pickands_constant(1.5) == (1.2, 'user')
        assert reg.piterbarg_constant(2, 1, 1) == (1.1, 'user')
        reg = ConstantsRegistry.from_config(piterbarg=[[1, 0.5, 2, 1.3]])
        assert reg.piterbarg_constant(1.0, 0.5, 2.0) == (1.3, 'user')

    @pytest.mark.parametrize('kw', [dict(pickands={'one': 1}), dict(piterbarg={'1,2': 3}), dict(piterbarg=[[1, 2]])])
    def test_from_config_invalid(self, kw):
        with pytest.raises(ConfigError):
            ConstantsRegistry.from_config(**kw)

    def test_windowed(self):
        reg = ConstantsRegistry()
        assert reg.windowed_constant('pickands', 1.5, 0) == (1.0, 'closed-form')
        assert reg.windowed_constant('pickands', 1, 2) == (closed_form_H1_window(2.0), 'closed-form')
        assert reg.windowed_constant('piterbarg', 2, 1.0, 1, 2.0)[1] == 'closed-form'
        with pytest.raises(HypothesisError):
            reg.windowed_constant('pickands', 1.5, 2)

    def test_add_windowed(self):
        reg = ConstantsRegistry()
        reg.add_windowed(ConstantEstimate(2.5, 0.01, 2.0, 1 / 64, 1000, 'piterbarg', 1.0, 0.5, 1.0))
        assert reg.windowed_constant('piterbarg', 1, 2, beta=0.5, d=1) == (2.5, 'estimate')
        reg.add_windowed(ConstantEstimate(3.1, 0.01, 2.0, 1 / 64, 1000, 'pickands', 1.5))
        assert reg.windowed_constant('pickands', 1.5, 2) == (3.1, 'estimate')
