import math

import numpy as np
import pytest

from models.covariance import (NonstationaryModel, StationaryModel, build_model, check_holder, check_r2,
                               eval_nonstationary_cov, eval_stationary_cov, local_expansion_params, local_fit,
                               verify_expansion)
from utils import ConfigError, HypothesisError


class TestStationary:

    @pytest.mark.parametrize('kind', ['expower', 'fgn', 'lamperti'])
    @pytest.mark.parametrize('alpha', [0.5, 1.0, 1.5])
    def test_unit_variance_and_local_fit(self, kind, alpha):
        model = StationaryModel(kind, alpha)
        assert eval_stationary_cov(model, 0.0) == 1.0
        assert local_fit(model, [1e-5])[0] == pytest.approx(1.0, abs=1e-2)
        assert check_r2(model)[0]

    def test_expower(self):
        model = StationaryModel('expower', 1.5, d0=2.0)
        t = np.array([0.1, 0.5, 2.0])
        assert np.allclose(eval_stationary_cov(model, t), np.exp(-2.0 * t ** 1.5), rtol=1e-14)
        assert eval_stationary_cov(model, -0.5) == eval_stationary_cov(model, 0.5)

    def test_fixed_coefficients(self):
        assert StationaryModel('fgn', 1.0, d0=7.0).d0 == 1.0
        assert StationaryModel('lamperti', 1.0, d0=7.0).d0 == 0.5

    def test_fgn_alpha1_is_white_noise(self):
        model = StationaryModel('fgn', 1.0)
        assert eval_stationary_cov(model, np.array([1.0, 2.0, 5.0])) == pytest.approx([0, 0, 0], abs=1e-14)

    def test_half_lag_values(self):
        # B(t+1) - B(t) overlaps on 1 - t, Cov(e^(-t/2) B(e^t), B(1)) = e^(-t/2)
        assert eval_stationary_cov(StationaryModel('fgn', 1.0), 0.5) == pytest.approx(0.5, rel=1e-14)
        assert eval_stationary_cov(StationaryModel('lamperti', 1.0), 0.5) == pytest.approx(math.exp(-0.25), rel=1e-12)

    def test_lamperti_large_lags(self):
        # r(t) ~ e^(-alpha t/2) stays finite and in (0, 1) far out
        r = eval_stationary_cov(StationaryModel('lamperti', 0.8), np.array([10.0, 50.0, 200.0]))
        assert np.all(np.isfinite(r)) and np.all((r > 0) & (r < 1))

    @pytest.mark.parametrize('kind, alpha, d0', [('expower', 0.0, 1.0), ('expower', 2.5, 1.0), ('fgn', 2.0, 1.0),
                                                 ('expower', 1.0, -1.0), ('matern', 1.0, 1.0)])
    def test_invalid(self, kind, alpha, d0):
        with pytest.raises(ConfigError):
            StationaryModel(kind, alpha, d0)


class TestNonstationary:

    @pytest.mark.parametrize('kw', [dict(kind='fbm', alpha=0.5), dict(kind='bifbm', K=0.5, H=0.7),
                                    dict(kind='subfbm', H=0.3), dict(kind='meanintfbm', H=0.5)])
    @pytest.mark.parametrize('T', [1.0, 2.0])
    def test_normalized_at_horizon(self, kw, T):
        model = NonstationaryModel(T=T, **kw)
        assert model.sigma(T) == pytest.approx(1.0, rel=1e-12)
        t = np.linspace(0.1 * T, 0.99 * T, 7)
        assert np.all(model.sigma(t) < 1)

    @pytest.mark.parametrize('kw', [dict(kind='fbm', alpha=0.5), dict(kind='bifbm', K=0.5, H=0.7),
                                    dict(kind='subfbm', H=0.3), dict(kind='meanintfbm', H=0.5)])
    def test_expansion_converges(self, kw):
        report = verify_expansion(NonstationaryModel(**kw))
        assert report.passed, str(report)
        assert report.corr_residuals[-1] < report.corr_residuals[0]

    def test_wrong_expansion_fails(self):
        model = NonstationaryModel('fbm', alpha=0.5)
        A, mu, D, nu = local_expansion_params(model)
        report = verify_expansion(model, claimed=(A, mu, 2 * D, nu))
        assert not report.passed
        assert report.offending_scale is not None

    def test_fbm_params(self):
        e = local_expansion_params(NonstationaryModel('fbm', T=2.0, alpha=0.5))
        assert tuple(e) == pytest.approx((0.5 / 4, 1.0, 1 / (2 * 2 ** 0.5), 0.5))

    def test_expansion_at_other_horizon(self):
        model = NonstationaryModel('bifbm', K=1.0, H=0.5, T=1.0)
        assert tuple(local_expansion_params(model, T=2.0)) == \
            pytest.approx(tuple(local_expansion_params(NonstationaryModel('bifbm', K=1.0, H=0.5, T=2.0))))
        assert tuple(local_expansion_params(model, T=2.0)) == pytest.approx((0.25, 1.0, 0.25, 1.0))
        assert verify_expansion(model, T=2.0).passed

    def test_meanint_params(self):
        # 1 - Corr(T-h, T) = 3h^2/8 for H = 1/2
        A, mu, D, nu = local_expansion_params(NonstationaryModel('meanintfbm', H=0.5))
        assert (A, mu, D, nu) == pytest.approx((0.5, 1.0, 0.375, 2.0))

    def test_meanint_quadrature_matches_closed_form(self):
        model = NonstationaryModel('meanintfbm', H=0.5)
        assert eval_nonstationary_cov(model, 0.3, 0.7) == pytest.approx(float(model.raw_cov(0.3, 0.7)), abs=1e-8)
        # H = 1/2: Cov(s, t) = 3s/2 - s^2/(2t) for s <= t
        assert float(model.raw_cov(0.3, 0.7)) == pytest.approx(0.45 - 0.09 / 1.4, rel=1e-12)

    def test_time_outside_horizon(self):
        with pytest.raises(ConfigError):
            eval_nonstationary_cov(NonstationaryModel('fbm', alpha=1.0), 0.5, 1.5)

    @pytest.mark.parametrize('kw', [dict(kind='fbm', alpha=0.5), dict(kind='fbm', alpha=1.5),
                                    dict(kind='bifbm', K=0.5, H=0.7), dict(kind='subfbm', H=0.3),
                                    dict(kind='subfbm', H=0.8)])
    def test_holder(self, kw):
        report = check_holder(NonstationaryModel(**kw), m=32)
        assert report.passed, report

    @pytest.mark.parametrize('kw', [dict(kind='fbm', alpha=2.0), dict(kind='bifbm', K=1.5), dict(kind='subfbm', H=1.0),
                                    dict(kind='fbm', T=0.0), dict(kind='bm')])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            NonstationaryModel(**kw)

    def test_local_index(self):
        assert NonstationaryModel('bifbm', K=0.5, H=0.6).local_index == pytest.approx(0.6)


class TestBuildModel:

    def test_stationary(self):
        model = build_model({'model': 'expower', 'alpha': 1.5, 'd0': 2})
        assert isinstance(model, StationaryModel) and model.d0 == 2.0

    def test_nonstationary(self):
        model = build_model({'model': 'subfbm', 'H': 0.3, 'T': 2})
        assert isinstance(model, NonstationaryModel) and model.T == 2.0

    @pytest.mark.parametrize('cfg', [{}, {'model': 'unknown'}, {'model': 'expower', 'alpha': 'x'}])
    def test_invalid(self, cfg):
        with pytest.raises(ConfigError):
            build_model(cfg)


def test_hypothesis_error_is_not_config_error():
    assert not issubclass(HypothesisError, ConfigError)
    assert math.isclose(NonstationaryModel('fbm', alpha=1.0).sigma_T, 1.0)
