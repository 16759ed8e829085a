import numpy as np
import pytest

from models.trend import TrendSpec, build_trend, eval_trend
from utils import ConfigError


def test_none():
    spec = TrendSpec()
    assert spec.is_zero
    assert eval_trend(spec, 0.7) == 0.0


def test_g1():
    spec = TrendSpec('g1', c=2.0, beta=0.5)
    t = np.array([0.0, 0.25, 1.0])
    assert np.allclose(eval_trend(spec, t), [0.0, 1.0, 2.0])
    assert eval_trend(spec, 0.0) == 0.0


def test_interior_minimum():
    spec = TrendSpec('interior', c=3.0, beta=2.0, t0=0.5)
    g = eval_trend(spec, np.linspace(0, 1, 11))
    assert g.argmin() == 5 and g.min() == 0.0
    assert eval_trend(spec, 0.0) == pytest.approx(0.75)


def test_g2_boundary():
    spec = TrendSpec('g2', gT=0.5, c_tilde=1.0, beta_tilde=1.0)
    assert eval_trend(spec, 1.0) == 0.5
    assert eval_trend(spec, 0.75) == pytest.approx(0.25)
    with pytest.raises(ConfigError):
        eval_trend(spec, 0.2)  # 0.5 - 0.8 < 0


def test_g2_experimental():
    assert TrendSpec('g2', gT=1.0, c_tilde=-1.0).experimental
    assert not TrendSpec('g2', gT=1.0, c_tilde=1.0).experimental


def test_tabulated():
    spec = TrendSpec('tabulated', values=(0.0, 1.0, 4.0), start=0.0, T=1.0)
    assert np.allclose(eval_trend(spec, [0.0, 0.5, 1.0]), [0.0, 1.0, 4.0])
    with pytest.raises(ConfigError):
        eval_trend(spec, 0.3)  # off the tabulation grid
    assert TrendSpec('tabulated', values=(0.0, 0.0)).is_zero


def test_outside_horizon():
    with pytest.raises(ConfigError):
        eval_trend(TrendSpec('g1', T=1.0), 1.5)


@pytest.mark.parametrize('kw', [dict(form='g3'), dict(form='g1', c=0.0), dict(form='interior', t0=None),
                                dict(form='interior', t0=1.0), dict(form='g2', gT=-1.0),
                                dict(form='tabulated', values=(1.0, -1.0)), dict(form='tabulated', values=())])
def test_invalid(kw):
    with pytest.raises(ConfigError):
        TrendSpec(**kw)


def test_build_trend():
    spec = build_trend({'trend': 'g1', 'c': 3, 'beta': 0.25}, T=2.0)
    assert (spec.form, spec.c, spec.beta, spec.T) == ('g1', 3.0, 0.25, 2.0)
    assert build_trend({}).is_zero
    with pytest.raises(ConfigError):
        build_trend({'trend': 'g1', 'c': 'steep'})
