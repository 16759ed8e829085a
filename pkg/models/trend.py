"""
Trend functions g(t) subtracted from a chi-process before taking the supremum

Forms:
    none        g = 0
    g1          c t^beta, unique minimum 0 at t = 0
    g2          gT - c_tilde (T - t)^beta_tilde, boundary form at the horizon T
    interior    c |t - t0|^beta, minimum 0 at an interior point t0
    tabulated   non-negative values on a uniform grid of [start, T]
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from utils import ConfigError
from utils.general import LOGGER

TREND_FORMS = ('none', 'g1', 'g2', 'interior', 'tabulated')


@dataclass(frozen=True)
class TrendSpec:
    form: str = 'none'
    c: float = 2.0
    beta: float = 1.0
    gT: float = 0.0
    c_tilde: float = 1.0
    beta_tilde: float = 1.0
    t0: Optional[float] = None
    values: tuple = ()
    start: float = 0.0  # tabulated grid is linspace(start, T, len(values))
    T: float = 1.0

    def __post_init__(self):
        if self.form not in TREND_FORMS:
            raise ConfigError(f"unknown trend form '{self.form}', choose from {TREND_FORMS}")
        if self.form in ('g1', 'interior') and not (self.c > 0 and self.beta > 0):
            raise ConfigError(f'{self.form} trend needs c > 0 and beta > 0, got c={self.c}, beta={self.beta}')
        if self.form == 'interior' and (self.t0 is None or not 0 < self.t0 < self.T):
            raise ConfigError(f'interior trend needs t0 in (0, T={self.T}), got {self.t0}')
        if self.form == 'g2':
            if not (self.gT >= 0 and self.beta_tilde > 0):
                raise ConfigError(f'g2 trend needs gT >= 0 and beta_tilde > 0, got {self.gT}, {self.beta_tilde}')
            if self.c_tilde < 0:
                LOGGER.warning(f'WARNING ⚠️ c_tilde={self.c_tilde} < 0 is experimental, the boundary theorem is '
                               f'only stated through mu <= beta_tilde')
        if self.form == 'tabulated':
            v = np.asarray(self.values, dtype=float)
            if v.ndim != 1 or v.size < 1 or not np.all(np.isfinite(v)) or np.any(v < 0):
                raise ConfigError('tabulated trend needs a non-empty list of finite values >= 0')
            if v.size > 1 and not self.T > self.start:
                raise ConfigError(f'tabulated grid [{self.start}, {self.T}] is empty')
            object.__setattr__(self, 'values', tuple(v.tolist()))

    @property
    def is_zero(self):
        return self.form == 'none' or (self.form == 'tabulated' and not any(self.values))

    @property
    def experimental(self):
        return self.form == 'g2' and self.c_tilde < 0

    def grid(self):
        # Tabulation points of a tabulated trend
        assert self.form == 'tabulated', 'only tabulated trends carry a grid'
        m = len(self.values)
        return np.array([self.start]) if m == 1 else np.linspace(self.start, self.T, m)


def eval_trend(spec: TrendSpec, t):
    # Trend value(s) at time(s) t in [0, T], vectorized
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-12) or np.any(t > spec.T * (1 + 1e-12)):
        raise ConfigError(f'trend evaluated outside [0, T={spec.T}]')
    if spec.form == 'none':
        g = np.zeros_like(t)
    elif spec.form == 'g1':
        g = spec.c * np.maximum(t, 0) ** spec.beta
    elif spec.form == 'interior':
        g = spec.c * np.abs(t - spec.t0) ** spec.beta
    elif spec.form == 'g2':
        g = spec.gT - spec.c_tilde * np.maximum(spec.T - t, 0) ** spec.beta_tilde
        if np.any(g < 0):
            raise ConfigError(f'g2 trend is negative at t={float(np.ravel(t)[np.argmin(g)]):g}')
    else:
        x = spec.grid()
        i = np.clip(np.searchsorted(x, t), 0, len(x) - 1)
        j = np.where(np.abs(x[np.maximum(i - 1, 0)] - t) < np.abs(x[i] - t), np.maximum(i - 1, 0), i)
        tol = 1e-9 * max(1.0, abs(spec.T))
        if np.any(np.abs(x[j] - t) > tol):
            raise ConfigError('tabulated trend evaluated off its grid')
        g = np.asarray(spec.values)[j]
    return float(g) if g.ndim == 0 else g


def build_trend(cfg: dict, T=1.0, start=0.0):
    # Build a TrendSpec from scenario config keys (trend, c, beta, gT, c_tilde, beta_tilde, trend_values, t0)
    form = str(cfg.get('trend') or 'none').lower()
    try:
        return TrendSpec(form=form,
                         c=float(cfg.get('c', 2.0)),
                         beta=float(cfg.get('beta', 1.0)),
                         gT=float(cfg.get('gT', 0.0)),
                         c_tilde=float(cfg.get('c_tilde', 1.0)),
                         beta_tilde=float(cfg.get('beta_tilde', 1.0)),
                         t0=None if cfg.get('t0') is None else float(cfg['t0']),
                         values=tuple(cfg.get('trend_values') or ()),
                         start=float(start),
                         T=float(T))
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f'invalid trend parameters: {e}') from e
