"""
Covariance models for the Gaussian processes behind chi-processes

Stationary families are parametrized by their local index alpha and local coefficient D0,
r(t) = 1 - D0|t|^alpha(1+o(1)).
Non-stationary families are normalized by their standard deviation at the horizon T, where the variance is maximal,
and expose the local expansion (A, mu, D, nu) of the standard deviation and correlation at T.

Usage:
    from models.covariance import StationaryModel, NonstationaryModel, local_expansion_params
    model = NonstationaryModel('bifbm', T=1.0, K=0.5, H=0.8)
    A, mu, D, nu = local_expansion_params(model)
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from utils import ConfigError, HypothesisError, QuadratureError
from utils.general import LOGGER

STATIONARY_KINDS = ('expower', 'fgn', 'lamperti')
NONSTATIONARY_KINDS = ('fbm', 'bifbm', 'subfbm', 'meanintfbm')
MEANINT_QUAD_TOL = 1e-10  # absolute tolerance of the mean-integrated fBm double integral


@dataclass(frozen=True)
class Expansion:
    # Local expansion at the variance maximum: sigma(T-h) = 1 - A h^mu, 1 - Corr(T-h, T) = D h^nu
    A: float
    mu: float
    D: float
    nu: float

    def __iter__(self):
        return iter((self.A, self.mu, self.D, self.nu))


@dataclass(frozen=True)
class StationaryModel:
    """
    Centered stationary Gaussian process with unit variance
    Arguments
        kind:   'expower' r(t) = exp(-D0|t|^alpha), 'fgn' fractional Gaussian noise B(t+1) - B(t),
                'lamperti' Lamperti transform exp(-alpha t/2) B(exp(t)) of fBm
        alpha:  local Hoelder index in (0, 2]
        d0:     local covariance coefficient (fixed to 1 for fgn and 1/2 for lamperti)
    """
    kind: str
    alpha: float
    d0: float = 1.0

    def __post_init__(self):
        if self.kind not in STATIONARY_KINDS:
            raise ConfigError(f"unknown stationary model '{self.kind}', choose from {STATIONARY_KINDS}")
        if not 0 < self.alpha <= 2:
            raise ConfigError(f'alpha={self.alpha} must lie in (0, 2]')
        if self.kind in ('fgn', 'lamperti'):
            if self.alpha >= 2:
                raise ConfigError(f'{self.kind} is degenerate at alpha=2, use alpha in (0, 2)')
            object.__setattr__(self, 'd0', 1.0 if self.kind == 'fgn' else 0.5)  # fixed by the construction
        elif not self.d0 > 0:
            raise ConfigError(f'd0={self.d0} must be positive')

    @property
    def id(self):
        return f'{self.kind}(alpha={self.alpha:g},d0={self.d0:g})'

    @property
    def local_index(self):
        return self.alpha

    def cov(self, t):
        # Correlation r(t) at lag(s) t, vectorized; r(0) = 1 exactly
        t = np.abs(np.asarray(t, dtype=float))
        if not np.all(np.isfinite(t)):
            raise ConfigError('covariance lag must be finite')
        a = self.alpha
        if self.kind == 'expower':
            r = np.exp(-self.d0 * t ** a)
        elif self.kind == 'fgn':
            r = 0.5 * ((t + 1) ** a + np.abs(t - 1) ** a - 2 * t ** a)
        else:  # lamperti, 1 - (1 - e^-t)^a evaluated without cancellation
            with np.errstate(divide='ignore'):
                tail = -np.expm1(a * np.log1p(-np.exp(-t)))
            r = 0.5 * np.exp(a * t / 2) * tail + 0.5 * np.exp(-a * t / 2)
        return np.where(t == 0, 1.0, r)


def eval_stationary_cov(model: StationaryModel, t):
    # Correlation of a stationary model at lag t >= 0
    r = model.cov(t)
    return float(r) if np.ndim(r) == 0 else r


def check_r2(model: StationaryModel, lags: Optional[Sequence[float]] = None):
    # Assumption R2 on a lag grid: r(t) < 1 for every t > 0, returns (passed, worst lag)
    lags = np.geomspace(1e-6, 10.0, 200) if lags is None else np.asarray(lags, dtype=float)
    r = model.cov(lags)
    bad = lags[(lags > 0) & (r >= 1)]
    return bad.size == 0, (float(bad[0]) if bad.size else None)


def local_fit(model: StationaryModel, lags=(1e-3, 1e-4, 1e-5)):
    # Assumption R1 ratios (1 - r(t)) / (D0 t^alpha), close to 1 for small t
    t = np.asarray(lags, dtype=float)
    return (1 - model.cov(t)) / (model.d0 * t ** model.alpha)


@dataclass(frozen=True)
class HolderReport:
    G: float
    gamma: float
    start: float  # left end of the interval on which the bound is claimed
    max_ratio: float  # max over grid pairs of E(X(t)-X(s))^2 / (G|t-s|^gamma)
    passed: bool


@dataclass(frozen=True)
class NonstationaryModel:
    """
    Self-similar Gaussian process on [0, T], normalized so that sigma(T) = 1
    Arguments
        kind:   'fbm' (index alpha), 'bifbm' (K, H), 'subfbm' (H), 'meanintfbm' (H)
        T:      horizon, the unique point of maximal variance
    """
    kind: str
    T: float = 1.0
    alpha: float = 1.0
    K: float = 1.0
    H: float = 0.5
    sigma_T: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in NONSTATIONARY_KINDS:
            raise ConfigError(f"unknown non-stationary model '{self.kind}', choose from {NONSTATIONARY_KINDS}")
        if not self.T > 0:
            raise ConfigError(f'horizon T={self.T} must be positive')
        if self.kind == 'fbm' and not 0 < self.alpha < 2:
            raise ConfigError(f'fbm alpha={self.alpha} must lie in (0, 2)')
        if self.kind != 'fbm' and not 0 < self.H < 1:
            raise ConfigError(f'H={self.H} must lie in (0, 1)')
        if self.kind == 'bifbm' and not 0 < self.K <= 1:
            raise ConfigError(f'K={self.K} must lie in (0, 1]')
        object.__setattr__(self, 'sigma_T', math.sqrt(float(self.raw_cov(self.T, self.T))))

    @property
    def id(self):
        p = {'fbm': f'alpha={self.alpha:g}', 'bifbm': f'K={self.K:g},H={self.H:g}'}.get(self.kind, f'H={self.H:g}')
        return f'{self.kind}({p},T={self.T:g})'

    @property
    def local_index(self):
        return self.expansion().nu

    def raw_cov(self, s, t):
        # Covariance of the un-normalized process, closed forms (vectorized)
        s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
        if np.any(s < 0) or np.any(t < 0):
            raise ConfigError('non-stationary models are defined for times >= 0')
        d = np.abs(t - s)
        if self.kind == 'fbm':
            a = self.alpha
            return 0.5 * (s ** a + t ** a - d ** a)
        if self.kind == 'bifbm':
            K, h2 = self.K, 2 * self.H
            return 2.0 ** -K * ((t ** h2 + s ** h2) ** K - d ** (h2 * K))
        if self.kind == 'subfbm':
            h2 = 2 * self.H
            return s ** h2 + t ** h2 - 0.5 * ((s + t) ** h2 + d ** h2)
        p = 2 * self.H  # meanintfbm
        with np.errstate(divide='ignore', invalid='ignore'):
            lo, hi = np.minimum(s, t), np.maximum(s, t)
            smooth = 0.5 * (s * t ** (p + 1) + t * s ** (p + 1)) / (p + 1)
            kink = 0.5 * (hi ** (p + 2) + lo ** (p + 2) - d ** (p + 2)) / ((p + 1) * (p + 2))
            c = (p + 2) * (smooth - kink) / (s * t)
        return np.where((s == 0) | (t == 0), 0.0, c)

    def cov(self, s, t):
        # Covariance of the normalized process X / sigma(T)
        return self.raw_cov(s, t) / self.sigma_T ** 2

    def sigma(self, t):
        # Normalized standard deviation, sigma(T) = 1
        return np.sqrt(np.maximum(self.cov(t, t), 0.0))

    def corr(self, s, t):
        return self.cov(s, t) / (self.sigma(s) * self.sigma(t))

    def increment_var(self, s, t):
        # E(X(t) - X(s))^2 of the normalized process
        return self.cov(s, s) + self.cov(t, t) - 2 * self.cov(s, t)

    def expansion(self):
        return local_expansion_params(self)

    def holder_bound(self):
        # Assumption A2 constants (G, gamma, start) for the normalized process
        T, H = self.T, self.H
        if self.kind == 'fbm':
            return T ** -self.alpha, self.alpha, 0.0
        if self.kind == 'bifbm':
            return 2.0 ** (1 - self.K) / T ** (2 * self.K * H), 2 * self.K * H, 0.0
        if self.kind == 'subfbm':  # |t-s|^2H <= T^(3H/2) |t-s|^(H/2) on [0, T]
            v = 2 - 2 ** (2 * H - 1)
            return max(1.0, v) * T ** (1.5 * H) / (v * T ** (2 * H)), H / 2, 0.0
        delta = T / 4  # meanintfbm: bound holds on [delta, T] only
        return 2 * (2 * H + 3) * delta ** (2 * H - 2) * T ** (1 - 2 * H) / T ** (2 * H), 1.0, delta


def eval_nonstationary_cov(model: NonstationaryModel, s: float, t: float, tol=MEANINT_QUAD_TOL):
    """
    Covariance of the (un-normalized) process at (s, t) as printed for each family. The mean-integrated fBm covariance
    is evaluated from its double-integral definition by adaptive quadrature with absolute tolerance `tol`.
    """
    for x in (s, t):
        if not 0 <= x <= model.T:
            raise ConfigError(f'time {x} outside [0, T={model.T}]')
    if model.kind != 'meanintfbm':
        return float(model.raw_cov(s, t))
    if s == 0 or t == 0:
        return 0.0
    p = 2 * model.H
    fbm = lambda y, x: 0.5 * (x ** p + y ** p - abs(x - y) ** p)  # fBm covariance, Hurst H
    val, err = integrate.dblquad(fbm, 0, t, 0, s, epsabs=tol, epsrel=0)
    if err > tol:
        raise QuadratureError(f'mean-integrated fBm quadrature reached {err:.3g} > tol {tol:.3g}', error=err)
    return (p + 2) * val / (s * t)


def local_expansion_params(model: NonstationaryModel, T: Optional[float] = None):
    # (A, mu, D, nu) of the model normalized at horizon T (default model.T), where its variance is maximal
    if T is not None and T != model.T:
        model = replace(model, T=float(T))
    T = model.T
    H, K = model.H, model.K
    if model.kind == 'fbm':
        e = Expansion(A=model.alpha / (2 * T), mu=1.0, D=1 / (2 * T ** model.alpha), nu=model.alpha)
    elif model.kind == 'bifbm':
        e = Expansion(A=K * H / T, mu=1.0, D=2.0 ** -K * T ** (-2 * K * H), nu=2 * K * H)
    elif model.kind == 'subfbm':
        e = Expansion(A=H / T, mu=1.0, D=1 / (2 * (2 - 2 ** (2 * H - 1)) * T ** (2 * H)), nu=2 * H)
    else:
        e = Expansion(A=H / T, mu=1.0, D=(1 - H ** 2) / (2 * T ** 2), nu=2.0)
    if e.nu > 2:
        raise HypothesisError(f'nu={e.nu} > 2 lies outside the theorem scope')
    return e


@dataclass(frozen=True)
class ExpansionReport:
    scales: tuple
    sigma_residuals: tuple  # |sigma(T-h) - (1 - A h^mu)| / h^mu
    corr_residuals: tuple  # |1 - Corr(T-h, T) - D h^nu| / h^nu
    passed: bool
    offending_scale: Optional[float] = None

    def __str__(self):
        s = 'PASS' if self.passed else f'FAIL at h={self.offending_scale:g}'
        rows = ', '.join(f'h={h:g}: {a:.3g}/{b:.3g}' for h, a, b in
                         zip(self.scales, self.sigma_residuals, self.corr_residuals))
        return f'{s} ({rows})'


def _converging(r, zero=1e-12):
    # Index of the first scale where residuals stop decreasing toward 0, None if they converge
    for i in range(1, len(r)):
        if r[i] > r[i - 1] + zero:
            return i
    if r[-1] > zero and not r[-1] < 0.9 * r[0]:
        return len(r) - 1
    return None


def verify_expansion(model: NonstationaryModel, T=None, claimed=None, scales=(1e-2, 1e-3, 1e-4)):
    # Shrinking-difference residual check of a claimed (A, mu, D, nu) expansion at T
    if T is not None and T != model.T:
        model = replace(model, T=float(T))  # renormalized so that sigma(T) = 1
    T = model.T
    A, mu, D, nu = claimed if claimed is not None else local_expansion_params(model, T)
    h = np.asarray(scales, dtype=float)
    if h.size < 2 or np.any(np.diff(h) >= 0) or np.any(h <= 0) or np.any(h >= T):
        raise ConfigError(f'scales {tuple(scales)} must be strictly decreasing in (0, T)')
    rs = np.abs(model.sigma(T - h) - (1 - A * h ** mu)) / h ** mu
    rc = np.abs(1 - model.corr(T - h, T) - D * h ** nu) / h ** nu
    bad = [i for i in (_converging(rs), _converging(rc)) if i is not None]
    report = ExpansionReport(tuple(h.tolist()), tuple(rs.tolist()), tuple(rc.tolist()), not bad,
                             float(h[min(bad)]) if bad else None)
    LOGGER.debug(f'{model.id}: {report}')
    return report


def check_holder(model: NonstationaryModel, m=64):
    # Assumption A2 on an m-point grid of [start, T]
    G, gamma, start = model.holder_bound()
    t = np.linspace(start, model.T, m)
    s, u = np.meshgrid(t, t, indexing='ij')
    d = np.abs(u - s)
    off = d > 0
    ratio = model.increment_var(s[off], u[off]) / (G * d[off] ** gamma)
    worst = float(ratio.max()) if ratio.size else 0.0
    return HolderReport(G, gamma, start, worst, worst <= 1 + 1e-9)


def build_model(cfg: dict):
    # Build a model from scenario config keys (model, alpha, d0, K, H, T)
    kind = str(cfg.get('model') or '').lower()
    if not kind:
        raise ConfigError("config key 'model' is required")
    try:
        if kind in STATIONARY_KINDS:
            return StationaryModel(kind, alpha=float(cfg.get('alpha', 1.0)), d0=float(cfg.get('d0', 1.0)))
        if kind in NONSTATIONARY_KINDS:
            return NonstationaryModel(kind, T=float(cfg.get('T', 1.0)), alpha=float(cfg.get('alpha', 1.0)),
                                      K=float(cfg.get('K', 1.0)), H=float(cfg.get('H', 0.5)))
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f'invalid model parameters: {e}') from e
    raise ConfigError(f"unknown model '{kind}', choose from {STATIONARY_KINDS + NONSTATIONARY_KINDS}")
