"""
Closed-form tail asymptotics for Gaussian processes, chi-processes with and without trend, and the separable fields
behind them. Every evaluator returns an AsymptoticEval assembled in log space as

    value = prefactor * level^exponent * marginal_factor * exp(-level^2 / 2)

where marginal_factor is 2^((2-n)/2) / Gamma(n/2) * level^(n-2) for chi_n tails and (2 pi)^(-1/2) / level for
Gaussian tails. Missing Pickands/Piterbarg constants are looked up in a ConstantsRegistry; constants can also be passed
as numbers or ConstantEstimates and the provenance of each one is recorded.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from utils import ConfigError, HypothesisError
from utils.constants import ConstantEstimate, ConstantsRegistry

LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)
EQ_TOL = 1e-12  # relative tolerance of regime equality comparisons


@dataclass(frozen=True)
class AsymptoticEval:
    prefactor: float
    exponent: float
    level: float
    regime: str
    marginal_const: float = 1.0
    marginal_power: float = 0.0
    flags: tuple = ()
    constants: dict = field(default_factory=dict)  # name -> (value, provenance)

    @property
    def log_value(self):
        return math.log(self.prefactor) + (self.exponent + self.marginal_power) * math.log(self.level) + \
            math.log(self.marginal_const) - self.level ** 2 / 2

    @property
    def value(self):
        return math.exp(self.log_value)

    @property
    def marginal_factor(self):
        return self.marginal_const * self.level ** self.marginal_power

    @property
    def gaussian_factor(self):
        return math.exp(-self.level ** 2 / 2)

    @property
    def decreasing_above(self):
        # value is strictly decreasing in the level above this threshold
        return math.sqrt(max(0.0, self.exponent + self.marginal_power))

    def __str__(self):
        return f'{self.regime}: {self.value:.5g} = {self.prefactor:.5g} * u^{self.exponent:.4g} * marginal * ' \
               f'exp(-u^2/2) at u={self.level:g}' + (f" [{', '.join(self.flags)}]" if self.flags else '')


def _check_level(u):
    if not u > 0 or not math.isfinite(u):
        raise ConfigError(f'level must be positive and finite, got {u}')
    return float(u)


def _chi_marginal(n):
    # (const, power) of Upsilon_n without its Gaussian factor
    if int(n) != n or n < 1:
        raise ConfigError(f'degrees of freedom n={n} must be an integer >= 1')
    return math.exp((2 - n) / 2 * math.log(2) - special.gammaln(n / 2)), n - 2


def _constant(x, name, lookup):
    # (value, provenance) from a number, a ConstantEstimate, or the registry
    if x is None:
        v, p = lookup()
    elif isinstance(x, ConstantEstimate):
        v, p = x.value, 'estimate'
    else:
        v, p = float(x), 'user'
    if not v > 0:
        raise HypothesisError(f'constant {name}={v} must be positive')
    return v, p


def _chi(prefactor, exponent, n, u, regime, flags=(), constants=None):
    c, p = _chi_marginal(n)
    return AsymptoticEval(prefactor, exponent, _check_level(u), regime, c, p, tuple(flags), constants or {})


def _gauss(prefactor, exponent, u, regime, flags=(), constants=None):
    return AsymptoticEval(prefactor, exponent, _check_level(u), regime, math.exp(-LOG_SQRT_2PI), -1.0, tuple(flags),
                          constants or {})


def log_upsilon(n, u):
    c, p = _chi_marginal(n)
    return math.log(c) + p * math.log(u) - u ** 2 / 2


def upsilon(n, u):
    # Upsilon_n(u) = 2^((2-n)/2) / Gamma(n/2) u^(n-2) exp(-u^2/2)
    return math.exp(log_upsilon(n, _check_level(u)))


def marginal_tail(n, u):
    # Single time point: P(chi_n > u) ~ Upsilon_n(u)
    return _chi(1.0, 0.0, n, u, 'marginal')


def _check_index(alpha, name='alpha'):
    if not 0 < alpha <= 2:
        raise ConfigError(f'{name}={alpha} must lie in (0, 2]')


def gaussian_pickands_tail(T, alpha, d0, u, H=None, registry: Optional[ConstantsRegistry] = None):
    # P(sup_[0,T] X > u) ~ H_alpha T D0^(1/alpha) (2 pi)^(-1/2) u^(2/alpha - 1) exp(-u^2/2)
    _check_index(alpha)
    if not (T > 0 and d0 > 0):
        raise ConfigError(f'need T > 0 and d0 > 0, got T={T}, d0={d0}')
    reg = registry or ConstantsRegistry()
    h = _constant(H, f'H_{alpha:g}', lambda: reg.pickands_constant(alpha))
    return _gauss(h[0] * T * d0 ** (1 / alpha), 2 / alpha, u, 'pickands', constants={f'H_{alpha:g}': h})


def gaussian_local_tail(S, alpha, u, H_window=None, registry: Optional[ConstantsRegistry] = None):
    # P(sup_[0,S u^(-2/alpha)] X > u) ~ H_alpha[0, S] (2 pi)^(-1/2) u^-1 exp(-u^2/2)
    _check_index(alpha)
    reg = registry or ConstantsRegistry()
    h = _constant(H_window, f'H_{alpha:g}[0,{S:g}]', lambda: reg.windowed_constant('pickands', alpha, S))
    return _gauss(h[0], 0.0, u, 'pickands-window', constants={f'H_{alpha:g}[0,{S:g}]': h})


def gaussian_piterbarg_local(S, alpha, d, u, P_window=None, registry: Optional[ConstantsRegistry] = None):
    # P(sup_[0,S u^(-2/alpha)] X(t) / (1 + d t^alpha) > u) ~ P^d_{alpha,alpha}[0, S] (2 pi)^(-1/2) u^-1 exp(-u^2/2)
    _check_index(alpha)
    reg = registry or ConstantsRegistry()
    name = f'P^{d:g}_{alpha:g},{alpha:g}[0,{S:g}]'
    p = _constant(P_window, name, lambda: reg.windowed_constant('piterbarg', alpha, S, alpha, d))
    return _gauss(p[0], 0.0, u, 'piterbarg-window', constants={name: p})


def gaussian_nonstationary_tail(nu, mu, A, D, u, P=None, registry: Optional[ConstantsRegistry] = None):
    # Gaussian process with variance maximum at T, mu = nu: P^{A/D}_{nu,nu} (2 pi)^(-1/2) u^-1 exp(-u^2/2)
    _check_index(nu, 'nu')
    if not math.isclose(nu, mu, rel_tol=EQ_TOL):
        raise HypothesisError(f'the Gaussian constant is only pinned down for mu = nu, got nu={nu}, mu={mu}')
    reg = registry or ConstantsRegistry()
    name = f'P^{A / D:g}_{nu:g},{nu:g}'
    p = _constant(P, name, lambda: reg.piterbarg_constant(nu, nu, A / D))
    return _gauss(p[0], 0.0, u, 'gaussian-nonstationary:nu=mu', constants={name: p})


def prop21_tail(T, alpha, d0, n, u, H=None, registry: Optional[ConstantsRegistry] = None):
    # Stationary chi_n on [0, T]: T D0^(1/alpha) H_alpha u^(2/alpha) Upsilon_n(u)
    _check_index(alpha)
    if not (T > 0 and d0 > 0):
        raise ConfigError(f'need T > 0 and d0 > 0, got T={T}, d0={d0}')
    reg = registry or ConstantsRegistry()
    h = _constant(H, f'H_{alpha:g}', lambda: reg.pickands_constant(alpha))
    return _chi(T * d0 ** (1 / alpha) * h[0], 2 / alpha, n, u, 'prop21', constants={f'H_{alpha:g}': h})


def prop22_local_tail(S, alpha, d0, n, f_u, H_window=None, registry: Optional[ConstantsRegistry] = None):
    # Stationary chi_n on [0, S u^(-2/alpha)] above f(u): H_alpha[0, D0^(1/alpha) S] Upsilon_n(f(u))
    _check_index(alpha)
    reg = registry or ConstantsRegistry()
    S1 = d0 ** (1 / alpha) * S
    name = f'H_{alpha:g}[0,{S1:g}]'
    h = _constant(H_window, name, lambda: reg.windowed_constant('pickands', alpha, S1))
    return _chi(h[0], 0.0, n, f_u, 'prop22', constants={name: h})


def _eq(a, b):
    return math.isclose(a, b, rel_tol=EQ_TOL)


def thm21_tail(alpha, beta, c, n, u, T=1.0, d0=1.0, H=None, P=None, registry: Optional[ConstantsRegistry] = None,
               interior=False, g_min=0.0):
    """
    Stationary chi_n with trend g(t) = c t^beta: P(sup_[0,T] chi_n(t) - g(t) > u) ~
    M u^((2/alpha - 1/beta)+) Upsilon_n(u)

    M = c^(-1/beta) Gamma(1/beta + 1) H_alpha if alpha < 2 beta, P^c_{alpha,alpha/2} if alpha = 2 beta, 1 otherwise.
    The local coefficient D0 enters through c' = c D0^(-beta/alpha). With interior=True the trend has its unique
    minimum g_min at an interior point: the level becomes u + g_min, Gamma doubles and the Piterbarg constant is
    two-sided.
    """
    _check_index(alpha)
    if not (beta > 0 and c > 0 and T > 0 and d0 > 0):
        raise ConfigError(f'need beta, c, T, d0 > 0, got beta={beta}, c={c}, T={T}, d0={d0}')
    cc = c * d0 ** (-beta / alpha)
    threshold = 1 / beta if alpha < 2 * beta and not _eq(alpha, 2 * beta) else 2 / alpha
    if not cc > threshold:
        raise HypothesisError(f'asymptotic regime not guaranteed: c={cc:g} (after D0 scaling) <= {threshold:g}')
    reg = registry or ConstantsRegistry()
    level = u + g_min if interior else u
    flags = ('interior-minimum',) if interior else ()
    constants = {}
    if _eq(alpha, 2 * beta):
        name = f"P{'~' if interior else ''}^{cc:g}_{alpha:g},{alpha / 2:g}"
        p = _constant(P, name, lambda: reg.piterbarg_constant(alpha, alpha / 2, cc, two_sided=interior))
        constants[name] = p
        return _chi(p[0], 0.0, n, level, 'thm21:alpha=2beta', flags, constants)
    if alpha < 2 * beta:
        h = _constant(H, f'H_{alpha:g}', lambda: reg.pickands_constant(alpha))
        constants[f'H_{alpha:g}'] = h
        gam = (2 if interior else 1) * math.gamma(1 / beta + 1)
        return _chi(cc ** (-1 / beta) * gam * h[0], 2 / alpha - 1 / beta, n, level, 'thm21:alpha<2beta', flags,
                    constants)
    return _chi(1.0, 0.0, n, level, 'thm21:alpha>2beta', flags, constants)


def thm22_tail(nu, mu, A, D, n, u, H=None, P=None, registry: Optional[ConstantsRegistry] = None):
    """
    Non-stationary chi_n with sigma(T - h) = 1 - A h^mu, 1 - Corr = D h^nu:
    P(sup_[0,T] chi_n > u) ~ M u^((2/nu - 2/mu)+) Upsilon_n(u) with M = D^(1/nu) Gamma(1/mu + 1) A^(-1/mu) H_nu if
    nu < mu, P^{A/D}_{nu,nu} if nu = mu and 1 if nu > mu
    """
    _check_index(nu, 'nu')
    if not (mu > 0 and A > 0 and D > 0):
        raise ConfigError(f'need mu, A, D > 0, got mu={mu}, A={A}, D={D}')
    reg = registry or ConstantsRegistry()
    if _eq(nu, mu):
        name = f'P^{A / D:g}_{nu:g},{nu:g}'
        p = _constant(P, name, lambda: reg.piterbarg_constant(nu, nu, A / D))
        return _chi(p[0], 0.0, n, u, 'thm22:nu=mu', constants={name: p})
    if nu < mu:
        h = _constant(H, f'H_{nu:g}', lambda: reg.pickands_constant(nu))
        m = D ** (1 / nu) * math.gamma(1 / mu + 1) * A ** (-1 / mu) * h[0]
        return _chi(m, 2 / nu - 2 / mu, n, u, 'thm22:nu<mu', constants={f'H_{nu:g}': h})
    return _chi(1.0, 0.0, n, u, 'thm22:nu>mu')


def thm23_tail(nu, mu, A, D, n, u, gT, beta_tilde, H=None, P=None, registry: Optional[ConstantsRegistry] = None):
    # Non-stationary chi_n with a G2 trend: thm22_tail at u* = u + g(T), valid for mu <= beta_tilde
    if gT < 0:
        raise ConfigError(f'gT={gT} must be >= 0')
    if mu > beta_tilde:
        raise HypothesisError(f'outside theorem hypothesis: mu={mu} > beta_tilde={beta_tilde}')
    e = thm22_tail(nu, mu, A, D, n, u + gT, H, P, registry)
    return AsymptoticEval(e.prefactor, e.exponent, e.level, e.regime.replace('thm22', 'thm23'), e.marginal_const,
                          e.marginal_power, e.flags, e.constants)


@dataclass(frozen=True)
class GeneralizedChiWeights:
    b: tuple
    k: Optional[int] = None  # multiplicity of the maximal weight 1, defaults to the number of leading ones

    def __post_init__(self):
        b = tuple(float(x) for x in self.b)
        if not b or b[0] != 1:
            raise ConfigError(f'weights must start with b_1 = 1, got {b}')
        if any(x < 0 or x > 1 for x in b) or any(y > x for x, y in zip(b, b[1:])):
            raise ConfigError(f'weights must be non-increasing in [0, 1], got {b}')
        ones = sum(x == 1 for x in b)
        k = ones if self.k is None else int(self.k)
        if not 1 <= k <= len(b):
            raise ConfigError(f'k={k} must lie in [1, n={len(b)}]')
        if ones > k:
            raise HypothesisError(f'b_{k + 1} = 1 beyond k={k}: the weight prefactor diverges')
        object.__setattr__(self, 'b', b)
        object.__setattr__(self, 'k', k)

    @property
    def n(self):
        return len(self.b)

    @property
    def prefactor(self):
        # prod_{i > k} (1 - b_i^2)^(-1/2)
        return float(np.prod([(1 - x * x) ** -0.5 for x in self.b[self.k:]]))


def generalized_chi_tail(weights: GeneralizedChiWeights, alpha, beta, c, u, T=1.0, d0=1.0, H=None, P=None,
                         registry: Optional[ConstantsRegistry] = None):
    # Weighted chi-process sqrt(sum b_i^2 X_i^2): thm21_tail with n -> k times prod_{i > k} (1 - b_i^2)^(-1/2)
    e = thm21_tail(alpha, beta, c, weights.k, u, T, d0, H, P, registry)
    return AsymptoticEval(e.prefactor * weights.prefactor, e.exponent, e.level, e.regime + ':generalized',
                          e.marginal_const, e.marginal_power, e.flags, {**e.constants, 'weights': (weights.prefactor,
                                                                                                     'closed-form')})


def _field_window_constants(alpha0, beta, c, d0, alphas, ds, S1, S2, P_window, H_windows, reg):
    # P^{c D0^(-beta/alpha0)}_{alpha0,beta}[0, D0^(1/alpha0) S1] and H_{alpha_i}[0, D_i^(1/alpha_i) S2]
    _check_index(alpha0, 'alpha0')
    if len(alphas) != len(ds):
        raise ConfigError(f'need one coefficient per space axis, got alphas={alphas}, ds={ds}')
    if not (beta > 0 and c > 0 and d0 > 0 and S1 > 0) or any(d <= 0 for d in ds):
        raise ConfigError('need beta, c, D0, S1 and all D_i positive')
    cc, w = c * d0 ** (-beta / alpha0), d0 ** (1 / alpha0) * S1
    name = f'P^{cc:g}_{alpha0:g},{beta:g}[0,{w:g}]'
    constants = {name: _constant(P_window, name, lambda: reg.windowed_constant('piterbarg', alpha0, w, beta, cc))}
    H_windows = list(H_windows) if H_windows is not None else [None] * len(alphas)
    for a, d, h in zip(alphas, ds, H_windows):
        _check_index(a)
        if S2 is None:
            break
        wi = d ** (1 / a) * S2
        key = f'H_{a:g}[0,{wi:g}]'
        constants[key] = _constant(h, key, lambda: reg.windowed_constant('pickands', a, wi))
    return constants


def thm31_field_tail(alpha0, beta, c, d0, alphas: Sequence[float], ds: Sequence[float], S1, S2, f_u, P_window=None,
                     H_windows=None, registry: Optional[ConstantsRegistry] = None):
    """
    Separable field xi_u with covariance exp(-u^-2 D0 t^alpha0 - sum D_i |v_i|^alpha_i):
    P(sup xi_u(t, v) / (1 + c t^beta u^-2) > f(u)) over [0, S1] x prod [0, u^(-2/alpha_i) S2] ~
    P^{c D0^(-beta/alpha0)}_{alpha0,beta}[0, D0^(1/alpha0) S1] prod H_{alpha_i}[0, D_i^(1/alpha_i) S2] phi(f)/f
    """
    reg = registry or ConstantsRegistry()
    constants = _field_window_constants(alpha0, beta, c, d0, list(alphas), list(ds), S1, S2, P_window, H_windows, reg)
    pref = float(np.prod([v for v, _ in constants.values()]))
    return _gauss(pref, 0.0, f_u, f'thm31:axes={len(alphas)}', constants=constants)


def thm32_field_tail(volume, alpha0, beta, c, d0, alphas: Sequence[float], ds: Sequence[float], S1, u, P_window=None,
                     H=None, registry: Optional[ConstantsRegistry] = None):
    """
    Volume form over [0, S1] x A: V(A) P^{c D0^(-beta/alpha0)}_{alpha0,beta}[0, D0^(1/alpha0) S1]
    prod H_{alpha_i} D_i^(1/alpha_i) (2 pi)^(-1/2) u^(sum 2/alpha_i - 1) exp(-u^2/2). Without space axes the volume
    factor is 1.
    """
    reg = registry or ConstantsRegistry()
    alphas, ds = list(alphas), list(ds)
    flags = ()
    if alphas and not volume > 0:
        raise ConfigError(f'volume={volume} must be positive')
    if not alphas:
        volume, flags = 1.0, ('no-space-axes',)
    constants = _field_window_constants(alpha0, beta, c, d0, alphas, ds, S1, None, P_window, None, reg)
    pref = volume * next(iter(constants.values()))[0]
    H = list(H) if H is not None else [None] * len(alphas)
    for a, d, h in zip(alphas, ds, H):
        _check_index(a)
        v = _constant(h, f'H_{a:g}', lambda: reg.pickands_constant(a))
        constants[f'H_{a:g}'] = v
        pref *= v[0] * d ** (1 / a)
    return _gauss(pref, sum(2 / a for a in alphas), u, f'thm32:axes={len(alphas)}', flags, constants)
