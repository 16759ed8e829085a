"""
Pickands and Piterbarg constants: Monte Carlo estimates of the windowed functionals

    H_alpha[0, S]         = E exp(sup_{t in [0, S]} sqrt(2) B_alpha(t) - t^alpha)
    P^d_{alpha,beta}[0, S] = E exp(sup_{t in [0, S]} sqrt(2) B_alpha(t) - t^alpha - d t^beta)

(two-sided variants over [-S, S] with |t|), their S -> inf limits from window ladders, closed forms for alpha = 1, 2
and a registry of anchors and user overrides used by the asymptotic evaluators.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize, stats
from tqdm import tqdm

from utils import ConfigError, HypothesisError
from utils.general import LOGGER, TQDM_BAR_FORMAT, VERBOSE, colorstr
from utils.metrics import mean_stderr
from utils.samplers import SampleGrid, SeedSpec, sample_fbm

FAMILIES = ('pickands', 'piterbarg', 'piterbarg2')  # piterbarg2: two-sided window [-S, S]
MEMORY = 2 ** 25  # max path values held per chunk
PREFIX = colorstr('constants: ')


@dataclass(frozen=True)
class ConstantSpec:
    family: str = 'pickands'
    alpha: float = 1.0
    beta: Optional[float] = None  # defaults to alpha / 2
    d: float = 0.0
    S: float = 1.0
    delta: float = 1 / 256
    nsim: int = 10000
    seeds: SeedSpec = field(default_factory=lambda: SeedSpec(stream=1))
    threads: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown constant family '{self.family}', choose from {FAMILIES}")
        if not 0 < self.alpha <= 2:
            raise ConfigError(f'alpha={self.alpha} must lie in (0, 2]')
        if self.beta is None:
            object.__setattr__(self, 'beta', self.alpha / 2)
        if not self.beta > 0:
            raise ConfigError(f'beta={self.beta} must be positive')
        if self.family == 'pickands':
            object.__setattr__(self, 'd', 0.0)
        elif not self.d > 0:
            raise ConfigError(f'{self.family} constants need d > 0, got d={self.d}')
        if self.S < 0 or not 0 < self.delta or (self.S > 0 and self.delta > self.S):
            raise ConfigError(f'need 0 < delta <= S, got S={self.S}, delta={self.delta}')
        if self.nsim < 2:
            raise ConfigError(f'nsim={self.nsim} must be >= 2')

    @property
    def two_sided(self):
        return self.family == 'piterbarg2'


@dataclass
class ConstantEstimate:
    value: float
    stderr: float
    S: float
    delta: float
    nsim: int
    family: str = 'pickands'
    alpha: float = 1.0
    beta: Optional[float] = None
    d: float = 0.0
    flags: tuple = ()  # UNSTABLE, EXPERIMENTAL, EXTRAPOLATED, INTERCEPT
    diagnostics: dict = field(default_factory=dict)

    def __str__(self):
        f = f" [{', '.join(self.flags)}]" if self.flags else ''
        return f'{self.family}(alpha={self.alpha:g}, beta={self.beta:g}, d={self.d:g}) ' \
               f'S={self.S:g} delta={self.delta:.4g}: {self.value:.5g} +/- {self.stderr:.2g}{f}'


def _drifted_fbm(alpha, beta, d, t, path):
    # sqrt(2) B_alpha(t) - |t|^alpha - d|t|^beta
    t = np.abs(t)
    return math.sqrt(2) * path - t ** alpha - d * t ** beta


def window_sups(spec: ConstantSpec, windows: Sequence[float], strides: Sequence[int], step: float, first=0,
                batch=None):
    """
    Discrete suprema for every (window S, grid stride) pair from one set of fBm paths on [0, max S] (or [-max S,
    max S]) with fine step `step`. Window S uses the prefix of points with t <= S, stride k the subgrid of every k-th
    point, so all pairs share common random numbers and are nested.

    Returns
        sups (batch, len(windows), len(strides))
    """
    S_max = max(windows)
    n = max(0, round(S_max / step))
    batch = spec.nsim if batch is None else batch
    a, b, d = spec.alpha, spec.beta, spec.d
    if n == 0:
        return np.zeros((batch, len(windows), len(strides)))
    t = np.arange(n + 1) * step
    if spec.two_sided:  # B(S_max + t) - B(S_max) on [-S_max, S_max]
        p = sample_fbm(a, SampleGrid(0.0, 2 * n * step, 2 * n + 1), batch, spec.seeds, 0, first, spec.threads).values
        p = p - p[:, n:n + 1]
        halves = (_drifted_fbm(a, b, d, t, p[:, n:]), _drifted_fbm(a, b, d, t, p[:, n::-1]))
    else:
        p = sample_fbm(a, SampleGrid(0.0, n * step, n + 1), batch, spec.seeds, 0, first, spec.threads).values
        halves = (_drifted_fbm(a, b, d, t, p),)
    out = np.empty((batch, len(windows), len(strides)))
    for j, k in enumerate(strides):
        cm = np.maximum.reduce([np.maximum.accumulate(y[:, ::k], axis=1) for y in halves])
        for i, S in enumerate(windows):
            idx = round(S / (step * k))
            assert abs(idx * step * k - S) <= 1e-9 * S, f'window S={S} is not on the grid of step {step * k:g}'
            out[:, i, j] = cm[:, idx]
    return out


def sample_functionals(spec: ConstantSpec, windows, strides, step, desc='constants'):
    # exp(window sup) per replication, (nsim, len(windows), len(strides)), chunked on block boundaries
    B = spec.seeds.block
    m = (2 if spec.two_sided else 1) * round(max(windows) / step) + 1
    chunk = max(B, MEMORY // (3 * m) // B * B)
    starts = range(0, spec.nsim, chunk)
    out = np.empty((spec.nsim, len(windows), len(strides)))
    for first in tqdm(starts, desc=desc, bar_format=TQDM_BAR_FORMAT, disable=not VERBOSE or len(starts) < 2):
        batch = min(chunk, spec.nsim - first)
        out[first:first + batch] = np.exp(window_sups(spec, windows, strides, step, first, batch))
    return out


def _check_target(est, target):
    if target and est.stderr > target:
        LOGGER.warning(f'WARNING ⚠️ {PREFIX}stderr {est.stderr:.3g} above target {target:.3g}, increase nsim '
                       f'(currently {est.nsim})')


def estimate_windowed(spec: ConstantSpec, stderr_target=None):
    # Sample mean of exp(discrete sup) on the delta-grid of the window, a downward-biased estimate in delta
    if spec.S == 0:
        return ConstantEstimate(1.0, 0.0, 0.0, spec.delta, spec.nsim, spec.family, spec.alpha, spec.beta, spec.d)
    n = spec.S / spec.delta
    if abs(n - round(n)) > 1e-9 * max(1.0, n):
        raise ConfigError(f'window S={spec.S} is not a multiple of delta={spec.delta}')
    y = sample_functionals(spec, [spec.S], [1], spec.S / round(n))[:, 0, 0]
    est = ConstantEstimate(*mean_stderr(y), spec.S, spec.delta, spec.nsim, spec.family, spec.alpha, spec.beta, spec.d)
    _check_target(est, stderr_target)
    return est


def richardson(fine, coarse, ratio, order):
    # Richardson extrapolation of values at steps delta and ratio * delta with bias order `order` in delta
    return fine + (fine - coarse) / (ratio ** order - 1)


def intercept_weights(windows):
    # Least squares weights w with intercept = sum w_i y_i for the fit y = a + b / S
    x = 1 / np.asarray(windows, dtype=float)
    X = np.stack([np.ones_like(x), x], 1)
    return np.linalg.pinv(X)[0]


def _snap_step(windows, base):
    # Largest step <= base that divides every window exactly
    fr = [Fraction(float(s)).limit_denominator(10 ** 6) for s in windows]
    den = int(np.lcm.reduce([f.denominator for f in fr]))
    g = Fraction(int(np.gcd.reduce([f.numerator * (den // f.denominator) for f in fr])), den)
    return float(g) / math.ceil(float(g) / base - 1e-9)


def _ladder(spec: ConstantSpec, s_ladder, delta_divisors, extrapolate, stable_tol, method, stderr_target):
    # Shared ladder of pickands_limit (method 'largest' or 'intercept') and piterbarg_limit (method 'window')
    windows = sorted(float(s) for s in s_ladder)
    divisors = sorted(int(k) for k in delta_divisors)
    if len(windows) < 3 or len(divisors) < 2:
        raise ConfigError(f'need >= 3 windows and >= 2 steps, got S={windows}, divisors={divisors}')
    if windows[0] <= 0 or divisors[0] < 1:
        raise ConfigError('windows must be positive and divisors >= 1')
    if any(b % a for a, b in zip(divisors, divisors[1:])):
        raise ConfigError(f'delta divisors {divisors} must each divide the next for nested grids')
    S_max = windows[-1]
    # delta_j ~ S_max / divisor_j, common to all windows and snapped so every window ends on the coarsest grid
    step = _snap_step(windows, S_max / divisors[0]) / (divisors[-1] // divisors[0])
    strides = [divisors[-1] // k for k in divisors]  # coarse ... fine
    deltas = [step * k for k in strides]
    y = sample_functionals(spec, windows, strides, step, desc=f'{spec.family} alpha={spec.alpha:g}')
    if method != 'window':
        y = y / np.asarray(windows)[None, :, None]  # H[0, S] / S
    if extrapolate:  # per replication, so stderr stays exact
        y = richardson(y[:, :, -1:], y[:, :, -2:-1], deltas[-2] / deltas[-1], float(extrapolate))
    mean = y.mean(0)
    se = y.std(0, ddof=1) / math.sqrt(y.shape[0])
    fine, fse = mean[:, -1], se[:, -1]
    per_rep = y[:, :, -1] @ intercept_weights(windows)
    a, a_se = mean_stderr(per_rep)
    if method == 'intercept':  # linear in 1/S up to noise
        x = 1 / np.asarray(windows)
        resid = np.abs(fine - np.polyval(np.polyfit(x, fine, 1), x))
        stable = bool(np.all(resid <= np.maximum(3 * fse, stable_tol * abs(a))))
    elif method == 'largest':  # H[0, S] / S eventually decreasing toward H
        stable = bool(np.all(np.diff(fine) <= 3 * np.hypot(fse[1:], fse[:-1])))
        stable &= abs(fine[-1] - fine[-2]) <= stable_tol * abs(fine[-1])
    else:  # windowed Piterbarg values are non-decreasing in S on common random numbers
        stable = bool(np.all(np.diff(fine) >= -1e-12 * abs(fine[1:])))
        stable &= abs(fine[-1] - fine[-2]) <= stable_tol * abs(fine[-1])
    flags = [] if stable else ['UNSTABLE']
    if not stable:
        LOGGER.warning(f'WARNING ⚠️ {PREFIX}ladder {np.round(fine, 4).tolist()} over S={windows} did not stabilize')
    if extrapolate:
        flags.append('EXTRAPOLATED')
    diagnostics = {'windows': windows,
                   'deltas': deltas[-1:] if extrapolate else deltas,
                   'values': mean.tolist(),
                   'stderr': se.tolist(),
                   'intercept': a,
                   'intercept_stderr': a_se,
                   'largest': float(fine[-1])}
    value, stderr = (a, a_se) if method == 'intercept' else (float(fine[-1]), float(fse[-1]))
    if method == 'intercept':
        flags.append('INTERCEPT')
    est = ConstantEstimate(value, stderr, S_max, deltas[-1], spec.nsim, spec.family, spec.alpha, spec.beta, spec.d,
                           tuple(flags), diagnostics)
    _check_target(est, stderr_target)
    return est


def pickands_limit(alpha, s_ladder=(2, 5, 10, 20), delta_divisors=(256, 1024), nsim=10000, seeds=None, threads=1,
                   method='largest', extrapolate=None, stable_tol=0.1, stderr_target=None):
    """
    Pickands constant H_alpha = lim H_alpha[0, S] / S from a window ladder on common random numbers

    Arguments
        method:         'largest' takes H[0, S] / S at the largest S and finest delta, 'intercept' the intercept of a
                        least squares fit of H[0, S] / S against 1 / S over the ladder (reported as a diagnostic always)
        extrapolate:    bias order in delta for Richardson extrapolation over the two finest steps, None to disable
    """
    if method not in ('largest', 'intercept'):
        raise ConfigError(f"method must be 'largest' or 'intercept', got '{method}'")
    spec = ConstantSpec('pickands', alpha, S=max(s_ladder), delta=max(s_ladder) / max(delta_divisors), nsim=nsim,
                        seeds=seeds or SeedSpec(stream=1), threads=threads)
    est = _ladder(spec, s_ladder, delta_divisors, extrapolate, stable_tol, method, stderr_target)
    LOGGER.info(f'{PREFIX}{est}')
    return est


def piterbarg_limit(alpha, beta, d, s_ladder=(2, 5, 10, 20), delta_divisors=(256, 1024), nsim=10000, seeds=None,
                    threads=1, two_sided=False, extrapolate=None, stable_tol=0.05, stderr_target=None):
    # Piterbarg constant P^d_{alpha,beta} = lim P^d_{alpha,beta}[0, S], final value at the largest S and finest delta
    spec = ConstantSpec('piterbarg2' if two_sided else 'piterbarg', alpha, beta, d, S=max(s_ladder),
                        delta=max(s_ladder) / max(delta_divisors), nsim=nsim, seeds=seeds or SeedSpec(stream=2),
                        threads=threads)
    flags = ()
    if not (math.isclose(beta, alpha / 2) or math.isclose(beta, alpha)):
        flags = ('EXPERIMENTAL',)
        LOGGER.warning(f'WARNING ⚠️ {PREFIX}beta={beta} differs from alpha/2, experimental Piterbarg constant')
    est = _ladder(spec, s_ladder, delta_divisors, extrapolate, stable_tol, 'window', stderr_target)
    est.flags = flags + est.flags
    LOGGER.info(f'{PREFIX}{est}')
    return est


# Closed forms -------------------------------------------------------------------------------------------------------
def closed_form_P21(d):
    """
    P^d_{2,1} two ways: the printed form Phi(d/sqrt2) + e^(d^2/4 - 1)/(d sqrt(pi)) and the form derived from
    B_2(t) = tZ, sup_t (sqrt2 tZ - t^2 - dt) = ((sqrt2 Z - d)_+)^2 / 4, Phi(d/sqrt2) + e^(-d^2/4)/(d sqrt(pi))

    Returns
        (printed_value, derived_value)
    """
    if not d > 0:
        raise ConfigError(f'd={d} must be positive')
    base = stats.norm.cdf(d / math.sqrt(2))
    sp = math.sqrt(math.pi)
    return base + math.exp(d ** 2 / 4 - 1) / (d * sp), base + math.exp(-d ** 2 / 4) / (d * sp)


def closed_form_P21_window(d, S):
    # P^d_{2,1}[0, S] from B_2(t) = tZ
    x = d / math.sqrt(2)
    return stats.norm.cdf(x) + math.exp(-d ** 2 / 4) * -math.expm1(-d * S) / (d * math.sqrt(math.pi)) + \
        math.exp(-d * S) * stats.norm.sf(x)


def closed_form_P21_two_sided(d):
    # Two-sided limit over [-S, S], S -> inf, from B_2(t) = tZ
    return 2 * stats.norm.cdf(d / math.sqrt(2)) - 1 + 2 * math.exp(-d ** 2 / 4) / (d * math.sqrt(math.pi))


def closed_form_H2_window(S):
    # H_2[0, S] = 1 + S / sqrt(pi)
    return 1 + S / math.sqrt(math.pi)


def closed_form_H1_window(S):
    # H_1[0, S] from the maximum of Brownian motion with drift
    x = math.sqrt(S / 2)
    return (2 + S) * stats.norm.cdf(x) + math.sqrt(2 * S) * stats.norm.pdf(x)


def alpha2_quadrature(d=0.0, beta=1.0, S=1.0, two_sided=False):
    # Windowed functional at alpha = 2 by quadrature over Z with B_2(t) = tZ, sup over t by bounded minimization
    def sup(z):
        f = lambda t: -(math.sqrt(2) * t * z - t * t - d * t ** beta)
        r = optimize.minimize_scalar(f, bounds=(0, S), method='bounded', options={'xatol': 1e-12})
        return max(0.0, -f(S), -r.fun)

    def integrand(z):
        s = sup(z) if not two_sided else max(sup(z), sup(-z))
        return math.exp(s + stats.norm.logpdf(z))  # exp(s) alone overflows for wide windows

    hi = math.sqrt(2) * S + d + 40  # integrand decays like exp(-(z - sqrt2 S)^2/2) beyond the window
    lo = -hi if two_sided else -40.0
    pts = sorted({0.0, d / math.sqrt(2), (2 * S + d) / math.sqrt(2)} | ({-(2 * S + d) / math.sqrt(2)} if two_sided
                                                                      else set()))
    val, _ = integrate.quad(integrand, lo, hi, points=[p for p in pts if lo < p < hi], limit=400, epsabs=1e-10)
    return val


# Registry -----------------------------------------------------------------------------------------------------------
ANCHORS = {('pickands', 1.0): 1.0, ('pickands', 2.0): 1 / math.sqrt(math.pi)}


@dataclass
class ConstantsRegistry:
    """
    Anchored constants plus user overrides. Lookups return (value, provenance) where provenance is 'user', 'anchor',
    'estimate' or 'closed-form'; a constant with neither raises HypothesisError.
    """
    pickands: dict = field(default_factory=dict)  # {alpha: value or ConstantEstimate}
    piterbarg: dict = field(default_factory=dict)  # {(alpha, beta, d): value or ConstantEstimate}
    piterbarg2: dict = field(default_factory=dict)  # two-sided limits, same keys
    windowed: dict = field(default_factory=dict)  # {(family, alpha, beta, d, S): value or ConstantEstimate}

    @staticmethod
    def _unpack(x, kind):
        return (x.value, 'estimate') if isinstance(x, ConstantEstimate) else (float(x), kind)

    def pickands_constant(self, alpha):
        a = float(alpha)
        if a in self.pickands:
            return self._unpack(self.pickands[a], 'user')
        if ('pickands', a) in ANCHORS:
            return ANCHORS[('pickands', a)], 'anchor'
        raise HypothesisError(f'Pickands constant H_{a:g} is not anchored, supply it (pickands: {{{a:g}: value}})')

    def piterbarg_constant(self, alpha, beta, d, two_sided=False):
        key = (float(alpha), float(beta), float(d))
        table = self.piterbarg2 if two_sided else self.piterbarg
        if key in table:
            return self._unpack(table[key], 'user')
        if key[0] == 2 and key[1] == 1 and key[2] > 0:
            return (closed_form_P21_two_sided(key[2]) if two_sided else closed_form_P21(key[2])[1]), 'closed-form'
        raise HypothesisError(f"{'two-sided ' if two_sided else ''}Piterbarg constant P^{d:g}_{alpha:g},{beta:g} is "
                              f"not anchored, supply it (piterbarg: {{'{alpha:g},{beta:g},{d:g}': value}})")

    def windowed_constant(self, family, alpha, S, beta=None, d=0.0):
        # Windowed H_alpha[0, S] or P^d_{alpha,beta}[0, S]; S = 0 gives 1
        a, S = float(alpha), float(S)
        beta = a / 2 if beta is None else float(beta)
        if S == 0:
            return 1.0, 'closed-form'
        key = (family, a, beta if family != 'pickands' else None, float(d) if family != 'pickands' else 0.0, S)
        if key in self.windowed:
            return self._unpack(self.windowed[key], 'user')
        if family == 'pickands' and a == 2:
            return closed_form_H2_window(S), 'closed-form'
        if family == 'pickands' and a == 1:
            return closed_form_H1_window(S), 'closed-form'
        if family == 'piterbarg' and a == 2 and beta == 1 and d > 0:
            return closed_form_P21_window(d, S), 'closed-form'
        raise HypothesisError(f'windowed {family} constant (alpha={a:g}, beta={beta:g}, d={d:g}, S={S:g}) is not '
                              f'anchored, supply it or estimate it with estimate_windowed()')

    def add_windowed(self, est: ConstantEstimate):
        b = est.beta if est.family != 'pickands' else None
        self.windowed[(est.family, float(est.alpha), b, float(est.d), float(est.S))] = est

    @classmethod
    def from_config(cls, pickands=None, piterbarg=None):
        """
        Registry from config overrides: pickands {alpha: value}, piterbarg {"alpha,beta,d": value} or a list of
        [alpha, beta, d, value] entries
        """
        reg = cls()
        try:
            for a, v in (pickands or {}).items():
                reg.pickands[float(a)] = float(v)
            items = piterbarg.items() if isinstance(piterbarg, dict) else \
                ((tuple(x[:3]), x[3]) for x in piterbarg or ())
            for k, v in items:
                k = tuple(float(x) for x in (k.split(',') if isinstance(k, str) else k))
                assert len(k) == 3, f'piterbarg key {k} needs alpha, beta, d'
                reg.piterbarg[k] = float(v)
        except (AssertionError, TypeError, ValueError, AttributeError, IndexError) as e:
            raise ConfigError(f'invalid constant overrides: {e}') from e
        return reg
