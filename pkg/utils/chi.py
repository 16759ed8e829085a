"""
Chi-processes chi_n(t) = ||(X_1(t), ..., X_n(t))|| from n independent Gaussian copies, supremum-minus-trend
statistics and Monte Carlo tail estimates

Usage:
    from models.covariance import StationaryModel
    from utils.chi import ChiExperiment, estimate_tail
    est = estimate_tail(ChiExperiment(StationaryModel('expower', 1.0), n=2, u=3.5, nsim=10 ** 6))
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import special
from tqdm import tqdm

from models.covariance import NonstationaryModel, StationaryModel
from models.trend import TrendSpec, eval_trend
from utils import ConfigError
from utils.general import LOGGER, TQDM_BAR_FORMAT, VERBOSE
from utils.metrics import binomial_interval
from utils.samplers import CHOLESKY_CAP, PathBatch, SampleGrid, SeedSpec, sample_copies

MEMORY = 2 ** 25  # max path values held per chunk


@dataclass
class ChiExperiment:
    model: Union[StationaryModel, NonstationaryModel]
    n: int = 2
    trend: TrendSpec = field(default_factory=TrendSpec)
    T1: float = 0.0
    T: Optional[float] = None  # defaults to the model horizon (1 for stationary models)
    u: float = 1.0
    points_per_cluster: int = 8
    single_point: bool = False
    nsim: int = 100000
    seeds: SeedSpec = field(default_factory=SeedSpec)
    confidence: float = 0.99
    threads: int = 1

    def __post_init__(self):
        if self.T is None:
            self.T = getattr(self.model, 'T', 1.0)
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f'degrees of freedom n={self.n} must be an integer >= 1')
        if self.u < 0:
            raise ConfigError(f'level u={self.u} must be >= 0')
        if not self.T >= self.T1 >= 0:
            raise ConfigError(f'interval [T1={self.T1}, T={self.T}] is empty or starts before 0')
        if self.nsim < 100:
            raise ConfigError(f'nsim={self.nsim} < 100')
        if not 0 < self.confidence < 1:
            raise ConfigError(f'confidence={self.confidence} must lie in (0, 1)')
        if isinstance(self.model, NonstationaryModel) and self.T > self.model.T:
            raise ConfigError(f'T={self.T} beyond the model horizon {self.model.T}')

    def grid(self, u=None):
        # Uniform grid of [T1, T] resolving the cluster scale u^(-2/alpha) with points_per_cluster points
        if self.single_point:
            return SampleGrid(self.T1, self.T1, 1)
        u = self.u if u is None else u
        if u <= 0:
            return SampleGrid.resolve(self.T1, self.T, 1.0, self.points_per_cluster)
        grid = SampleGrid.resolve(self.T1, self.T, u ** (-2 / self.model.local_index), self.points_per_cluster)
        if grid.m > CHOLESKY_CAP and not self.fast:
            LOGGER.warning(f'WARNING ⚠️ {grid.m} grid points needed at u={u:g} exceed the Cholesky cap, using '
                           f'{CHOLESKY_CAP}: the grid does not resolve the Pickands scale')
            grid = SampleGrid(self.T1, self.T, CHOLESKY_CAP)
        return grid

    @property
    def fast(self):
        # models sampled without a dense Cholesky factor
        return isinstance(self.model, StationaryModel) or self.model.kind == 'fbm'


@dataclass(frozen=True)
class TailEstimate:
    phat: float
    k: int
    nsim: int
    ci: tuple
    u: float
    confidence: float = 0.99
    grid: Optional[SampleGrid] = None
    seed: int = 0

    def __str__(self):
        return f'u={self.u:g} phat={self.phat:.4g} ({self.k}/{self.nsim}) ' \
               f'{self.confidence:.0%} CI [{self.ci[0]:.4g}, {self.ci[1]:.4g}]'


def chi_from_paths(batches: Sequence[PathBatch]):
    # Pointwise Euclidean norm of n PathBatches on a common grid
    if not batches:
        raise ValueError('chi_from_paths needs at least one PathBatch')
    b0 = batches[0]
    for b in batches[1:]:
        if b.grid != b0.grid or b.values.shape != b0.values.shape:
            raise ValueError(f'mismatched PathBatches: {b.grid} {b.values.shape} vs {b0.grid} {b0.values.shape}')
    if len({b.copy for b in batches}) != len(batches):
        raise ValueError('chi copies must be driven by disjoint substreams (distinct copy indices)')
    sq = np.zeros_like(b0.values)
    for b in batches:
        sq += b.values ** 2
    return PathBatch(np.sqrt(sq), b0.grid, f'chi{len(batches)}:{b0.model}', b0.seed, b0.reps)


def sup_statistic(chi: PathBatch, trend: TrendSpec = TrendSpec()):
    # Per replication max over the grid of chi(t) - g(t)
    if trend.is_zero:
        return chi.values.max(1)
    g = eval_trend(trend, chi.grid.points())
    return (chi.values - np.atleast_1d(g)).max(1)


def exact_chi_survival(n, u):
    # P(chi_n(0) > u) = Q(n/2, u^2/2), regularized upper incomplete gamma
    assert n >= 1, 'n must be >= 1'
    p = special.gammaincc(n / 2, np.square(u) / 2)
    return float(p) if np.ndim(p) == 0 else p


def simulate_statistics(exp: ChiExperiment, grid: Optional[SampleGrid] = None, desc='chi'):
    # Supremum statistics of all nsim replications, generated chunk by chunk on block boundaries
    grid = grid or exp.grid()
    B = exp.seeds.block
    chunk = max(B, MEMORY // (grid.m * exp.n) // B * B)
    starts = range(0, exp.nsim, chunk)
    out = np.empty(exp.nsim)
    pbar = tqdm(starts, desc=desc, bar_format=TQDM_BAR_FORMAT, disable=not VERBOSE or len(starts) < 2)
    for first in pbar:
        batch = min(chunk, exp.nsim - first)
        copies = sample_copies(exp.model, grid, batch, exp.seeds, exp.n, first, exp.threads)
        out[first:first + batch] = sup_statistic(chi_from_paths(copies), exp.trend)
    return out


def estimate_tails(exp: ChiExperiment, levels: Sequence[float]):
    """
    Tail estimates P(sup (chi_n - g) > u) for each u in levels from one set of paths (common random numbers). The
    grid resolves the cluster scale at the largest level.
    """
    levels = [float(u) for u in levels]
    if any(u < 0 for u in levels):
        raise ConfigError(f'levels {levels} must be >= 0')
    grid = exp.grid(max(levels))
    stat = simulate_statistics(exp, grid)
    out = []
    for u in levels:
        k = int((stat > u).sum())
        out.append(TailEstimate(k / exp.nsim, k, exp.nsim, binomial_interval(k, exp.nsim, exp.confidence), u,
                                exp.confidence, grid, exp.seeds.master))
    return out


def estimate_tail(exp: ChiExperiment):
    return estimate_tails(exp, [exp.u])[0]


@dataclass(frozen=True)
class SphereReport:
    passed: bool
    violations: int
    worst: Optional[int]  # replication with the largest excess
    max_excess: float  # max of sup_s <s, X> - chi, and of |<X/|X|, X> - chi|


def random_directions(k, n, seeds: SeedSpec = SeedSpec(stream=7)):
    # k uniform directions on the unit sphere of R^n
    z = seeds.generator(0, 0).standard_normal((k, n))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def sphere_check(x, directions, tol=1e-12):
    # Check max_s <s, X> <= chi = ||X|| over sampled directions s, with equality at s = X/||X||
    x, s = np.atleast_2d(np.asarray(x, dtype=float)), np.atleast_2d(np.asarray(directions, dtype=float))
    if x.shape[1] != s.shape[1]:
        raise ValueError(f'paths have n={x.shape[1]} components, directions {s.shape[1]}')
    if not np.allclose(np.linalg.norm(s, axis=1), 1, atol=1e-9):
        raise ValueError('directions must lie on the unit sphere')
    chi = np.linalg.norm(x, axis=1)
    scale = np.maximum(1, chi)
    over = (x @ s.T).max(1) - chi
    unit = np.divide(x, chi[:, None], out=np.zeros_like(x), where=chi[:, None] > 0)
    attained = np.abs((unit * x).sum(1) - chi)
    excess = np.maximum(over, attained) / scale
    bad = excess > tol
    worst = int(np.argmax(excess)) if bad.any() else None
    return SphereReport(not bad.any(), int(bad.sum()), worst, float(excess.max(initial=0.0)))


def build_experiment(cfg: dict, model, trend: TrendSpec, threads=1):
    # ChiExperiment from scenario config keys (n, T1, T, u, points_per_cluster, single_point, nsim, seed, ...)
    u = cfg.get('u', [3.0])
    try:
        return ChiExperiment(model=model,
                             n=int(cfg.get('n', 2)),
                             trend=trend,
                             T1=float(cfg.get('T1', 0.0)),
                             T=float(cfg.get('T', getattr(model, 'T', 1.0))),
                             u=float(max(u) if isinstance(u, (list, tuple)) else u),
                             points_per_cluster=int(cfg.get('points_per_cluster', 8)),
                             single_point=bool(cfg.get('single_point', False)),
                             nsim=int(cfg.get('nsim', 100000)),
                             seeds=SeedSpec(int(cfg.get('seed', 0)), block=int(cfg.get('block', 4096))),
                             confidence=float(cfg.get('confidence', 0.99)),
                             threads=threads)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f'invalid experiment parameters: {e}') from e
