"""
Exact Gaussian samplers: circulant embedding for stationary models, Cholesky with jitter for general covariance
matrices, fractional Brownian motion and separable random fields

Random numbers come from counter-based Philox substreams keyed by (master seed, stream, copy, block). Replication r
lives in block r // block_size, so a replication always receives the same numbers whatever the batch boundaries or
the number of worker threads.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from multiprocessing.pool import ThreadPool
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from models.covariance import NonstationaryModel, StationaryModel
from utils import SamplerError
from utils.general import LOGGER

CHOLESKY_CAP = 4096  # max covariance matrix size
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)  # relative to trace/m
EIG_TOL = 1e-9  # circulant eigenvalues above -EIG_TOL * max are clipped to 0
EMBED_CAP = 2 ** 20  # largest circulant embedding tried before falling back to Cholesky
CHUNK = 2 ** 22  # max complex values per FFT chunk


@dataclass(frozen=True)
class SampleGrid:
    start: float
    end: float
    m: int

    def __post_init__(self):
        assert int(self.m) == self.m and self.m >= 1, f'grid needs m >= 1 points, got {self.m}'
        assert self.end >= self.start, f'grid end {self.end} < start {self.start}'
        object.__setattr__(self, 'm', int(self.m))

    @property
    def step(self):
        return (self.end - self.start) / (self.m - 1) if self.m > 1 else 0.0

    def points(self):
        return np.array([self.start]) if self.m == 1 else np.linspace(self.start, self.end, self.m)

    @classmethod
    def resolve(cls, start, end, scale, points_per_cluster=8):
        # Uniform grid of [start, end] with step <= scale / points_per_cluster
        if end <= start:
            return cls(start, start, 1)
        return cls(start, end, math.ceil((end - start) * points_per_cluster / scale - 1e-9) + 1)

    def __str__(self):
        return f'[{self.start:g}, {self.end:g}] m={self.m} step={self.step:.4g}'


@dataclass(frozen=True)
class SeedSpec:
    master: int = 0
    stream: int = 0  # separates independent uses of one master seed
    block: int = 4096  # replications per substream

    def __post_init__(self):
        assert self.block >= 1, 'block size must be >= 1'

    def generator(self, copy, b):
        # Counter-based generator of block b for copy `copy`
        ss = np.random.SeedSequence(int(self.master), spawn_key=(int(self.stream), int(copy), int(b)))
        return np.random.Generator(np.random.Philox(ss))

    def blocks(self, first, batch):
        # (block, lo, hi) triples covering replications [first, first + batch), lo/hi relative to the block start
        B, stop = self.block, first + batch
        for b in range(first // B, (stop - 1) // B + 1):
            yield b, max(first, b * B) - b * B, min(stop, (b + 1) * B) - b * B

    def normals(self, m, copy, b, lo, hi):
        # Time-major normals of one block, rows lo:hi, so nested prefixes in m share their leading columns
        return self.generator(copy, b).standard_normal((m, self.block)).T[lo:hi]


@dataclass
class PathBatch:
    values: np.ndarray  # (batch, m)
    grid: SampleGrid
    model: str = ''
    seed: int = 0
    reps: tuple = (0, 0)  # replication index range [first, stop)
    copy: int = 0
    jitter: float = 0.0

    def __post_init__(self):
        assert self.values.ndim == 2 and self.values.shape[1] == self.grid.m, 'values must be (batch, grid.m)'

    @property
    def batch(self):
        return self.values.shape[0]


@dataclass
class FieldBatch:
    values: np.ndarray  # (batch, mt, *mv)
    t_grid: SampleGrid
    v_grids: tuple = ()
    seed: int = 0
    reps: tuple = (0, 0)
    jitter: float = 0.0
    meta: dict = field(default_factory=dict)


def _map_blocks(fn, blocks, threads=1):
    # Apply fn to each (b, lo, hi) block, ordered, on a thread pool
    blocks = list(blocks)
    if threads <= 1 or len(blocks) == 1:
        return [fn(x) for x in blocks]
    with ThreadPool(min(threads, len(blocks))) as pool:
        return list(pool.imap(fn, blocks))


@lru_cache(maxsize=16)
def _embedding(model: StationaryModel, step, m):
    """
    Square roots of the eigenvalues of a circulant embedding of the correlation on m points with spacing `step`.
    The embedding size M = 2^k starts at 2(m-1) and doubles while the embedding is not non-negative definite.

    Returns
        sqrt(lambda / M) of length M, or None when no size up to EMBED_CAP works
    """
    M = 2 ** max(1, math.ceil(math.log2(2 * (m - 1))))
    lo = hi = 0.0
    while M <= max(EMBED_CAP, 2 * (m - 1)):
        r = model.cov(np.arange(M // 2 + 1) * step)
        lam = np.fft.fft(np.concatenate([r, r[-2:0:-1]])).real
        lo, hi = lam.min(), lam.max()
        if lo >= -EIG_TOL * hi:
            if lo < 0:
                LOGGER.warning(f'WARNING ⚠️ clipped {int((lam < 0).sum())} circulant eigenvalues >= {lo:.3g} to 0')
            LOGGER.debug(f'{model.id}: circulant embedding of size {M} for m={m}')
            return np.sqrt(np.maximum(lam, 0) / M)
        M *= 2
    LOGGER.warning(f'WARNING ⚠️ no circulant embedding of {model.id} up to size {M // 2}, '
                   f'min eigenvalue {lo:.3g} (max {hi:.3g})')
    return None


@lru_cache(maxsize=8)
def _toeplitz_factor(model: StationaryModel, step, m):
    # Cached cholesky_factor() of the stationary correlation matrix on m points
    return cholesky_factor(linalg.toeplitz(model.cov(np.arange(m) * step)))


def sample_stationary(model: StationaryModel, grid: SampleGrid, batch: int, seeds: SeedSpec, copy=0, first=0,
                      threads=1):
    # Exact draws of a stationary model on a uniform grid by circulant embedding, Cholesky if no embedding works
    assert batch >= 1, 'batch must be >= 1'
    m = grid.m
    if m == 1:
        fn = lambda x: seeds.normals(1, copy, *x)
    else:
        sq = _embedding(model, grid.step, m)
        if sq is None:
            if m > CHOLESKY_CAP:
                raise SamplerError(f'circulant embedding of {model.id} failed up to size {EMBED_CAP} and m={m} '
                                   f'exceeds the Cholesky cap {CHOLESKY_CAP}', size=m, cap=CHOLESKY_CAP)
            return sample_gaussian_cholesky(None, batch, seeds, copy, first, threads, grid, model.id,
                                            _toeplitz_factor(model, grid.step, m))
        M = len(sq)

        def fn(x):
            b, lo, hi = x
            gen, out, chunk = seeds.generator(copy, b), [], max(1, CHUNK // M)
            for i in range(0, hi, chunk):  # rows before lo are drawn and dropped to keep the stream aligned
                z = gen.standard_normal((min(chunk, hi - i), 2, M))
                y = np.fft.fft(sq * (z[:, 0] + 1j * z[:, 1]), axis=1).real[:, :m]
                out.append(y[max(lo - i, 0):])
            return np.concatenate(out)

    values = np.concatenate(_map_blocks(fn, seeds.blocks(first, batch), threads))
    return PathBatch(values, grid, model.id, seeds.master, (first, first + batch), copy)


def cholesky_factor(cov, cap=CHOLESKY_CAP):
    """
    Lower Cholesky factor of a covariance matrix with the smallest jitter of JITTER_LADDER * trace/m that succeeds.
    Rows with exactly zero variance are removed before factorization and sampled as 0.

    Returns
        L (k, k), jitter, keep (bool mask of the k retained rows)
    """
    cov = np.asarray(cov, dtype=float)
    m = cov.shape[0]
    assert cov.ndim == 2 and cov.shape == (m, m), f'covariance must be square, got {cov.shape}'
    if m > cap:
        raise SamplerError(f'covariance size {m} exceeds the Cholesky cap {cap}, use the stationary sampler',
                           size=m, cap=cap)
    if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14):
        raise SamplerError('covariance matrix is not symmetric')
    keep = np.diag(cov) != 0
    a = cov[np.ix_(keep, keep)]
    k = a.shape[0]
    if k == 0:
        return np.zeros((0, 0)), 0.0, keep
    scale = max(np.trace(a) / k, np.finfo(float).tiny)
    info = 0
    for j in JITTER_LADDER:
        L, info = lapack.dpotrf(a + j * scale * np.eye(k), lower=1, clean=1)
        if info == 0:
            if j:
                LOGGER.warning(f'WARNING ⚠️ Cholesky needed jitter {j * scale:.3g} on a {k}x{k} covariance')
            return L, j * scale, keep
    assert info > 0, f'dpotrf illegal argument {-info}'
    raise SamplerError(f'Cholesky failed at max jitter {JITTER_LADDER[-1] * scale:.3g}, '
                       f'leading minor {info} not positive definite', minor=int(info),
                       jitter=JITTER_LADDER[-1] * scale)


def sample_gaussian_cholesky(cov, batch: int, seeds: SeedSpec, copy=0, first=0, threads=1, grid=None, model='',
                             factor=None, cap=CHOLESKY_CAP):
    # Exact draws of N(0, cov + jitter I); factor=(L, jitter, keep) reuses a cholesky_factor() result
    assert batch >= 1, 'batch must be >= 1'
    L, jitter, keep = factor if factor is not None else cholesky_factor(cov, cap)
    m = len(keep)
    idx = np.flatnonzero(keep)

    def fn(x):
        z = seeds.normals(m, copy, *x)
        y = np.zeros_like(z)
        y[:, idx] = z[:, idx] @ L.T
        return y

    values = np.concatenate(_map_blocks(fn, seeds.blocks(first, batch), threads))
    grid = grid or SampleGrid(0.0, float(m - 1), m)
    return PathBatch(values, grid, model, seeds.master, (first, first + batch), copy, jitter)


def fbm_cov(alpha, t):
    # Covariance matrix of B_alpha on times t, Var B_alpha(t) = |t|^alpha
    s, u = np.meshgrid(t, t, indexing='ij')
    return 0.5 * (np.abs(s) ** alpha + np.abs(u) ** alpha - np.abs(u - s) ** alpha)


def sample_fbm(alpha, grid: SampleGrid, batch: int, seeds: SeedSpec, copy=0, first=0, threads=1):
    """
    Exact draws of fractional Brownian motion B_alpha (Hurst alpha/2) on a grid of [start, end], start >= 0

    alpha = 2 is B_2(t) = t Z. Grids whose start is a multiple of the step use fractional Gaussian noise by circulant
    embedding and a cumulative sum; other grids use Cholesky.
    """
    assert 0 < alpha <= 2, f'alpha={alpha} must lie in (0, 2]'
    assert grid.start >= 0, 'fbm grid must start at t >= 0'
    t, m = grid.points(), grid.m
    mid = f'fbm(alpha={alpha:g})'
    if alpha == 2:
        fn = lambda x: seeds.normals(1, copy, *x) * t
        values = np.concatenate(_map_blocks(fn, seeds.blocks(first, batch), threads))
        return PathBatch(values, grid, mid, seeds.master, (first, first + batch), copy)

    step = grid.step
    j0 = round(grid.start / step) if step > 0 else 0
    if step > 0 and abs(j0 * step - grid.start) <= 1e-9 * max(step, grid.start):
        n = j0 + m - 1  # increments on the lattice 0, step, ..., end
        fgn = sample_stationary(StationaryModel('fgn', alpha), SampleGrid(0.0, n - 1.0, n), batch, seeds, copy, first,
                                threads)
        path = np.zeros((batch, n + 1))
        np.cumsum(fgn.values * step ** (alpha / 2), axis=1, out=path[:, 1:])
        values = path[:, j0:]
    else:
        values = sample_gaussian_cholesky(fbm_cov(alpha, t), batch, seeds, copy, first, threads, grid).values
    return PathBatch(values, grid, mid, seeds.master, (first, first + batch), copy)


@lru_cache(maxsize=8)
def model_factor(model: NonstationaryModel, grid: SampleGrid):
    # Cached cholesky_factor() of a normalized non-stationary covariance on a grid
    t = grid.points()
    s, u = np.meshgrid(t, t, indexing='ij')
    return cholesky_factor(model.cov(s, u))


def sample_copies(model, grid: SampleGrid, batch: int, seeds: SeedSpec, n=1, first=0, threads=1):
    # n independent PathBatches of a (normalized) covariance model, copy i driven by substreams of copy index i
    if isinstance(model, StationaryModel):
        return [sample_stationary(model, grid, batch, seeds, i, first, threads) for i in range(n)]
    assert isinstance(model, NonstationaryModel), f'unsupported model {model!r}'
    if model.kind == 'fbm':
        out = []
        for i in range(n):
            p = sample_fbm(model.alpha, grid, batch, seeds, i, first, threads)
            p.values /= model.sigma_T
            p.model = model.id
            out.append(p)
        return out
    factor = model_factor(model, grid)
    return [sample_gaussian_cholesky(None, batch, seeds, i, first, threads, grid, model.id, factor) for i in range(n)]


def _axis_factor(alpha, d, grid: SampleGrid):
    # Cholesky factor of exp(-d|s - t|^alpha) on one axis
    t = grid.points()
    return cholesky_factor(np.exp(-d * np.abs(t[:, None] - t[None, :]) ** alpha))


def sample_separable_field(alpha0, d0, alphas, ds, u, t_grid: SampleGrid, v_grids, batch: int, seeds: SeedSpec,
                           copy=0, first=0, threads=1, cap=CHOLESKY_CAP):
    """
    Exact draws of the stationary field with covariance exp(-u^-2 D0 t^alpha0 - sum_i D_i |v_i|^alpha_i) on the
    tensor grid t_grid x v_grids, using the Kronecker structure X = L_t Z L_v1' (L_v2')

    Arguments
        alpha0, d0:     time index and coefficient
        alphas, ds:     per space axis indices and coefficients (0 to 2 axes)
        u:              level scaling the time coefficient
    Returns
        FieldBatch with values of shape (batch, mt, *mv)
    """
    alphas, ds, v_grids = tuple(alphas), tuple(ds), tuple(v_grids)
    assert len(alphas) == len(ds) == len(v_grids) <= 2, 'need matching alphas, ds, v_grids with <= 2 space axes'
    assert u > 0, 'level u must be positive'
    dt = d0 * u ** -2
    if not v_grids:
        p = sample_stationary(StationaryModel('expower', alpha0, dt), t_grid, batch, seeds, copy, first, threads)
        return FieldBatch(p.values, t_grid, (), seeds.master, p.reps)
    shape = (t_grid.m,) + tuple(g.m for g in v_grids)
    size = math.prod(shape)
    if size > cap:
        raise SamplerError(f'field grid {shape} has {size} points > cap {cap}', size=size, cap=cap)
    factors = [_axis_factor(alpha0, dt, t_grid)] + [_axis_factor(a, d, g) for a, d, g in zip(alphas, ds, v_grids)]
    Ls = []
    for L, _, keep in factors:
        assert keep.all(), 'separable axes have unit variance'
        Ls.append(L)
    jitter = max(f[1] for f in factors)
    expr = 'ij,bjk,lk->bil' if len(Ls) == 2 else 'ij,bjkl,mk,nl->bimn'

    def fn(x):
        z = seeds.normals(size, copy, *x).reshape((-1,) + shape)
        return np.einsum(expr, Ls[0], z, *Ls[1:], optimize=True)

    values = np.concatenate(_map_blocks(fn, seeds.blocks(first, batch), threads))
    return FieldBatch(values, t_grid, v_grids, seeds.master, (first, first + batch), jitter,
                      {'alpha0': alpha0, 'd0': d0, 'alphas': alphas, 'ds': ds, 'u': u})
