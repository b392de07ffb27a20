"""Exact exponential integration of dx = (Ax + f(t)) dt + g(t) dW for a
diagonal exponentially stable generator and scalar Brownian motion.

Per step of length h and mode rate lam, the update is

    x <- e^{-lam h} x + w_left f_k + w_right f_{k+1} + g_k I

where the weights integrate the kernel e^{-lam (h - s)} against the linear
interpolant of f, and I is the stochastic convolution over the step. The
vector (dW, I_1, ..., I_K) is jointly Gaussian with covariance
(1 - e^{-(lam_i + lam_j) h}) / (lam_i + lam_j) (lam_0 = 0); it is drawn
through a lower Cholesky factor so the first K modes of a larger operator
see exactly the same increments as a K-mode operator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import mpmath
import numpy as np

from .ensemble import MOMENT_BATCH, StochasticEnsemble, batch_stats
from .law_metrics import LawDistanceSeries, ProbeReport, uniform_law_distance
from .recurrence_core import SampledPath, UniformGrid
from .rng import keyed_normals, stream

DEFAULT_TRUNCATION = 1e-8


@dataclass(frozen=True)
class SpectralOperator:
    """Diagonal generator acting as -lam_k on mode k."""

    mode_rates: tuple
    stability_constant: float = 1.0
    stability_rate: float | None = None

    def __post_init__(self):
        rates = tuple(float(x) for x in np.atleast_1d(self.mode_rates))
        if not rates or min(rates) <= 0:
            raise ValueError("mode rates must be positive")
        object.__setattr__(self, "mode_rates", rates)
        nu = min(rates) if self.stability_rate is None else float(self.stability_rate)
        if not nu > 0 or nu > min(rates) * (1 + 1e-12):
            raise ValueError(f"stability rate {nu} must lie in (0, min rate {min(rates)}]")
        if self.stability_constant < 1:
            raise ValueError("stability constant must be >= 1")
        object.__setattr__(self, "stability_rate", nu)

    @classmethod
    def scalar(cls, nu: float) -> "SpectralOperator":
        return cls((nu,), 1.0, nu)

    @property
    def N(self) -> float:
        return self.stability_constant

    @property
    def nu(self) -> float:
        return self.stability_rate

    @property
    def dim(self) -> int:
        return len(self.mode_rates)

    @property
    def rates(self) -> np.ndarray:
        return np.asarray(self.mode_rates)

    def default_burn_in(self, rel: float = DEFAULT_TRUNCATION) -> float:
        """Burn-in after which N e^{-nu b} <= rel."""
        return math.log(self.N / rel) / self.nu

    def to_dict(self):
        return {"mode_rates": list(self.mode_rates), "N": self.N, "nu": self.nu}


def _phi1(z):
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-4
    safe = np.where(small, 1.0, z)
    return np.where(small, 1 - z / 2 + z * z / 6, -np.expm1(-safe) / safe)


def _phi_right(z):
    # int_0^1 e^{-z(1-u)} u du
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-3
    safe = np.where(small, 1.0, z)
    return np.where(small, 0.5 - z / 3 + z * z / 8, (safe - 1 + np.exp(-safe)) / safe**2)


def _gram_cholesky(rates, h):
    """Lower Cholesky factor of the covariance of (dW, I_1, ..., I_K).

    The matrix is a Gram matrix of nearly parallel exponentials and is
    badly conditioned, so the factorization runs in extended precision.
    """
    lam = [mpmath.mpf(0)] + [mpmath.mpf(x) for x in rates]
    hh = mpmath.mpf(h)
    n = len(lam)
    dps = 60
    while True:
        with mpmath.workdps(dps):
            C = mpmath.matrix(n, n)
            for i in range(n):
                for j in range(n):
                    s = lam[i] + lam[j]
                    C[i, j] = hh if s == 0 else -mpmath.expm1(-s * hh) / s
            try:
                L = mpmath.cholesky(C)
            except ValueError:
                dps *= 2
                if dps > 2000:
                    raise
                continue
            return np.array([[float(L[i, j]) for j in range(n)] for i in range(n)])


@dataclass(frozen=True)
class StepKernel:
    rates: tuple
    h: float

    @cached_property
    def decay(self):
        return np.exp(-np.asarray(self.rates) * self.h)

    @cached_property
    def w_frozen(self):
        return self.h * _phi1(np.asarray(self.rates) * self.h)

    @cached_property
    def w_right(self):
        return self.h * _phi_right(np.asarray(self.rates) * self.h)

    @cached_property
    def w_left(self):
        return self.w_frozen - self.w_right

    @cached_property
    def covariance(self):
        lam = np.concatenate([[0.0], self.rates])
        s = lam[:, None] + lam[None, :]
        return self.h * _phi1(s * self.h)

    @cached_property
    def noise_factor(self):
        """Rows 1..K of the Cholesky factor: I = z @ noise_factor.T."""
        return _gram_cholesky(self.rates, self.h)[1:]


@lru_cache(maxsize=64)
def _kernel(rates, h):
    return StepKernel(rates, h)


def kernel_for(op: SpectralOperator, h: float) -> StepKernel:
    return _kernel(op.mode_rates, float(h))


@dataclass(frozen=True)
class NoisePath:
    """One replicate of the driving Brownian motion on a grid."""

    grid: UniformGrid
    seed: int
    replicate: int = 0

    def normals(self, n_channels: int) -> np.ndarray:
        out = np.empty((n_channels, self.grid.n - 1))
        for c in range(n_channels):
            stream(self.seed, self.replicate, c).standard_normal(out=out[c])
        return out.T

    @property
    def increments(self) -> np.ndarray:
        return math.sqrt(self.grid.h) * self.normals(1)[:, 0]


def propagate(kernel: StepKernel, f_vals, g_vals, z, x0=None):
    """Run the exponential update over all steps.

    ``f_vals``, ``g_vals``: ``(n, P or 1, K)``; ``z``: ``(n-1, P, K+1)``.
    Returns states ``(n, P, K)``.
    """
    n = f_vals.shape[0]
    P = z.shape[1]
    K = len(kernel.rates)
    x = np.zeros((n, P, K))
    if x0 is not None:
        x[0] = x0
    decay, wl, wr, B = kernel.decay, kernel.w_left, kernel.w_right, kernel.noise_factor
    for k in range(n - 1):
        x[k + 1] = decay * x[k] + wl * f_vals[k] + wr * f_vals[k + 1] + g_vals[k] * (z[k] @ B.T)
    return x


@dataclass
class MomentSeries:
    grid: UniformGrid
    second_moment: np.ndarray
    stderr: np.ndarray

    def to_dict(self):
        return {
            "grid": self.grid.to_dict(),
            "second_moment": [float(v) for v in self.second_moment],
            "stderr": [float(v) for v in self.stderr],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @property
    def sup_norm(self) -> float:
        """sqrt of the max over the grid of the estimated second moment."""
        return float(math.sqrt(max(float(np.max(self.second_moment)), 0.0)))

    @property
    def sup_norm_stderr(self) -> float:
        k = int(np.argmax(self.second_moment))
        m = max(float(self.second_moment[k]), 1e-300)
        return float(self.stderr[k] / (2 * math.sqrt(m)))


class _MomentAccumulator:
    """Collects per-batch means of |x|^2 so large ensembles need not be stored."""

    def __init__(self, batch=MOMENT_BATCH):
        self.batch = batch
        self.sums = []
        self.counts = []

    def add(self, sq):  # sq: (n_out, P)
        P = sq.shape[1]
        for start in range(0, P, self.batch):
            block = sq[:, start : start + self.batch]
            self.sums.append(block.sum(axis=1))
            self.counts.append(block.shape[1])

    def finish(self):
        sums = np.array(self.sums)
        counts = np.array(self.counts, dtype=float)
        mean = sums.sum(axis=0) / counts.sum()
        full = counts == self.batch
        if full.sum() >= 2:
            bm = sums[full] / self.batch
            se = bm.std(axis=0, ddof=1) / math.sqrt(full.sum())
        else:
            se = np.zeros_like(mean)
        return mean, se


@dataclass
class GreenResult:
    realization: SampledPath
    moments: MomentSeries
    truncation_bound: float
    burn_in: float


def _as_path_values(path, grid, K, name):
    if not isinstance(path, SampledPath):
        raise TypeError(f"{name} must be a SampledPath")
    if not path.grid.compatible(grid):
        raise ValueError(f"{name} is sampled on a different grid")
    if path.dim not in (1, K):
        raise ValueError(f"{name} has dim {path.dim}, operator has {K} modes")
    return np.broadcast_to(path.values, (grid.n, K))


def green_apply(
    op: SpectralOperator,
    f: SampledPath,
    g: SampledPath,
    noise: NoisePath,
    burn_in: float,
    n_replicates: int = 1,
    chunk: int = 2048,
    threads: int = 1,
) -> GreenResult:
    """Bounded solution of the linear equation, realized by burn-in.

    ``f``, ``g`` and ``noise`` share the simulation grid; the first
    ``burn_in`` time units start from zero and are discarded, standing in
    for the integral over (-inf, t]. Replicate r uses the noise streams of
    ``(noise.seed, r)``; replicate 0 is returned as the realization.
    """
    grid = noise.grid
    K = op.dim
    fv = _as_path_values(f, grid, K, "f")
    gv = _as_path_values(g, grid, K, "g")
    i_b = int(round(burn_in / grid.h))
    if i_b < 1:
        raise ValueError("burn-in must cover at least one step")
    if i_b >= grid.n - 1:
        raise ValueError("burn-in leaves no output window")
    kernel = kernel_for(op, grid.h)
    out_grid = UniformGrid(grid.t0 + i_b * grid.h, grid.h, grid.n - i_b)
    acc = _MomentAccumulator()
    realization = None
    for start in range(0, n_replicates, chunk):
        P = min(chunk, n_replicates - start)
        z = keyed_normals(noise.seed, grid.n - 1, P, K + 1, replicate_offset=noise.replicate + start, threads=threads)
        x = propagate(kernel, fv[:, None, :], gv[:, None, :], z)
        if realization is None:
            realization = SampledPath(out_grid, x[i_b:, 0, :])
        acc.add(np.sum(x[i_b:] ** 2, axis=2))
    mean, se = acc.finish()
    f_sup = float(np.linalg.norm(fv, axis=1).max())
    g_sup = float(np.linalg.norm(gv, axis=1).max())
    b = i_b * grid.h
    trunc = op.N * math.exp(-op.nu * b) * (f_sup / op.nu + g_sup / math.sqrt(2 * op.nu))
    return GreenResult(realization, MomentSeries(out_grid, mean, se), trunc, b)


def sup_norm_bound(op: SpectralOperator, f_sup2: float, g_sup2: float) -> float:
    """(N/nu) sqrt(2 ||f||^2 + nu ||g||^2), the operator-norm estimate of G."""
    if f_sup2 < 0 or g_sup2 < 0:
        raise ValueError("second-moment sup norms must be nonnegative")
    return op.N / op.nu * math.sqrt(2 * f_sup2 + op.nu * g_sup2)


def windowed_moment_bound(
    op: SpectralOperator, f_window: float, g_window: float, f_sup2: float, g_sup2: float, L: float, l: float
) -> float:
    """Bound on max_{|t|<=L} E|phi(t)|^2 from the input moments on [-l, l]
    (``f_window``, ``g_window`` are their maxima there) and the global sups."""
    if not l > L > 0:
        raise ValueError("need l > L > 0")
    N2nu2 = op.N**2 / op.nu**2
    nu = op.nu
    head = N2nu2 * (2 * f_window + nu * g_window)
    tail = N2nu2 * (2 * math.exp(-nu * (l - L)) * f_sup2 + nu * math.exp(-2 * nu * (l - L)) * g_sup2)
    return head + tail


def as_time_function(obj, dim=None):
    """Callable ``t -> (m, dim)`` from a callable or a SampledPath (linear interpolation)."""
    if isinstance(obj, SampledPath):
        times, vals = obj.grid.times, obj.values

        def func(t):
            t = np.asarray(t, dtype=float)
            if t.min() < times[0] - 1e-9 or t.max() > times[-1] + 1e-9:
                raise ValueError("time outside the sampled path")
            return np.stack([np.interp(t, times, vals[:, j]) for j in range(vals.shape[1])], axis=-1)

        return func

    def func(t):
        out = np.asarray(obj(np.asarray(t, dtype=float)), dtype=float)
        return out[:, None] if out.ndim == 1 else out

    return func


def simulation_grid(grid: UniformGrid, burn_in: float):
    """Grid extended backwards by the burn-in, and the index where ``grid`` starts."""
    i_b = int(math.ceil(burn_in / grid.h - 1e-9))
    if i_b < 1:
        raise ValueError("burn-in must cover at least one step")
    return UniformGrid(grid.t0 - i_b * grid.h, grid.h, grid.n + i_b), i_b


def green_ensemble(op, f, g, grid: UniformGrid, n_paths: int, seed: int, burn_in=None, threads: int = 1):
    """Replicate ensemble of the bounded linear solution on ``grid``.

    ``f`` and ``g`` are time functions (callables or SampledPaths) covering
    the burn-in extension of ``grid``.
    """
    burn_in = op.default_burn_in() if burn_in is None else burn_in
    sim, i_b = simulation_grid(grid, burn_in)
    t = sim.times
    K = op.dim
    fv = np.broadcast_to(as_time_function(f)(t), (sim.n, K))
    gv = np.broadcast_to(as_time_function(g)(t), (sim.n, K))
    z = keyed_normals(seed, sim.n - 1, n_paths, K + 1, threads=threads)
    x = propagate(kernel_for(op, grid.h), fv[:, None, :], gv[:, None, :], z)
    return StochasticEnsemble(grid, x[i_b:].transpose(1, 0, 2), seed, "bounded solution", step_offset=i_b)


def window_times(grid: UniformGrid, n_points: int) -> np.ndarray:
    idx = np.unique(np.linspace(0, grid.n - 1, n_points).round().astype(int))
    return grid.times[idx]


def linear_comparability_probe(
    op: SpectralOperator,
    f,
    g,
    shifts,
    limit_f,
    limit_g,
    grid: UniformGrid,
    n_paths: int = 1000,
    seed: int = 0,
    window_points: int = 11,
    burn_in=None,
    threads: int = 1,
) -> ProbeReport:
    """Compare the laws of G(f^{t_n}, g^{t_n}) with those of G(limit_f, limit_g).

    Each shifted equation gets fresh noise (seed + 1 + n); the limit uses
    ``seed`` and the floor compares it against a second limit ensemble.
    """
    ff, gf = as_time_function(f), as_time_function(g)
    lf, lg = as_time_function(limit_f), as_time_function(limit_g)
    times = window_times(grid, window_points)
    limit = green_ensemble(op, lf, lg, grid, n_paths, seed, burn_in, threads)
    floor_ens = green_ensemble(op, lf, lg, grid, n_paths, seed + 10_000_019, burn_in, threads)
    floor = uniform_law_distance(limit, floor_ens, times)
    burn = op.default_burn_in() if burn_in is None else burn_in
    t_cover = np.linspace(grid.t0 - burn, grid.t_end, 2001)
    series, sups, gaps = [], [], []
    for n, tn in enumerate(shifts):
        fn = lambda t, tn=tn: ff(np.asarray(t) + tn)
        gn = lambda t, tn=tn: gf(np.asarray(t) + tn)
        ens = green_ensemble(op, fn, gn, grid, n_paths, seed + 1 + n, burn_in, threads)
        s = uniform_law_distance(ens, limit, times)
        series.append(s)
        sups.append(s.sup_value)
        gap = max(
            float(np.linalg.norm(fn(t_cover) - lf(t_cover), axis=1).max()),
            float(np.linalg.norm(gn(t_cover) - lg(t_cover), axis=1).max()),
        )
        gaps.append(gap)
    return ProbeReport(list(shifts), sups, floor.sup_value, (grid.t0, grid.t_end), series, floor, gaps)
