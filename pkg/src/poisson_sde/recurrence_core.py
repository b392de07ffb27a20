"""Sampled paths on uniform grids, the Bebutov (compact-open) metric,
epsilon-almost periods, reference recurrent functions and the metric on
coefficient spaces."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

BISECTION_TOL = 1e-9


class TruncationError(ValueError):
    """The grid is too short to evaluate the requested quantity.

    ``bracket`` holds the interval known to contain the answer."""

    def __init__(self, message, bracket):
        super().__init__(f"{message} (achieved bracket {bracket})")
        self.bracket = bracket


@dataclass(frozen=True)
class UniformGrid:
    t0: float
    h: float
    n: int

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError(f"grid step must be positive, got {self.h}")
        if self.n < 2:
            raise ValueError(f"grid needs at least 2 samples, got {self.n}")

    @classmethod
    def spanning(cls, t_start: float, t_end: float, h: float) -> "UniformGrid":
        n = int(round((t_end - t_start) / h)) + 1
        return cls(t_start, h, n)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n)

    @property
    def t_end(self) -> float:
        return self.t0 + self.h * (self.n - 1)

    def index_of(self, t: float) -> int:
        k = int(round((t - self.t0) / self.h))
        if k < 0 or k >= self.n or abs(self.t0 + k * self.h - t) > 1e-9 * max(1.0, abs(t)) + 1e-12:
            raise ValueError(f"time {t} is not a point of {self}")
        return k

    def compatible(self, other: "UniformGrid") -> bool:
        return (
            self.n == other.n
            and math.isclose(self.h, other.h, rel_tol=1e-12)
            and math.isclose(self.t0, other.t0, rel_tol=1e-12, abs_tol=1e-12)
        )

    def to_dict(self):
        return {"t0": self.t0, "h": self.h, "n": self.n}


@dataclass(frozen=True)
class SampledPath:
    """A deterministic function sampled on a uniform grid, values ``(n, dim)``."""

    grid: UniformGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.n:
            raise ValueError(f"values shape {v.shape} does not match grid of {self.grid.n} samples")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @classmethod
    def from_function(cls, func: Callable[[np.ndarray], np.ndarray], grid: UniformGrid) -> "SampledPath":
        return cls(grid, np.asarray(func(grid.times), dtype=float))

    def to_json(self) -> str:
        return json.dumps({"grid": self.grid.to_dict(), "dim": self.dim, "values": self.values.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "SampledPath":
        raw = json.loads(text)
        path = cls(UniformGrid(**raw["grid"]), np.array(raw["values"], dtype=float))
        if path.dim != raw["dim"]:
            raise ValueError("dim field disagrees with values")
        return path

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"v{i + 1}" for i in range(self.dim)])
        for t, row in zip(self.times, self.values):
            writer.writerow([repr(float(t))] + [repr(float(x)) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SampledPath":
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array(rows[1:], dtype=float)
        t = data[:, 0]
        h = (t[-1] - t[0]) / (len(t) - 1)
        return cls(UniformGrid(float(t[0]), float(h), len(t)), data[:, 1:])


# -- Bebutov metric -----------------------------------------------------------


def _pointwise_distance(a: SampledPath, b: SampledPath) -> np.ndarray:
    if not a.grid.compatible(b.grid):
        raise ValueError("paths live on different grids")
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return np.linalg.norm(a.values - b.values, axis=1)


class _WindowMax:
    """max_{|t| <= L} of a piecewise-linear function given by grid samples."""

    def __init__(self, times, rho):
        self.times = times
        self.rho = rho
        self.h = times[1] - times[0]
        # running maxima outward from t = 0 on each side
        k0 = int(np.searchsorted(times, 0.0))
        self.k0 = k0
        self.right = np.maximum.accumulate(rho[k0:])
        self.left = np.maximum.accumulate(rho[:k0][::-1]) if k0 > 0 else np.zeros(0)

    def _interp(self, t):
        return float(np.interp(t, self.times, self.rho))

    def __call__(self, L):
        times = self.times
        best = max(self._interp(L), self._interp(-L), self._interp(0.0))
        # grid points inside (-L, L)
        hi = int(np.searchsorted(times, L, side="left")) - 1  # last index with t < L
        lo = int(np.searchsorted(times, -L, side="right"))  # first index with t > -L
        if hi >= self.k0:
            best = max(best, float(self.right[hi - self.k0]))
        if lo < self.k0:
            best = max(best, float(self.left[self.k0 - 1 - lo]))
        return best


def bebutov_distance(a: SampledPath, b: SampledPath, tol: float = BISECTION_TOL) -> float:
    """Compact-open distance ``d(a, b) = sup_L min(max_{|t|<=L} rho, 1/L)``.

    Computed as the root of ``eps -> max_{|t|<=1/eps} rho - eps`` by bisection,
    with the path taken piecewise-linear between grid points.
    """
    rho = _pointwise_distance(a, b)
    times = a.grid.times
    reach = min(-times[0], times[-1])
    if reach < 1.0:
        raise ValueError(f"grid must cover [-1, 1] at least; it reaches only {reach}")
    if not np.any(rho):
        return 0.0
    window_max = _WindowMax(times, rho)

    def gap(eps):
        return window_max(1.0 / eps) - eps

    lo = 1.0 / reach
    if gap(lo) <= 0.0:
        # the fixed point needs |t| > reach
        raise TruncationError("grid too short for the Bebutov fixed point", (0.0, lo))
    hi = max(float(rho.max()), lo) * 2.0 + 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def window_max_distance(a: SampledPath, b: SampledPath, L: float) -> float:
    """max_{|t| <= L} of the pointwise distance, piecewise-linear in t."""
    return _WindowMax(a.grid.times, _pointwise_distance(a, b))(L)


# -- shifts and almost periods --------------------------------------------------


def translate(path: SampledPath, shift_steps: int) -> SampledPath:
    """The translate ``t -> path(t + shift_steps*h)`` on the overlapping grid."""
    s = int(shift_steps)
    n, h = path.grid.n, path.grid.h
    if abs(s) >= n - 1:
        raise ValueError(f"shift of {s} steps exceeds path of {n} samples")
    if s >= 0:
        return SampledPath(UniformGrid(path.grid.t0, h, n - s), path.values[s:])
    return SampledPath(UniformGrid(path.grid.t0 - s * h, h, n + s), path.values[: n + s])


@dataclass
class AlmostPeriodReport:
    epsilon: float
    scan_window: tuple
    scan_step: float
    core: float
    periods: list
    max_gap: float
    sup_deviation: list = field(default_factory=list)
    label: str = "evidence: epsilon-almost periods relative to the comparison core"

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "scan_window": list(self.scan_window),
            "scan_step": self.scan_step,
            "core": self.core,
            "periods": list(self.periods),
            "max_gap": self.max_gap,
            "sup_deviation": list(self.sup_deviation),
            "label": self.label,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _max_gap(periods, lo, hi):
    pts = np.concatenate([[lo], np.asarray(periods, dtype=float), [hi]])
    return float(np.max(np.diff(pts))) if len(pts) > 1 else 0.0


def epsilon_almost_periods(
    path: SampledPath,
    epsilon: float,
    scan_window: Sequence[float],
    scan_step: float,
    core: float,
    chunk: int = 4096,
) -> AlmostPeriodReport:
    """Scan shifts ``tau`` for ``sup_{|t|<=core} |path(t+tau) - path(t)| < epsilon``.

    Shifts and the core are snapped to the path grid. The sup over the real
    line is truncated to the core, so the result is evidence only.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not scan_step > 0:
        raise ValueError("scan_step must be positive")
    if not core > 0:
        raise ValueError("comparison core is empty")
    g = path.grid
    h = g.h
    tau_lo, tau_hi = float(scan_window[0]), float(scan_window[1])
    if tau_hi < tau_lo:
        raise ValueError("scan window is reversed")
    step_k = max(1, int(round(scan_step / h)))
    core_k = int(math.floor(core / h + 1e-9))
    if core_k < 1:
        raise ValueError("comparison core is empty on this grid")
    i_zero = int(round(-g.t0 / h))
    k_lo = int(math.ceil(tau_lo / h - 1e-9))
    k_hi = int(math.floor(tau_hi / h + 1e-9))
    shifts = np.arange(k_lo, k_hi + 1, step_k)
    first = i_zero - core_k + min(0, int(shifts.min(initial=0)))
    last = i_zero + core_k + max(0, int(shifts.max(initial=0)))
    if first < 0 or last >= g.n:
        raise ValueError("path grid does not cover the comparison core for every scanned shift")

    v = path.values
    core_idx = np.arange(i_zero - core_k, i_zero + core_k + 1)
    base = v[core_idx]
    # cheap necessary test on a sparse subset of the core before the full sup
    probe = core_idx[:: max(1, len(core_idx) // 16)]
    probe_base = v[probe]
    periods, sups = [], []
    for start in range(0, len(shifts), chunk):
        ks = shifts[start : start + chunk]
        d = np.linalg.norm(v[probe[None, :] + ks[:, None]] - probe_base[None], axis=2).max(axis=1)
        for k in ks[d < epsilon]:
            s = float(np.linalg.norm(v[core_idx + k] - base, axis=1).max())
            if s < epsilon:
                periods.append(float(k * h))
                sups.append(s)
    scanned_hi = float(shifts[-1] * h) if len(shifts) else tau_lo
    return AlmostPeriodReport(
        epsilon=float(epsilon),
        scan_window=(tau_lo, tau_hi),
        scan_step=step_k * h,
        core=core_k * h,
        periods=periods,
        max_gap=_max_gap(periods, float(shifts[0] * h) if len(shifts) else tau_lo, scanned_hi),
        sup_deviation=sups,
    )


# -- reference functions ------------------------------------------------------

REFERENCE_KINDS = ("constant", "periodic", "quasi_periodic", "levitan_example", "bochner_example")


def levitan_profile(t):
    """1/(2 + cos t + cos(sqrt2 t)): Levitan almost periodic, not Bohr."""
    t = np.asarray(t, dtype=float)
    return 1.0 / (2.0 + np.cos(t) + np.cos(math.sqrt(2.0) * t))


def torus_interpolate(table: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a table on the torus [0, 2pi)^k with wrap.

    ``angles`` has shape ``(m, k)``.
    """
    table = np.asarray(table, dtype=float)
    k = table.ndim
    angles = np.atleast_2d(angles)
    if angles.shape[1] != k:
        raise ValueError(f"table is {k}-dimensional, angles have {angles.shape[1]} columns")
    res = np.array(table.shape)
    pos = np.mod(angles, 2 * np.pi) / (2 * np.pi) * res
    i0 = np.floor(pos).astype(int) % res
    frac = pos - np.floor(pos)
    out = np.zeros(len(angles))
    for corner in range(2**k):
        bits = [(corner >> j) & 1 for j in range(k)]
        weight = np.ones(len(angles))
        idx = []
        for j, b in enumerate(bits):
            weight = weight * (frac[:, j] if b else 1.0 - frac[:, j])
            idx.append((i0[:, j] + b) % res[j])
        out += weight * table[tuple(idx)]
    return out


def cosine_torus_table(k: int, resolution: int = 64) -> np.ndarray:
    """Table of sum_j cos(theta_j) on a k-torus."""
    theta = 2 * np.pi * np.arange(resolution) / resolution
    grids = np.meshgrid(*([theta] * k), indexing="ij")
    return sum(np.cos(g) for g in grids)


@dataclass(frozen=True)
class ReferenceFunctionSpec:
    kind: str
    period: float | None = None
    frequencies: tuple = ()
    table: np.ndarray | None = None
    amplitude: float = 1.0
    value: float = 0.0

    def validate(self):
        if self.kind not in REFERENCE_KINDS:
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if self.kind == "periodic" and not (self.period is not None and self.period > 0):
            raise ValueError("periodic reference needs a positive period")
        if self.kind == "quasi_periodic":
            if len(self.frequencies) == 0:
                raise ValueError("quasi-periodic reference needs a nonempty frequency list")
            if self.table is not None and np.ndim(self.table) != len(self.frequencies):
                raise ValueError("torus table rank must equal the number of frequencies")


def reference_function(spec: ReferenceFunctionSpec) -> Callable[[np.ndarray], np.ndarray]:
    spec.validate()
    a = spec.amplitude
    if spec.kind == "constant":
        return lambda t: np.full(np.shape(t), a * spec.value, dtype=float)
    if spec.kind == "periodic":
        if spec.table is None:
            return lambda t: a * np.cos(2 * np.pi * np.asarray(t) / spec.period)
        tab = np.asarray(spec.table, dtype=float)
        return lambda t: a * torus_interpolate(tab, (2 * np.pi * np.asarray(t) / spec.period)[:, None])
    if spec.kind == "quasi_periodic":
        freqs = np.asarray(spec.frequencies, dtype=float)
        tab = spec.table if spec.table is not None else cosine_torus_table(len(freqs))
        return lambda t: a * torus_interpolate(tab, np.outer(np.asarray(t, dtype=float), freqs))
    if spec.kind == "levitan_example":
        return lambda t: a * levitan_profile(t)
    return lambda t: a * np.sin(levitan_profile(t))


def make_reference(spec: ReferenceFunctionSpec, grid: UniformGrid) -> SampledPath:
    return SampledPath.from_function(reference_function(spec), grid)


# -- metric on coefficient spaces -----------------------------------------------


def _ball_points(radius, dim, n_points, rng):
    if dim == 1:
        return np.linspace(-radius, radius, n_points)[:, None]
    direction = rng.standard_normal((n_points, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    scale = radius * rng.uniform(0, 1, n_points) ** (1.0 / dim)
    return np.vstack([np.zeros(dim), direction * scale[:, None]])


def coefficient_distance(
    F,
    G,
    ball_radii: Sequence[float],
    dim: int = 1,
    t_step: float = 0.01,
    n_points: int = 41,
    seed: int = 0,
) -> float:
    """Truncated sum_{n<=N} 2^-n d_n/(1+d_n) with d_n the sup of |F - G| over
    |t| <= n and |x| <= ball_radii[n-1], estimated on a (t, x) grid.

    ``F`` and ``G`` are callables ``(t, x) -> array`` vectorized over leading
    axes, or objects exposing such an ``evaluate`` method.
    """
    radii = np.asarray(ball_radii, dtype=float)
    if radii.size == 0 or np.any(np.diff(radii) <= 0) or np.any(radii < 0):
        raise ValueError("ball_radii must be a nonempty increasing list")
    f = getattr(F, "evaluate", F)
    g = getattr(G, "evaluate", G)
    rng = np.random.default_rng(seed)
    total = 0.0
    for n, radius in enumerate(radii, start=1):
        t = np.linspace(-n, n, int(round(2 * n / t_step)) + 1)
        x = _ball_points(radius, dim, n_points, rng)
        tt = np.repeat(t, len(x))
        xx = np.tile(x, (len(t), 1))
        diff = np.asarray(f(tt, xx), dtype=float) - np.asarray(g(tt, xx), dtype=float)
        diff = diff.reshape(len(tt), -1)
        d_n = float(np.linalg.norm(diff, axis=1).max())
        total += 2.0**-n * d_n / (1.0 + d_n)
    return total
