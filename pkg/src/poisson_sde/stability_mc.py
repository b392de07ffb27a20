"""Forward Monte-Carlo runs checked against mean-square stability bounds."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import StochasticEnsemble, batch_stats
from .green_linear import SpectralOperator, kernel_for, propagate
from .recurrence_core import SampledPath, UniformGrid
from .rng import keyed_normals, stream
from .semilinear_fixedpoint import (
    CoefficientField,
    FixedPointTrace,
    InadmissibleError,
    lipschitz_bound,
    threshold_convergent,
    threshold_dissipative,
)

# stream channel reserved for initial-value draws, far from the noise channels
X0_CHANNEL = 1 << 20
SLACK_SE = 3.0


class NonFiniteStateError(RuntimeError):
    def __init__(self, step, t):
        super().__init__(f"non-finite state at step {step} (t = {t:g})")
        self.step = step
        self.t = t


@dataclass(frozen=True)
class InitialLaw:
    """Law of x0: ``zero``, ``point`` (at ``value``), ``gaussian`` or ``uniform`` (per coordinate, with ``scale``)."""

    kind: str = "zero"
    scale: float = 1.0
    value: tuple = ()

    def describe(self) -> str:
        if self.kind == "zero":
            return "zero"
        if self.kind == "point":
            return f"point{list(self.value)}"
        return f"{self.kind}(scale={self.scale:g})"

    def sample(self, seed: int, n_paths: int, dim: int, stream_id: int = 0) -> np.ndarray:
        """Coordinate j comes from its own keyed stream, so draws nest across dimensions."""
        if self.kind == "zero":
            return np.zeros((n_paths, dim))
        if self.kind == "point":
            v = np.broadcast_to(np.asarray(self.value, dtype=float), (dim,))
            return np.tile(v, (n_paths, 1))
        if self.kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown initial law {self.kind!r}")
        out = np.empty((n_paths, dim))
        for j in range(dim):
            rng = stream(seed, stream_id, X0_CHANNEL + j)
            if self.kind == "gaussian":
                out[:, j] = self.scale * rng.standard_normal(n_paths)
            else:
                out[:, j] = rng.uniform(-self.scale, self.scale, n_paths)
        return out


def _as_law(x0_sampler) -> InitialLaw:
    if isinstance(x0_sampler, InitialLaw):
        return x0_sampler
    if x0_sampler is None:
        return InitialLaw()
    return InitialLaw("point", value=tuple(np.atleast_1d(np.asarray(x0_sampler, dtype=float))))


def euler_maruyama_ensemble(
    op: SpectralOperator,
    F: CoefficientField,
    G: CoefficientField,
    t0: float,
    x0_sampler,
    grid: UniformGrid,
    n_paths: int,
    seed: int,
    x0_stream: int = 0,
    noise_offset: int = 0,
    chunk: int = 512,
    threads: int = 1,
) -> StochasticEnsemble:
    """Exponential Euler: exact decay per mode, drift frozen over the step.

    x_{k+1} = e^{-lam h} x_k + h phi1(lam h) F(t_k, x_k) + G(t_k, x_k) I_k,
    with I_k the exact per-mode stochastic convolution of the step.
    ``noise_offset`` selects the position inside the keyed streams, so a run
    can share increments with another ensemble on a longer grid.
    """
    if abs(grid.t0 - t0) > 1e-12 * max(1.0, abs(t0)):
        raise ValueError("grid must start at t0")
    K = op.dim
    law = _as_law(x0_sampler)
    x0 = law.sample(seed, n_paths, K, x0_stream)
    kernel = kernel_for(op, grid.h)
    decay, w, B = kernel.decay, kernel.w_frozen, kernel.noise_factor
    times = grid.times
    states = np.empty((n_paths, grid.n, K))
    for start in range(0, n_paths, chunk):
        P = min(chunk, n_paths - start)
        z = keyed_normals(seed, noise_offset + grid.n - 1, P, K + 1, replicate_offset=start, threads=threads)[noise_offset:]
        x = x0[start : start + P].copy()
        states[start : start + P, 0] = x
        for k in range(grid.n - 1):
            tk = np.full(P, times[k])
            x = decay * x + w * F.evaluate(tk, x) + G.evaluate(tk, x) * (z[k] @ B.T)
            if not np.all(np.isfinite(x)):
                raise NonFiniteStateError(k + 1, times[k + 1])
            states[start : start + P, k + 1] = x
    return StochasticEnsemble(grid, states, seed, law.describe(), step_offset=noise_offset)


def mild_solution_picard(op, F, G, x0, grid: UniformGrid, seed: int, noise_offset: int = 0, tol: float = 1e-10, max_iter: int = 200):
    """Mild solution from x0 at grid.t0 with the integrator used for the bounded solution.

    Picard iteration on the finite window; the map is a Volterra contraction,
    so it converges for any Lipschitz constants.
    """
    x0 = np.asarray(x0, dtype=float)
    P, K = x0.shape
    z = keyed_normals(seed, noise_offset + grid.n - 1, P, K + 1)[noise_offset:]
    kernel = kernel_for(op, grid.h)
    t = grid.times[:, None]
    phi = np.broadcast_to(x0, (grid.n, P, K)).copy()
    for _ in range(max_iter):
        new = propagate(kernel, F.evaluate(t, phi), G.evaluate(t, phi), z, x0=x0)
        d = float(np.max(np.abs(new - phi)))
        phi = new
        if d <= tol:
            return phi.transpose(1, 0, 2)
    raise RuntimeError(f"mild solution did not settle in {max_iter} iterations")


@dataclass
class BoundCheckReport:
    times: np.ndarray
    measured: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray
    constants: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    label: str = ""

    @property
    def violations(self) -> int:
        return int(np.sum(self.measured > self.bound + SLACK_SE * self.stderr))

    def to_dict(self):
        return {
            "label": self.label,
            "times": [float(t) for t in self.times],
            "measured": [float(v) for v in self.measured],
            "stderr": [float(v) for v in self.stderr],
            "bound": [float(v) for v in self.bound],
            "violations": self.violations,
            "constants": self.constants,
            **self.extras,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "measured", "stderr", "bound"])
        for row in zip(self.times, self.measured, self.stderr, self.bound):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def dissipativity_constants(N, nu, A0, M):
    D = nu**2 - 6 * N**2 * M**2 * (nu + 1)
    rate = nu - 6 * N**2 * M**2 * (1 + 1 / nu)
    return {"D": D, "rate": rate, "asymptote": 6 * N**2 * A0**2 * (nu + 1) / D}


def dissipativity_bound(times, t0, N, nu, A0, M, x0_second_moment):
    c = dissipativity_constants(N, nu, A0, M)
    transient = 3 * N**2 * (x0_second_moment - 2 * A0**2 * (nu + 1) / c["D"])
    return transient * np.exp(-c["rate"] * (np.asarray(times) - t0)) + c["asymptote"]


def dissipativity_check(ensemble: StochasticEnsemble, N, nu, A0, M, t0=None) -> BoundCheckReport:
    """Compare E|x(t)|^2 with the exponential dissipativity envelope."""
    if not M < threshold_dissipative(N, nu):
        raise InadmissibleError(f"M = {M} violates M < {threshold_dissipative(N, nu):.6g}")
    t0 = ensemble.grid.t0 if t0 is None else t0
    if abs(t0 - ensemble.grid.t0) > 1e-12 * max(1.0, abs(t0)):
        raise ValueError("ensemble does not start at t0")
    sq = np.sum(ensemble.states**2, axis=2)
    measured, se = batch_stats(sq)
    m0 = float(measured[0])
    times = ensemble.grid.times
    bound = dissipativity_bound(times, t0, N, nu, A0, M, m0)
    c = dissipativity_constants(N, nu, A0, M)
    i_tail = 3 * ensemble.grid.n // 4
    tail = sq[:, i_tail:].mean(axis=1)
    tail_mean, tail_se = batch_stats(tail)
    # the asymptote is a limit; on a finite window the bound's own tail average is the fair comparison
    tail_bound = float(bound[i_tail:].mean())
    extras = {
        "asymptote": c["asymptote"],
        "tail_bound": tail_bound,
        "tail_within_bound": bool(tail_mean <= tail_bound + SLACK_SE * tail_se),
        "tail_average": float(tail_mean),
        "tail_stderr": float(tail_se),
        "tail_within_asymptote": bool(tail_mean <= c["asymptote"] + SLACK_SE * tail_se),
        "x0_second_moment": m0,
    }
    const = {"N": N, "nu": nu, "A0": A0, "M": M, "t0": t0, "rate": c["rate"], "threshold": threshold_dissipative(N, nu)}
    return BoundCheckReport(times, measured, se, bound, const, extras, "dissipativity")


def convergence_rate(N, nu, L):
    return nu - 3 * (1 + 1 / nu) * N**2 * L**2


def convergence_check(
    op: SpectralOperator,
    F: CoefficientField,
    G: CoefficientField,
    x1_sampler,
    x2_sampler,
    grid: UniformGrid,
    n_paths: int,
    seed: int,
    N=None,
    nu=None,
    L=None,
    bounded_solution: FixedPointTrace | None = None,
    threads: int = 1,
):
    """Coupled two-start run against 3 N^2 e^{-rate (t - t0)} E|x1 - x2|^2.

    Both starts use the same noise per path. With ``bounded_solution`` the
    second report compares a start x1 against the bounded solution itself,
    on the bounded solution's grid and noise. Returns a list of reports.
    """
    N = op.N if N is None else N
    nu = op.nu if nu is None else nu
    L = lipschitz_bound(F, G) if L is None else L
    if not L < threshold_convergent(N, nu):
        raise InadmissibleError(f"L = {L} violates L < {threshold_convergent(N, nu):.6g}")
    rate = convergence_rate(N, nu, L)
    const = {"N": N, "nu": nu, "L": L, "rate": rate, "prefactor": 3 * N**2, "threshold": threshold_convergent(N, nu)}

    def report(diff, times, t0, label):
        sq = np.sum(diff**2, axis=2)
        measured, se = batch_stats(sq)
        # exact moment at t0 is the empirical one, so drop its sampling slack there
        bound = 3 * N**2 * np.exp(-rate * (times - t0)) * float(measured[0])
        return BoundCheckReport(times, measured, se, bound, dict(const, t0=t0), {"initial_gap": float(measured[0])}, label)

    e1 = euler_maruyama_ensemble(op, F, G, grid.t0, x1_sampler, grid, n_paths, seed, x0_stream=1, threads=threads)
    e2 = euler_maruyama_ensemble(op, F, G, grid.t0, x2_sampler, grid, n_paths, seed, x0_stream=2, threads=threads)
    reports = [report(e1.states - e2.states, grid.times, grid.t0, "convergence")]
    if bounded_solution is not None:
        xi = bounded_solution.final_path_ensemble
        x0 = _as_law(x1_sampler).sample(xi.seed, xi.n_paths, xi.dim, 1)
        x = mild_solution_picard(op, F, G, x0, xi.grid, xi.seed, noise_offset=xi.step_offset)
        reports.append(report(x - xi.states, xi.grid.times, xi.grid.t0, "convergence_to_bounded"))
    return reports


def comparison_kernel(alpha: float, nu: float, f: SampledPath, L: float, l: float, burn_in: float | None = None):
    """v(t) = int_{-inf}^t e^{-k(t-s)} f(s) ds with k = nu - alpha, and the window bound.

    The integral starts at the first grid time, so ``burn_in`` (default
    ln(1e10)/k) of leading output is dropped. f is taken piecewise linear
    between samples and integrated exactly against the exponential.
    Returns (v on the retained grid, bound for max_{|t|<=L} v).
    """
    if not nu > alpha >= 0:
        raise ValueError("need nu > alpha >= 0")
    if not l > L > 0:
        raise ValueError("need l > L > 0")
    vals = f.values[:, 0]
    if np.any(vals < 0):
        raise ValueError("f must be nonnegative")
    k = nu - alpha
    burn_in = math.log(1e10) / k if burn_in is None else burn_in
    grid = f.grid
    times = grid.times
    if times[0] > -l or times[-1] < l:
        raise ValueError(f"grid must cover [-{l}, {l}]")
    inner = np.abs(times) <= l + 1e-12
    sup_f = float(vals.max())
    window_f = float(vals[inner].max())
    far = math.exp(k * L) * math.exp(-k * l)
    near = math.exp(-k * L) * math.exp(-k * l)
    bound = far / k * sup_f + (1 - near) / k * window_f

    op = SpectralOperator((k,))
    ker = kernel_for(op, grid.h)
    decay, wl, wr = float(ker.decay[0]), float(ker.w_left[0]), float(ker.w_right[0])
    v = np.empty(grid.n)
    v[0] = 0.0
    for i in range(grid.n - 1):
        v[i + 1] = decay * v[i] + wl * vals[i] + wr * vals[i + 1]
    i_b = int(round(burn_in / grid.h))
    if i_b >= grid.n:
        raise ValueError("burn-in covers the whole grid")
    if times[i_b] > -L:
        raise ValueError("burn-in leaves no output on [-L, L]; extend the grid to the left")
    out = SampledPath(UniformGrid(float(times[i_b]), grid.h, grid.n - i_b), v[i_b:, None])
    return out, bound


def kernel_self_consistency(alpha: float, nu: float, f: SampledPath, v: SampledPath) -> float:
    """max |v - int e^{-nu(t-s)} (alpha v + f) ds| on v's grid, with the integral started where v starts."""
    i0 = f.grid.index_of(v.grid.t0)
    fv = f.values[i0 : i0 + v.grid.n, 0]
    src = alpha * v.values[:, 0] + fv
    ker = kernel_for(SpectralOperator((nu,)), v.grid.h)
    decay, wl, wr = float(ker.decay[0]), float(ker.w_left[0]), float(ker.w_right[0])
    u = np.empty(v.grid.n)
    u[0] = v.values[0, 0]
    for i in range(v.grid.n - 1):
        u[i + 1] = decay * u[i] + wl * src[i] + wr * src[i + 1]
    return float(np.max(np.abs(u - v.values[:, 0])))


def galerkin_consistency(build, n_modes: int, x0_law: InitialLaw, grid: UniformGrid, n_paths: int, seed: int, threads: int = 1) -> dict:
    """Second moments of the first ``n_modes`` modes from n and 2n mode runs.

    ``build(n)`` returns ``(op, F, G)``. Noise and initial values nest, so the
    two runs share every common input and differ only through the extra modes.
    """
    runs = {}
    for n in (n_modes, 2 * n_modes):
        op, F, G = build(n)
        e = euler_maruyama_ensemble(op, F, G, grid.t0, x0_law, grid, n_paths, seed, threads=threads)
        runs[n] = batch_stats(e.states[:, :, :n_modes] ** 2)
    (m1, s1), (m2, s2) = runs[n_modes], runs[2 * n_modes]
    tol = SLACK_SE * np.sqrt(s1**2 + s2**2)
    excess = np.abs(m1 - m2) - tol
    return {
        "n_modes": n_modes,
        "max_abs_difference": float(np.max(np.abs(m1 - m2))),
        "max_excess_over_3se": float(np.max(excess)),
        "disagreements": int(np.sum(excess > 0)),
        "times": grid.times,
        "moments_low": m1,
        "moments_high": m2,
        "stderr_low": s1,
        "stderr_high": s2,
    }
