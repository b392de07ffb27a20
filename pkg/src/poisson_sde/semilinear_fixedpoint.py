"""Bounded solutions of dx = (Ax + F(t,x)) dt + G(t,x) dW by contraction.

The map phi -> G(F(., phi), G(., phi)) is iterated on a replicate ensemble
with the noise frozen per replicate, so each iterate is a deterministic
function of the previous one, path by path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ensemble import StochasticEnsemble, batch_stats
from .green_linear import (
    SpectralOperator,
    kernel_for,
    propagate,
    simulation_grid,
    window_times,
)
from .law_metrics import ProbeReport, uniform_law_distance
from .recurrence_core import UniformGrid
from .rng import keyed_normals


class AuditError(ValueError):
    """A declared constant is contradicted by sampled evaluations."""


class InadmissibleError(ValueError):
    """The declared constants violate a smallness condition."""


# -- thresholds (single source for validation and reports) ----------------------


def threshold_bounded(N, nu):
    """L below this gives a contraction on the ball B[0, r]."""
    return nu / (N * math.sqrt(2 + nu))


def threshold_comparable(N, nu):
    return nu / (2 * N * math.sqrt(1 + nu))


def threshold_lp_limit(N, nu):
    """L below this keeps the p -> 2+ limit of theta_p under one."""
    return nu / (N * math.sqrt(2 * (1 + nu)))


def threshold_dissipative(N, nu):
    """Growth constant M below this gives the mean-square dissipativity bound."""
    return nu / (N * math.sqrt(6 * (nu + 1)))


def threshold_convergent(N, nu):
    return nu / (N * math.sqrt(3 * (nu + 1)))


THRESHOLDS = {
    "bounded": threshold_bounded,
    "comparable": threshold_comparable,
    "lp_limit": threshold_lp_limit,
    "dissipative": threshold_dissipative,
    "convergent": threshold_convergent,
}


# -- coefficient fields -------------------------------------------------------


@dataclass
class CoefficientField:
    """Drift or diffusion ``(t, x) -> vector`` with declared constants.

    ``evaluator`` receives ``t`` of shape ``(m,)`` and ``x`` of shape
    ``(m, dim)`` and returns ``(m, dim)``. ``A0`` bounds |F(t,0)|, ``L`` is
    the Lipschitz constant in x, ``M`` the linear-growth constant.
    """

    evaluator: Callable
    dim: int = 1
    A0: float = 0.0
    L: float = 0.0
    M: float | None = None
    name: str = ""
    continuity_modulus: Callable | None = None
    chunk: int = 1 << 16
    time_profile: Callable | None = None

    def evaluate(self, t, x):
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        tt = np.broadcast_to(np.asarray(t, dtype=float), lead).reshape(-1)
        xx = x.reshape(-1, self.dim)
        if len(xx) <= self.chunk:
            out = self.evaluator(tt, xx)
        else:
            out = np.concatenate(
                [self.evaluator(tt[i : i + self.chunk], xx[i : i + self.chunk]) for i in range(0, len(xx), self.chunk)]
            )
        out = np.asarray(out, dtype=float)
        if out.shape != xx.shape:
            raise ValueError(f"evaluator of {self.name or 'field'} returned shape {out.shape}, expected {xx.shape}")
        return out.reshape(x.shape)

    __call__ = evaluate

    def shifted(self, tau: float) -> "CoefficientField":
        """The translate (t, x) -> F(t + tau, x); constants carry over."""
        ev = self.evaluator
        return CoefficientField(
            lambda t, x, tau=tau: ev(t + tau, x),
            self.dim,
            self.A0,
            self.L,
            self.M,
            f"{self.name}^{tau:g}",
            self.continuity_modulus,
            self.chunk,
            None if self.time_profile is None else (lambda t, tp=self.time_profile, tau=tau: tp(np.asarray(t) + tau)),
        )

    def audit(self, t_range=(-50.0, 50.0), radius: float = 5.0, n_samples: int = 4000, seed: int = 0, rel: float = 1e-9):
        """Check the declared constants on random probes; raise AuditError on failure."""
        rng = np.random.default_rng([seed, 0xA0D17])
        t = rng.uniform(*t_range, n_samples)
        x1 = rng.uniform(-radius, radius, (n_samples, self.dim))
        # mix far and near pairs so both the global and local slopes are probed
        step = rng.standard_normal((n_samples, self.dim)) * np.where(rng.uniform(size=(n_samples, 1)) < 0.5, 1e-3, radius)
        x2 = x1 + step
        f0 = np.linalg.norm(self.evaluate(t, np.zeros((n_samples, self.dim))), axis=1)
        f1 = self.evaluate(t, x1)
        f2 = self.evaluate(t, x2)
        lip = np.linalg.norm(f1 - f2, axis=1) / np.linalg.norm(x1 - x2, axis=1)
        measured = {"A0": float(f0.max()), "L": float(lip.max())}
        failures = []
        if measured["A0"] > self.A0 * (1 + rel) + 1e-12:
            failures.append(f"|F(t,0)| reaches {measured['A0']:.6g} > declared A0 {self.A0:.6g}")
        if measured["L"] > self.L * (1 + rel) + 1e-12:
            failures.append(f"Lipschitz ratio reaches {measured['L']:.6g} > declared L {self.L:.6g}")
        if self.M is not None:
            n1 = np.linalg.norm(x1, axis=1)
            excess = np.linalg.norm(f1, axis=1) - (self.A0 + self.M * n1)
            measured["growth_excess"] = float(excess.max())
            if excess.max() > 1e-12 + rel * (self.A0 + self.M * n1.max()):
                failures.append(f"|F(t,x)| exceeds A0 + M|x| by {excess.max():.3g}")
        if failures:
            raise AuditError(f"{self.name or 'coefficient'}: " + "; ".join(failures))
        return measured


def lipschitz_bound(F: CoefficientField, G: CoefficientField) -> float:
    return max(F.L, G.L)


# -- contraction constants ----------------------------------------------------


def c_p(p: float) -> float:
    return (p * (p - 1) / 2 * (p / (p - 1)) ** (p - 2)) ** (p / 2)


def theta_p(N: float, nu: float, L: float, p: float) -> float:
    """Contraction factor of the p-th moment fixed-point map (p > 2)."""
    if not p > 2:
        raise ValueError("theta_p is defined for p > 2; use theta_p_limit at p = 2+")
    bracket = (2 * (p - 1) / (nu * p)) ** (p - 1) + c_p(p) * ((p - 2) / (nu * p)) ** (p / 2 - 1)
    return 2 ** (p - 1) * N**p * L**p * bracket * 2 / (nu * p)


def theta_p_limit(N: float, nu: float, L: float) -> float:
    """lim_{p -> 2+} theta_p."""
    return 2 * N**2 * L**2 / nu**2 + 2 * N**2 * L**2 / nu


def theta_2(N: float, nu: float, L: float) -> float:
    """Contraction factor of the mean-square map on squared sup norms."""
    return N**2 * L**2 * (2 + nu) / nu**2


def bounded_ball_radius(N: float, nu: float, A0: float, L: float) -> float:
    denom = nu - N * L * math.sqrt(2 + nu)
    if not denom > 0:
        raise InadmissibleError(f"L = {L} is not below {threshold_bounded(N, nu):.6g}; no invariant ball")
    return N * A0 * math.sqrt(2 + nu) / denom


@dataclass
class ContractionReport:
    N: float
    nu: float
    L: float
    p: float
    theta2: float
    theta_p: float
    c_p: float
    theta_p_limit: float
    r: float | None
    admissible_bounded: bool
    admissible_comparable: bool
    admissible_lp_limit: bool
    thresholds: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(self.__dict__)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def contraction_constants(N: float, nu: float, L: float, p: float = 3.0, A0: float | None = None) -> ContractionReport:
    if N < 1 or not nu > 0 or L < 0:
        raise ValueError("need N >= 1, nu > 0, L >= 0")
    thr = {k: f(N, nu) for k, f in THRESHOLDS.items()}
    ok_i = L < thr["bounded"]
    r = bounded_ball_radius(N, nu, A0, L) if (A0 is not None and ok_i) else None
    return ContractionReport(
        N=N,
        nu=nu,
        L=L,
        p=p,
        theta2=theta_2(N, nu, L),
        theta_p=theta_p(N, nu, L, p),
        c_p=c_p(p),
        theta_p_limit=theta_p_limit(N, nu, L),
        r=r,
        admissible_bounded=ok_i,
        admissible_comparable=L < thr["comparable"],
        admissible_lp_limit=L < thr["lp_limit"],
        thresholds=thr,
    )


# -- fixed point --------------------------------------------------------------


@dataclass
class FixedPointTrace:
    sq_distances: list
    converged: bool
    final_path_ensemble: StochasticEnsemble
    r: float
    tol: float
    norm: np.ndarray = None
    norm_stderr: np.ndarray = None

    @property
    def distances(self):
        return [math.sqrt(d) for d in self.sq_distances]

    @property
    def ratios(self):
        """Ratios of successive squared sup distances (comparable with theta2)."""
        d = self.sq_distances
        return [d[k + 1] / d[k] for k in range(len(d) - 1) if d[k] > 0]

    @property
    def ball_violations(self) -> int:
        return int(np.sum(self.norm > self.r + 3 * self.norm_stderr))

    def to_dict(self):
        return {
            "sq_distances": [float(d) for d in self.sq_distances],
            "ratios": [float(q) for q in self.ratios],
            "converged": self.converged,
            "iterations": len(self.sq_distances),
            "r": self.r,
            "tol": self.tol,
            "max_norm": float(np.max(self.norm)),
            "ball_violations": self.ball_violations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


class NonConvergenceError(RuntimeError):
    def __init__(self, trace):
        super().__init__(f"fixed point not reached in {len(trace.sq_distances)} iterations")
        self.trace = trace


def _norm_stats(states):
    """||x(t)||_2 per time with a delta-method standard error."""
    m2, se2 = batch_stats(np.sum(states**2, axis=2))
    norm = np.sqrt(np.maximum(m2, 0.0))
    se = np.where(norm > 0, se2 / (2 * np.maximum(norm, 1e-300)), np.sqrt(se2))
    return norm, se


def solve_bounded_solution(
    op: SpectralOperator,
    F: CoefficientField,
    G: CoefficientField,
    grid: UniformGrid,
    n_replicates: int,
    tol: float | None = None,
    max_iter: int = 100,
    seed: int = 0,
    burn_in: float | None = None,
    threads: int = 1,
    raise_on_failure: bool = True,
) -> FixedPointTrace:
    """Iterate phi_{k+1} = G(F(., phi_k), G(., phi_k)) from phi_0 = 0.

    ``grid`` is the reporting window; the simulation runs from
    ``grid.t0 - burn_in`` with the noise of ``seed`` frozen per replicate.
    """
    N, nu = op.N, op.nu
    L = lipschitz_bound(F, G)
    A0 = max(F.A0, G.A0)
    if not L < threshold_bounded(N, nu):
        raise InadmissibleError(f"L = {L} violates L < {threshold_bounded(N, nu):.6g}")
    if F.dim != op.dim or G.dim != op.dim:
        raise ValueError("coefficient dimension differs from the operator")
    r = bounded_ball_radius(N, nu, A0, L)
    tol = 1e-6 * r if tol is None else tol
    burn_in = op.default_burn_in() if burn_in is None else burn_in
    sim, i_b = simulation_grid(grid, burn_in)
    t = sim.times[:, None]
    K = op.dim
    z = keyed_normals(seed, sim.n - 1, n_replicates, K + 1, threads=threads)
    kernel = kernel_for(op, grid.h)
    phi = np.zeros((sim.n, n_replicates, K))
    sq = []
    converged = False
    for _ in range(max_iter):
        new = propagate(kernel, F.evaluate(t, phi), G.evaluate(t, phi), z)
        d2 = float(np.max(np.mean(np.sum((new - phi) ** 2, axis=2), axis=1)))
        sq.append(d2)
        phi = new
        if math.sqrt(d2) <= tol:
            converged = True
            break
    ens = StochasticEnsemble(grid, phi[i_b:].transpose(1, 0, 2), seed, "bounded solution", step_offset=i_b)
    norm, se = _norm_stats(ens.states)
    trace = FixedPointTrace(sq, converged, ens, r, tol, norm, se)
    if not converged and raise_on_failure:
        raise NonConvergenceError(trace)
    return trace


def fixed_point_residual(op, F, G, trace: FixedPointTrace, burn_in=None) -> float:
    """sup-L2 change from one more application of the map to the converged ensemble.

    Only meaningful on the reporting window, since the burn-in part of the
    solution is not retained; the map is re-run from the window start with
    the retained state as initial value and the same noise.
    """
    ens = trace.final_path_ensemble
    phi = ens.states.transpose(1, 0, 2)
    K = op.dim
    z = keyed_normals(ens.seed, ens.step_offset + ens.grid.n - 1, ens.n_paths, K + 1)[ens.step_offset :]
    t = ens.grid.times[:, None]
    new = propagate(kernel_for(op, ens.grid.h), F.evaluate(t, phi), G.evaluate(t, phi), z, x0=phi[0])
    return math.sqrt(float(np.max(np.mean(np.sum((new - phi) ** 2, axis=2), axis=1))))


# -- spectral Galerkin reduction ------------------------------------------------


def sine_basis(n_modes: int, n_points: int):
    """Collocation matrix of sqrt2 sin(n pi x) on the interior points j/(J+1)."""
    x = np.arange(1, n_points + 1) / (n_points + 1)
    n = np.arange(1, n_modes + 1)
    return x, math.sqrt(2.0) * np.sin(np.pi * np.outer(n, x))


def galerkin_reduce(
    n_modes: int,
    physical_grid_points: int,
    pointwise_drift: Callable,
    pointwise_diffusion: Callable,
    drift_constants: dict | None = None,
    diffusion_constants: dict | None = None,
):
    """Sine-Galerkin form of u_t = u_xx + f(t,u) + g(t,u) dW/dt on (0,1), Dirichlet.

    Mode vectors map to grid values by the sine synthesis, the pointwise
    nonlinearity is applied there, and the result is projected back with
    the discrete inner product (1/(J+1)) sum_j. Synthesis is an isometry and
    the projection a contraction in that inner product, so the pointwise
    Lipschitz and growth constants carry over to mode space.
    """
    if n_modes < 1:
        raise ValueError("need at least one mode")
    if n_modes > physical_grid_points:
        raise ValueError(f"{n_modes} modes alias on {physical_grid_points} collocation points")
    _, S = sine_basis(n_modes, physical_grid_points)
    scale = 1.0 / (physical_grid_points + 1)
    rates = tuple((np.arange(1, n_modes + 1) * np.pi) ** 2)
    op = SpectralOperator(rates, 1.0, math.pi**2)

    def lift(pointwise):
        def ev(t, c):
            u = c @ S
            return (pointwise(t[:, None], u) @ S.T) * scale

        return ev

    F = CoefficientField(lift(pointwise_drift), n_modes, name="galerkin drift", **(drift_constants or {}))
    G = CoefficientField(lift(pointwise_diffusion), n_modes, name="galerkin diffusion", **(diffusion_constants or {}))
    return op, F, G


def uniform_integrability_probe(
    pointwise: Callable,
    radius: float,
    alpha: float = 1.0,
    n_points: int = 64,
    n_samples: int = 2000,
    t_range=(-100.0, 100.0),
    delta: float = 1e-3,
    seed: int = 0,
):
    """sup over sampled (t, ||u|| <= radius) of int |f(t,u(x))|^{2+alpha} dx, and
    the sampled modulus sup ||f(t+delta,u) - f(t,u)||_{L2} as continuity evidence."""
    rng = np.random.default_rng([seed, 0xC3])
    x = np.arange(1, n_points + 1) / (n_points + 1)
    t = rng.uniform(*t_range, n_samples)[:, None]
    # random profiles: smooth modes plus spiky bumps, rescaled into the ball
    n_modes = 8
    c = rng.standard_normal((n_samples, n_modes)) / np.arange(1, n_modes + 1)
    u = c @ (math.sqrt(2) * np.sin(np.pi * np.outer(np.arange(1, n_modes + 1), x)))
    spikes = rng.uniform(size=(n_samples, n_points)) < 0.05
    u = u + spikes * rng.standard_normal((n_samples, n_points)) * 10
    norms = np.sqrt(np.mean(u**2, axis=1, keepdims=True))
    u = u / np.maximum(norms, 1e-300) * radius * rng.uniform(0, 1, (n_samples, 1))
    moment = np.mean(np.abs(pointwise(t, u)) ** (2 + alpha), axis=1)
    modulus = np.sqrt(np.mean((pointwise(t + delta, u) - pointwise(t, u)) ** 2, axis=1))
    return {"alpha": alpha, "radius": radius, "sup_moment": float(moment.max()), "modulus": float(modulus.max()), "delta": delta}


# -- comparability probe ------------------------------------------------------


def _coefficient_gap(A: CoefficientField, B: CoefficientField, t_lo, t_hi, radius, seed=0):
    rng = np.random.default_rng([seed, 0x6A9])
    t = np.linspace(t_lo, t_hi, 801)
    x = rng.uniform(-radius, radius, (64, A.dim))
    tt = np.repeat(t, len(x))
    xx = np.tile(x, (len(t), 1))
    return float(np.linalg.norm(A.evaluate(tt, xx) - B.evaluate(tt, xx), axis=1).max())


def semilinear_comparability_probe(
    op: SpectralOperator,
    F: CoefficientField,
    G: CoefficientField,
    shifts,
    limit_F: CoefficientField,
    limit_G: CoefficientField,
    grid: UniformGrid,
    n_paths: int = 1000,
    seed: int = 0,
    window_points: int = 11,
    burn_in: float | None = None,
    threads: int = 1,
    gap_radius: float = 2.0,
) -> ProbeReport:
    """Law distances between bounded solutions of shifted and limit equations.

    Shifted equation n uses fresh noise (seed + 1 + n); the floor compares
    two independent ensembles of the limit equation.
    """
    N, nu = op.N, op.nu
    L = max(lipschitz_bound(F, G), lipschitz_bound(limit_F, limit_G))
    if not L < threshold_comparable(N, nu):
        raise InadmissibleError(f"L = {L} violates L < {threshold_comparable(N, nu):.6g}")
    burn_in = op.default_burn_in() if burn_in is None else burn_in
    times = window_times(grid, window_points)

    def solve(Fs, Gs, s):
        return solve_bounded_solution(op, Fs, Gs, grid, n_paths, seed=s, burn_in=burn_in, threads=threads).final_path_ensemble

    limit = solve(limit_F, limit_G, seed)
    floor = uniform_law_distance(limit, solve(limit_F, limit_G, seed + 10_000_019), times)
    series, sups, gaps = [], [], []
    for n, tn in enumerate(shifts):
        Fn, Gn = F.shifted(tn), G.shifted(tn)
        s = uniform_law_distance(solve(Fn, Gn, seed + 1 + n), limit, times)
        series.append(s)
        sups.append(s.sup_value)
        gaps.append(
            max(
                _coefficient_gap(Fn, limit_F, grid.t0 - burn_in, grid.t_end, gap_radius),
                _coefficient_gap(Gn, limit_G, grid.t0 - burn_in, grid.t_end, gap_radius),
            )
        )
    return ProbeReport(list(shifts), sups, floor.sup_value, (grid.t0, grid.t_end), series, floor, gaps)
