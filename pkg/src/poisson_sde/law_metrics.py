"""Empirical laws and the bounded-Lipschitz metric beta.

On a finite joint support the sup over ``Lip(f) + ||f||_inf <= 1`` is an
exact linear program: the values ``f_p`` and the sup-norm share ``s`` are
the variables, with ``|f_p - f_q| <= (1 - s) |p - q|`` and ``|f_p| <= s``.
Any such assignment extends to the whole space with the same constants
(McShane extension followed by clipping at +-s), so the optimum is beta.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

DEFAULT_MAX_SUPPORT = 2000
DEFAULT_MAX_SUPPORT_MULTI = 400
_LP_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


class LawMetricError(RuntimeError):
    pass


@dataclass(frozen=True)
class EmpiricalLaw:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float)
        if pts.shape[0] < 1:
            raise ValueError("a law needs at least one support point")
        if w.shape != (pts.shape[0],):
            raise ValueError("one weight per support point")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if not np.all(np.isfinite(pts)):
            raise ValueError("support points must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]


def empirical_law(samples) -> EmpiricalLaw:
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    m = x.shape[0]
    if m == 0:
        raise ValueError("empty sample set")
    return EmpiricalLaw(x, np.full(m, 1.0 / m))


def dirac(point) -> EmpiricalLaw:
    return EmpiricalLaw(np.atleast_2d(np.asarray(point, dtype=float)), np.ones(1))


def _stratified_subsample(law: EmpiricalLaw, k: int, rng) -> EmpiricalLaw:
    """One point per stratum of the first-coordinate order, k strata."""
    if law.size <= k:
        return law
    order = np.argsort(law.points[:, 0], kind="stable")
    strata = np.array_split(order, k)
    idx = np.array([s[rng.integers(len(s))] for s in strata])
    w = np.array([law.weights[s].sum() for s in strata])
    return EmpiricalLaw(law.points[idx], w / w.sum())


def _joint_support(a: EmpiricalLaw, b: EmpiricalLaw):
    pts = np.vstack([a.points, b.points])
    signed = np.concatenate([a.weights, -b.weights])
    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    c = np.zeros(len(uniq))
    np.add.at(c, inverse.ravel(), signed)
    return uniq, c


def bl_metric_with_split(a: EmpiricalLaw, b: EmpiricalLaw, max_support: int | None = None, seed: int = 0):
    """beta(a, b) and the optimal sup-norm share ``s`` of the witness."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if max_support is None:
        max_support = DEFAULT_MAX_SUPPORT if a.dim == 1 else DEFAULT_MAX_SUPPORT_MULTI
    if a.size + b.size > max_support:
        rng = np.random.default_rng(seed)
        a = _stratified_subsample(a, max_support // 2, rng)
        b = _stratified_subsample(b, max_support // 2, rng)
    pts, c = _joint_support(a, b)
    keep = np.abs(c) > 0
    if not np.any(keep):
        return 0.0, 0.0
    m = len(pts)
    if m == 1:
        return 0.0, 0.0
    if pts.shape[1] == 1:
        # on the line only neighbouring constraints are binding
        order = np.argsort(pts[:, 0])
        i, j = order[:-1], order[1:]
    else:
        i, j = np.triu_indices(m, k=1)
    dist = np.linalg.norm(pts[i] - pts[j], axis=1)
    n_pairs = len(i)
    rows = np.arange(n_pairs)
    # variables: f_0..f_{m-1}, s
    lip_pos = sp.csr_matrix(
        (
            np.concatenate([np.ones(n_pairs), -np.ones(n_pairs), dist]),
            (np.concatenate([rows, rows, rows]), np.concatenate([i, j, np.full(n_pairs, m)])),
        ),
        shape=(n_pairs, m + 1),
    )
    lip_neg = sp.csr_matrix(
        (
            np.concatenate([-np.ones(n_pairs), np.ones(n_pairs), dist]),
            (np.concatenate([rows, rows, rows]), np.concatenate([i, j, np.full(n_pairs, m)])),
        ),
        shape=(n_pairs, m + 1),
    )
    eye = sp.eye(m, format="csr")
    s_col = sp.csr_matrix(-np.ones((m, 1)))
    box_pos = sp.hstack([eye, s_col])
    box_neg = sp.hstack([-eye, s_col])
    A = sp.vstack([lip_pos, lip_neg, box_pos, box_neg], format="csr")
    rhs = np.concatenate([dist, dist, np.zeros(2 * m)])
    cost = np.concatenate([-c, [0.0]])
    bounds = [(None, None)] * m + [(0.0, 1.0)]
    res = linprog(cost, A_ub=A, b_ub=rhs, bounds=bounds, method="highs-ds", options=_LP_OPTIONS)
    if res.status != 0:
        raise LawMetricError(f"bounded-Lipschitz LP failed: {res.message}")
    return float(max(-res.fun, 0.0)), float(res.x[-1])


def bl_metric(a: EmpiricalLaw, b: EmpiricalLaw, max_support: int | None = None, seed: int = 0) -> float:
    """Bounded-Lipschitz distance between two finitely supported laws, in [0, 2]."""
    return bl_metric_with_split(a, b, max_support=max_support, seed=seed)[0]


@dataclass
class LawDistanceSeries:
    times: np.ndarray
    beta_values: np.ndarray
    note: str = ""

    @property
    def sup_value(self) -> float:
        return float(np.max(self.beta_values)) if len(self.beta_values) else 0.0

    def to_dict(self):
        return {
            "times": [float(t) for t in self.times],
            "beta_values": [float(b) for b in self.beta_values],
            "sup_value": self.sup_value,
            "note": self.note,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "beta"])
        for t, b in zip(self.times, self.beta_values):
            w.writerow([repr(float(t)), repr(float(b))])
        return buf.getvalue()


def uniform_law_distance(ens_a, ens_b, window_times, max_support: int | None = None) -> LawDistanceSeries:
    """Per-time beta between the cross-path laws of two ensembles."""
    if ens_a.dim != ens_b.dim:
        raise ValueError("ensembles have different state dimensions")
    betas = []
    for t in window_times:
        ka = ens_a.grid.index_of(t)
        kb = ens_b.grid.index_of(t)
        la = empirical_law(ens_a.states[:, ka, :])
        lb = empirical_law(ens_b.states[:, kb, :])
        betas.append(bl_metric(la, lb, max_support=max_support))
    note = "" if ens_a.dim == 1 else f"beta on {ens_a.dim}-mode marginal"
    return LawDistanceSeries(np.asarray(window_times, dtype=float), np.asarray(betas), note)


def gaussian_noise_floor(m: int, dim: int = 1, scale: float = 1.0, n_trials: int = 8, seed: int = 0) -> float:
    """Mean beta between two independent m-sample sets of N(0, scale^2 I)."""
    rng = np.random.default_rng([seed, m, dim])
    vals = [
        bl_metric(empirical_law(scale * rng.standard_normal((m, dim))), empirical_law(scale * rng.standard_normal((m, dim))))
        for _ in range(n_trials)
    ]
    return float(np.mean(vals))


def noise_floor_table(sizes, dim: int = 1, scale: float = 1.0, n_trials: int = 8, seed: int = 0) -> dict:
    return {int(m): gaussian_noise_floor(int(m), dim, scale, n_trials, seed) for m in sizes}


@dataclass
class ProbeReport:
    """Sup-over-window law distances of shifted solutions from the limit one.

    ``floor_sup`` is the same statistic between two independent ensembles of
    the limit equation, the level empirical beta cannot go below.
    """

    shifts: list
    sup_values: list
    floor_sup: float
    window: tuple
    series: list
    floor_series: LawDistanceSeries
    coefficient_gaps: list
    label: str = "sup over a finite window; the quantifier over all t is truncated to it"

    def within_floor(self, factor: float = 2.0, slack=None) -> list:
        slack = [0.0] * len(self.shifts) if slack is None else slack
        return [s <= factor * self.floor_sup + e for s, e in zip(self.sup_values, slack)]

    def to_dict(self):
        return {
            "shifts": [float(s) for s in self.shifts],
            "sup_values": [float(v) for v in self.sup_values],
            "floor_sup": float(self.floor_sup),
            "window": [float(w) for w in self.window],
            "coefficient_gaps": [float(c) for c in self.coefficient_gaps],
            "series": [s.to_dict() for s in self.series],
            "floor_series": self.floor_series.to_dict(),
            "label": self.label,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())
