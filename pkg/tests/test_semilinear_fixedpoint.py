import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poisson_sde.green_linear import SpectralOperator
from poisson_sde.presets import get_preset, heat_drift
from poisson_sde.recurrence_core import UniformGrid
from poisson_sde.semilinear_fixedpoint import (
    AuditError,
    CoefficientField,
    InadmissibleError,
    NonConvergenceError,
    bounded_ball_radius,
    c_p,
    contraction_constants,
    fixed_point_residual,
    galerkin_reduce,
    semilinear_comparability_probe,
    solve_bounded_solution,
    theta_2,
    theta_p,
    theta_p_limit,
    threshold_bounded,
    threshold_comparable,
    threshold_convergent,
    threshold_dissipative,
    threshold_lp_limit,
    uniform_integrability_probe,
)

OP5 = SpectralOperator.scalar(5.0)
WINDOW = UniformGrid(0.0, 0.01, 201)


def constant_field(a, dim=1, name=""):
    return CoefficientField(lambda t, x: np.full_like(x, a), dim, A0=abs(a), L=0.0, M=0.0, name=name)


def test_contraction_constants_reference_values():
    rep = contraction_constants(1, 5, 2 / 3, 3)
    assert rep.theta2 == pytest.approx(28 / 225, abs=1e-15)
    assert rep.c_p == pytest.approx(4.5**1.5, rel=1e-14)
    assert rep.theta_p == pytest.approx(0.4007, abs=1e-4)
    assert rep.theta_p_limit == pytest.approx(48 / 225, abs=1e-15)
    assert rep.admissible_bounded and rep.admissible_comparable and rep.admissible_lp_limit
    with pytest.raises(ValueError):
        theta_p(1, 5, 2 / 3, 2.0)
    with pytest.raises(ValueError):
        contraction_constants(0.5, 5, 1)


def test_thresholds():
    assert threshold_bounded(1, 5) == pytest.approx(5 / math.sqrt(7), abs=1e-15)
    assert threshold_comparable(1, 5) == pytest.approx(5 / (2 * math.sqrt(6)), abs=1e-15)
    assert threshold_lp_limit(1, 5) == pytest.approx(5 / math.sqrt(12), abs=1e-15)
    assert threshold_dissipative(1, 5) == pytest.approx(5 / 6, abs=1e-15)
    assert threshold_convergent(1, 5) == pytest.approx(5 / math.sqrt(18), abs=1e-15)


@given(st.floats(2.001, 12))
def test_c_p_at_least_one(p):
    assert c_p(p) >= 1


@given(st.floats(1, 3), st.floats(0.1, 50), st.floats(0, 1))
def test_admissible_bounded_implies_theta2_below_one(N, nu, frac):
    L = frac * threshold_bounded(N, nu)
    rep = contraction_constants(N, nu, L)
    assert rep.admissible_bounded == (L < threshold_bounded(N, nu))
    if rep.admissible_bounded:
        assert rep.theta2 < 1


@given(st.floats(1, 2), st.floats(0.5, 20), st.floats(0.05, 2))
def test_theta_p_continuous_at_two(N, nu, L):
    assert theta_p(N, nu, L, 2 + 1e-4) == pytest.approx(theta_p_limit(N, nu, L), rel=1e-3)


def test_ball_radius():
    assert bounded_ball_radius(1, 5, 0, 2 / 3) == 0
    r = bounded_ball_radius(1, 5, 1, 2 / 3)
    assert r == pytest.approx(math.sqrt(7) / (5 - (2 / 3) * math.sqrt(7)), rel=1e-14)
    assert r == pytest.approx(0.81756, abs=1e-5)
    assert (math.sqrt(7) / 5) * (1 + (2 / 3) * r) == pytest.approx(r, rel=1e-14)
    with pytest.raises(InadmissibleError):
        bounded_ball_radius(1, 5, 1, 2.0)


def test_zero_coefficients_give_zero_in_one_iteration():
    tr = solve_bounded_solution(OP5, constant_field(0.0), constant_field(0.0), WINDOW, 8)
    assert tr.converged and len(tr.sq_distances) == 1
    assert np.all(tr.final_path_ensemble.states == 0)


def test_constant_drift_equilibrium():
    tr = solve_bounded_solution(OP5, constant_field(2.0), constant_field(0.0), WINDOW, 4, tol=1e-12)
    assert np.allclose(tr.final_path_ensemble.states, 0.4, atol=1e-8)


def test_forced_example_contracts_inside_ball():
    op, F, G = get_preset("example1_forced").build()
    tr = solve_bounded_solution(op, F, G, WINDOW, 256, seed=3)
    th2 = theta_2(1, 5, 2 / 3)
    assert tr.converged
    assert all(q <= th2 + 0.05 for q in tr.ratios[1:])
    assert tr.ball_violations == 0
    assert fixed_point_residual(op, F, G, tr) <= tr.tol + 1e-9
    d = tr.to_dict()
    assert d["iterations"] == len(d["sq_distances"]) and d["r"] == pytest.approx(bounded_ball_radius(1, 5, 2 / 3, 2 / 3))


def test_nonconvergence_reports_trace():
    op, F, G = get_preset("example1_forced").build()
    with pytest.raises(NonConvergenceError) as info:
        solve_bounded_solution(op, F, G, WINDOW, 16, max_iter=2)
    assert len(info.value.trace.sq_distances) == 2


def test_inadmissible_solve_is_refused():
    F = CoefficientField(lambda t, x: 2.0 * x, 1, A0=0, L=2.0, M=2.0)
    with pytest.raises(InadmissibleError):
        solve_bounded_solution(OP5, F, constant_field(0.0), WINDOW, 4)


def test_audit_catches_understated_constants():
    F = CoefficientField(lambda t, x: 1.0 + 0.9 * np.sin(x), 1, A0=1.0, L=0.5, M=0.9, name="bad")
    with pytest.raises(AuditError, match="Lipschitz"):
        F.audit()
    G = CoefficientField(lambda t, x: 1.0 + 0 * x, 1, A0=0.5, L=0.0, M=0.0)
    with pytest.raises(AuditError, match="A0"):
        G.audit()


def test_shifted_field():
    F = CoefficientField(lambda t, x: np.sin(t)[:, None] + 0 * x, 1, A0=1, L=0)
    t = np.array([0.1, 0.7])
    x = np.zeros((2, 1))
    assert np.allclose(F.shifted(2.0).evaluate(t, x)[:, 0], np.sin(t + 2.0))


def test_galerkin_reduction_properties():
    op, F, G = galerkin_reduce(6, 32, heat_drift, lambda t, u: 3.0 * u, {"L": 2 / 3}, {"L": 3.0})
    assert op.nu == pytest.approx(math.pi**2) and op.rates[-1] == pytest.approx(36 * math.pi**2)
    t = np.linspace(0, 5, 7)
    assert np.all(F.evaluate(t, np.zeros((7, 6))) == 0)
    e1 = np.zeros((1, 6))
    e1[0, 0] = 1.0
    assert np.allclose(G.evaluate(np.zeros(1), e1), 3.0 * e1, atol=1e-13)
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((500, 6)), rng.standard_normal((500, 6))
    tt = rng.uniform(-50, 50, 500)
    ratio = np.linalg.norm(F.evaluate(tt, a) - F.evaluate(tt, b), axis=1) / np.linalg.norm(a - b, axis=1)
    assert ratio.max() <= 2 / 3
    with pytest.raises(ValueError):
        galerkin_reduce(40, 32, heat_drift, heat_drift)


def test_uniform_integrability_probe_is_finite_and_bounded():
    rep = uniform_integrability_probe(heat_drift, radius=2.0)
    assert 0 < rep["sup_moment"] < math.inf
    assert rep["modulus"] < 1.0


def test_semilinear_probe_zero_shift_and_admissibility():
    op, F, G = get_preset("example1_forced").build()
    grid = UniformGrid(0.0, 0.02, 51)
    rep = semilinear_comparability_probe(op, F, G, [0.0], F, G, grid, n_paths=400, seed=1, window_points=5)
    assert rep.within_floor(2.0) == [True]
    assert rep.coefficient_gaps == [0.0]
    loose = CoefficientField(lambda t, x: 1.1 * np.sin(x), 1, A0=0, L=1.1, M=1.1)
    with pytest.raises(InadmissibleError):
        semilinear_comparability_probe(op, loose, G, [0.0], loose, G, grid, n_paths=10)
