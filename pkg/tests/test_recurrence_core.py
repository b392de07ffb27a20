import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poisson_sde.recurrence_core import (
    ReferenceFunctionSpec,
    SampledPath,
    TruncationError,
    UniformGrid,
    bebutov_distance,
    coefficient_distance,
    epsilon_almost_periods,
    make_reference,
    translate,
    window_max_distance,
)

GRID = UniformGrid.spanning(-10.0, 10.0, 0.01)


def const(c, grid=GRID):
    return SampledPath(grid, np.full((grid.n, 1), c))


def test_grid_rejects_bad_step_and_size():
    with pytest.raises(ValueError):
        UniformGrid(0.0, -0.1, 10)
    with pytest.raises(ValueError):
        UniformGrid(0.0, 0.1, 1)


def test_grid_index_of_off_grid_time():
    g = UniformGrid(0.0, 0.5, 5)
    assert g.index_of(1.5) == 3
    with pytest.raises(ValueError):
        g.index_of(0.25)


def test_path_rejects_nonfinite():
    with pytest.raises(ValueError):
        SampledPath(UniformGrid(0, 1, 3), [0.0, np.nan, 1.0])


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=30), st.integers(1, 3))
def test_path_json_csv_roundtrip(vals, dim):
    v = np.tile(np.asarray(vals)[:, None], (1, dim))
    p = SampledPath(UniformGrid(-1.25, 0.5, len(vals)), v)
    q = SampledPath.from_json(p.to_json())
    assert np.array_equal(q.values, p.values) and q.grid == p.grid
    r = SampledPath.from_csv(p.to_csv())
    assert np.array_equal(r.values, p.values)
    assert r.grid.compatible(p.grid)


def test_bebutov_closed_forms():
    assert bebutov_distance(const(0.3), const(0.3)) == 0.0
    assert abs(bebutov_distance(const(0.0), const(0.5)) - 0.5) < 1e-9
    ramp = SampledPath.from_function(lambda t: t, GRID)
    assert abs(bebutov_distance(ramp, const(0.0)) - 1.0) < 1e-9


def test_bebutov_matches_dense_scan_over_L():
    a = SampledPath.from_function(lambda t: np.sin(t) * np.exp(-0.1 * t**2), GRID)
    b = SampledPath.from_function(lambda t: 0.2 * np.cos(3 * t), GRID)
    Ls = np.linspace(0.1, 10, 20001)
    scan = max(min(window_max_distance(a, b, L), 1 / L) for L in Ls[::20])
    assert bebutov_distance(a, b) >= scan - 1e-9
    assert bebutov_distance(a, b) - scan < 5e-3


def test_bebutov_rejects_mismatched_grids():
    with pytest.raises(ValueError):
        bebutov_distance(const(0.0), const(0.0, UniformGrid.spanning(-5, 5, 0.01)))


def test_bebutov_truncation_reports_bracket():
    short = UniformGrid.spanning(-2.0, 2.0, 0.01)
    with pytest.raises(TruncationError) as info:
        bebutov_distance(const(0.0, short), const(0.1, short))
    lo, hi = info.value.bracket
    assert lo <= 0.1 <= hi or hi <= 0.5


def random_path(seed):
    rng = np.random.default_rng(seed)
    freqs = rng.uniform(0.1, 3, 3)
    amps = rng.uniform(0, 1, 3)
    return SampledPath.from_function(lambda t: (amps * np.sin(np.outer(t, freqs))).sum(1), GRID)


@settings(max_examples=15)
@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_lemma1_trichotomy(s1, s2):
    a, b = random_path(s1), random_path(s2)
    eps = bebutov_distance(a, b)
    if eps == 0:
        return
    assert abs(window_max_distance(a, b, 1 / eps) - eps) < 1e-6
    for e in (eps * 1.05, eps * 1.5):
        assert window_max_distance(a, b, 1 / e) < e
    for e in (eps * 0.95, eps * 0.6):
        if 1 / e <= 10:
            assert window_max_distance(a, b, 1 / e) > e


@settings(max_examples=10)
@given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6))
def test_bebutov_metric_axioms(s1, s2, s3):
    a, b, c = random_path(s1), random_path(s2), random_path(s3)
    ab, ba = bebutov_distance(a, b), bebutov_distance(b, a)
    assert ab == ba
    assert ab <= bebutov_distance(a, c) + bebutov_distance(c, b) + 2e-9


def test_almost_periods_of_constant_cover_every_shift():
    g = UniformGrid.spanning(-5, 30, 0.01)
    rep = epsilon_almost_periods(const(1.0, g), 0.1, (0, 20), 0.5, 3.0)
    assert len(rep.periods) == 41
    assert rep.max_gap == pytest.approx(0.5)


def test_almost_periods_of_sine_match_closed_form():
    h = 0.001
    g = UniformGrid.spanning(-4, 40, h)
    rep = epsilon_almost_periods(SampledPath.from_function(np.sin, g), 0.01, (0, 35), h, 3.2)
    per = np.asarray(rep.periods)
    closed = 2 * np.abs(np.sin(per / 2))
    assert np.all(closed < 0.01 + 1e-5)
    taus = np.arange(0, round(35 / h) + 1) * h
    sure = taus[2 * np.abs(np.sin(taus / 2)) < 0.01 - 1e-5]
    assert set(np.round(sure / h).astype(int)) <= set(np.round(per / h).astype(int))
    assert all(lo <= p <= hi for p in per for lo, hi in [rep.scan_window])


def test_almost_periods_quasi_periodic_against_brute_force():
    h, core = 0.01, 2.0
    g = UniformGrid.spanning(-core, 500 + core, h)
    fun = lambda t: np.cos(t) + np.cos(math.sqrt(2) * t)
    rep = epsilon_almost_periods(SampledPath.from_function(fun, g), 0.1, (0, 500), 0.01, core)
    assert rep.periods and math.isfinite(rep.max_gap)
    # oracle: evaluate the formula directly at every scanned shift
    tc = np.arange(-round(core / h), round(core / h) + 1) * h
    found = []
    for k in range(0, round(500 / h) + 1):
        tau = k * h
        if np.max(np.abs(fun(tc + tau) - fun(tc))) < 0.1:
            found.append(k)
    assert np.array_equal(np.round(np.asarray(rep.periods) / h).astype(int), found)


def test_almost_periods_monotone_in_epsilon():
    g = UniformGrid.spanning(-3, 300, 0.01)
    p = SampledPath.from_function(lambda t: np.cos(t) + np.cos(math.sqrt(3) * t), g)
    small = set(epsilon_almost_periods(p, 0.1, (0, 290), 0.01, 2.0).periods)
    large = set(epsilon_almost_periods(p, 0.2, (0, 290), 0.01, 2.0).periods)
    assert small <= large


def test_almost_periods_errors():
    p = const(0.0)
    with pytest.raises(ValueError):
        epsilon_almost_periods(p, 0.0, (0, 1), 0.1, 1.0)
    with pytest.raises(ValueError):
        epsilon_almost_periods(p, 0.1, (0, 1), 0.1, 0.0)
    with pytest.raises(ValueError):
        epsilon_almost_periods(p, 0.1, (0, 50), 0.1, 1.0)


def test_translate_identity_period_and_group():
    p = SampledPath.from_function(np.sin, GRID)
    assert np.array_equal(translate(p, 0).values, p.values)
    k = round(2 * math.pi / GRID.h)
    q = translate(p, k)
    assert np.max(np.abs(q.values - p.values[: q.grid.n])) <= GRID.h
    c = translate(const(2.0), 37)
    assert np.all(c.values == 2.0)
    for a, b in [(30, 45), (-20, 70), (50, -80)]:
        ab = translate(translate(p, a), b)
        direct = translate(p, a + b)
        lo, hi = max(ab.grid.t0, direct.grid.t0), min(ab.grid.t_end, direct.grid.t_end)
        i, j = ab.grid.index_of(lo), direct.grid.index_of(lo)
        m = round((hi - lo) / GRID.h) + 1
        assert np.array_equal(ab.values[i : i + m], direct.values[j : j + m])
    with pytest.raises(ValueError):
        translate(p, GRID.n)


def test_reference_functions():
    g = UniformGrid(0.0, 0.5, 4)
    assert make_reference(ReferenceFunctionSpec("levitan_example"), g).values[0, 0] == 0.25
    assert make_reference(ReferenceFunctionSpec("bochner_example"), g).values[0, 0] == pytest.approx(0.247404, abs=1e-6)
    fp = lambda t: make_reference(ReferenceFunctionSpec("periodic", period=2 * math.pi), UniformGrid(t, 1.0, 2)).values[0, 0]
    for t in (0.3, 1.7, -2.2):
        assert fp(t) == pytest.approx(fp(t + 2 * math.pi), abs=1e-12)
    with pytest.raises(ValueError):
        ReferenceFunctionSpec("quasi_periodic").validate()
    with pytest.raises(ValueError):
        ReferenceFunctionSpec("periodic", period=-1.0).validate()


def test_quasi_periodic_torus_table_matches_cosines():
    spec = ReferenceFunctionSpec("quasi_periodic", frequencies=(1.0, math.sqrt(2)))
    g = UniformGrid.spanning(0, 20, 0.1)
    v = make_reference(spec, g).values[:, 0]
    exact = np.cos(g.times) + np.cos(math.sqrt(2) * g.times)
    assert np.max(np.abs(v - exact)) < 0.01


def test_coefficient_distance_closed_forms():
    zero = lambda t, x: np.zeros_like(x)
    one = lambda t, x: np.ones_like(x)
    radii = [1.0, 2.0, 3.0, 4.0]
    N = len(radii)
    assert coefficient_distance(zero, zero, radii) == 0.0
    assert coefficient_distance(zero, one, radii) == pytest.approx(0.5 * (1 - 2.0**-N), abs=1e-12)
    s = lambda t, x: np.sin(t)[:, None] + 0 * x
    s_pi = lambda t, x: np.sin(t + math.pi)[:, None] + 0 * x
    d1 = 2 * math.sin(1.0)  # on |t| <= 1 the sup of 2|sin t| is reached at the edge
    expected = 0.5 * d1 / (1 + d1) + (2 / 3) * (0.5 - 2.0**-N)
    assert coefficient_distance(s, s_pi, radii) == pytest.approx(expected, abs=1e-5)
    with pytest.raises(ValueError):
        coefficient_distance(zero, one, [2.0, 1.0])
