import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import norm

from coalflow.cbm import transport_ensemble
from coalflow.maps import LevyMetricParams, constant_map
from coalflow.stats import (DegenerateInput, EmptySample, NormalW1, OnePointW1, PairCoalescence,
                            ShapeMismatch, bootstrap_ci, bootstrap_diagnostic, coalescence_curve,
                            diagnostic_summary, energy_test, fit_power_law, levy_distance_mc,
                            make_diagnostic, monotone_within_noise, pair_coalescence_exact,
                            point_density, trimmed_window, two_proportion_pvalue, w1_empirical,
                            w1_to_normal)


def test_w1_empirical_examples():
    assert w1_empirical([0, 1], [0, 1]) == 0
    assert w1_empirical([0], [1]) == 1
    assert w1_empirical([0, 2], [1, 3]) == 1
    assert w1_empirical([3, 1], [0, 2]) == 1
    with pytest.raises(EmptySample):
        w1_empirical([], [1])


def _w1_normal_quad(x):
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    F = lambda t: np.searchsorted(x, t, side="right") / n
    pts = list(x)
    lo, hi = min(x[0], -10) - 1, max(x[-1], 10) + 1
    edges = [lo] + pts + [hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            total += integrate.quad(lambda t: abs(F(t) - norm.cdf(t)), a, b, limit=200, epsabs=1e-12)[0]
    return total


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=1, max_size=25))
def test_w1_to_normal_matches_quadrature(xs):
    assert w1_to_normal(xs) == pytest.approx(_w1_normal_quad(xs), abs=1e-7)


def test_w1_to_normal_point_mass():
    # W1(delta_0, N(0,1)) = E|Z|
    assert w1_to_normal([0.0]) == pytest.approx(math.sqrt(2 / math.pi), abs=1e-12)
    assert w1_to_normal([1.0], loc=1.0, scale=2.0) == pytest.approx(2 * math.sqrt(2 / math.pi), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=10, unique=True), st.data())
def test_normal_w1_weights_equal_repetition(u, data):
    u = sorted(u)
    w = data.draw(st.lists(st.integers(1, 5), min_size=len(u), max_size=len(u)))
    rep = np.repeat(u, w)
    assert NormalW1(np.array(u)).value(np.array(w, dtype=float)) == pytest.approx(w1_to_normal(rep), abs=1e-12)


def test_coalescence_curve():
    v = np.zeros((5, 3))
    f, se = coalescence_curve(v, [0, 1, 2])
    assert np.all(f == 1) and np.all(se == 0)
    v = np.array([[0, 0, 1], [0, 1, 1], [0, 0, 0], [1, 2, 3]], dtype=float)
    f, _ = coalescence_curve(v, [0, 1, 2])
    assert f[0, 1] == 0.5 and f[1, 2] == 0.5 and f[0, 2] == 0.25
    with pytest.raises(ShapeMismatch):
        coalescence_curve(v, [0, 1])


def test_coalescence_curve_cbm_reference():
    v = transport_ensemble([0.0, 1.0, 3.0], 1.0, 1e-3, 40_000, 12)
    f, _ = coalescence_curve(v, [0, 1, 3])
    assert abs(f[0, 1] - pair_coalescence_exact(1.0)) <= 0.005 + 3 * math.sqrt(0.25 / 40_000)
    assert abs(f[1, 2] - pair_coalescence_exact(2.0)) <= 0.005 + 3 * math.sqrt(0.25 / 40_000)
    assert abs(f[0, 2] - pair_coalescence_exact(3.0)) <= 0.002 + 3 * math.sqrt(0.04 / 40_000)


def test_pair_coalescence_by_hand():
    grid = np.array([0.0, 1.0, 2.0])
    v = np.array([[0, 0, 5], [1, 2, 3]], dtype=float)
    d = PairCoalescence(v, grid, max_gap=2)
    assert list(d.gaps) == [1.0, 2.0]
    assert np.allclose(d.observed(), [0.25, 0.0])
    e1, e2 = pair_coalescence_exact([1.0, 2.0])
    assert d.value() == pytest.approx((abs(0.25 - e1) + e2) / 2)
    # doubling replica 0 gives 2 coalesced pairs out of 6
    assert np.allclose(d.observed(np.array([2.0, 1.0])), [1 / 3, 0.0])


def test_pair_coalescence_uses_effective_gaps():
    eff = np.array([0.0, 0.8])
    v = np.array([[0, 0], [0, 1]], dtype=float)
    d = PairCoalescence(v, eff, nominal=np.array([0.0, 1.0]))
    assert list(d.gaps) == [1.0]
    assert d.expected[0] == pytest.approx(pair_coalescence_exact(0.8))


def test_one_point_w1_pools_grid():
    grid = np.array([0.0, 10.0])
    v = np.array([[0.5, 9.0], [-1.0, 10.0]])
    d = OnePointW1(v, grid)
    assert d.value() == pytest.approx(w1_to_normal([0.5, -1.0, -1.0, 0.0]))
    assert d.value(np.array([1.0, 0.0])) == pytest.approx(w1_to_normal([0.5, -1.0]))


def test_diagnostic_registry_and_summary():
    v = transport_ensemble([0.0, 0.5, 1.0], 1.0, 1e-2, 500, 1)
    with pytest.raises(ValueError):
        make_diagnostic("nope", v, [0, 0.5, 1])
    s, diags = diagnostic_summary(v, np.array([0, 0.5, 1]), ["pair_coalescence", "one_point_w1"], n_boot=200)
    for name, row in s.items():
        assert row["ci_lo"] <= row["value"] + 3 * row["sd"] and row["n_samples"] == 500
        assert row["boot"].shape == (200,)
    b1 = bootstrap_diagnostic(diags["one_point_w1"], 50, 3)
    b2 = bootstrap_diagnostic(diags["one_point_w1"], 50, 3)
    assert np.array_equal(b1, b2)


def test_point_density_cbm():
    starts = np.arange(-10, 10.0001, 0.05)
    win = trimmed_window((-10, 10))
    d1 = point_density(transport_ensemble(starts, 1.0, 1e-3, 1000, 1), win)
    assert d1 == pytest.approx(1 / math.sqrt(math.pi), rel=0.03)
    d_half = point_density(transport_ensemble(starts, 0.5, 1e-3, 300, 2), trimmed_window((-10, 10), 0.5))
    assert d_half > d1


def test_point_density_single_cell():
    assert point_density([constant_map(0, 4, 1.0)] * 3, (0, 4)) == 0.25
    with pytest.raises(ValueError):
        trimmed_window((0, 1))


def test_levy_distance_mc_examples():
    a = [constant_map(-2, 2, 0.0)] * 5
    c = 0.4
    b = [constant_map(-2, 2, c)] * 5
    mean, ci = levy_distance_mc(a, a, n_boot=50)
    assert mean == 0 and ci == (0.0, 0.0)
    p = LevyMetricParams()
    mean, _ = levy_distance_mc(a, b, p, n_boot=50)
    assert abs(mean - c * (1 - 2.0 ** -p.b_max)) <= p.tail_bound
    with pytest.raises(ShapeMismatch):
        levy_distance_mc(a, b[:2])


def test_levy_independent_pairing_not_smaller():
    maps = [constant_map(-2, 2, float(c)) for c in np.linspace(-1, 1, 12)]
    matched, _ = levy_distance_mc(maps, maps, n_boot=20)
    indep, _ = levy_distance_mc(maps, maps, pairing="independent", rng=5, n_boot=20)
    assert matched == 0 and indep >= matched


def test_fit_power_law_examples():
    n = 2.0 ** np.arange(4, 13)
    f = fit_power_law(list(zip(n, 3 * n ** -0.5)))
    assert f.exponent == pytest.approx(0.5, abs=1e-12) and f.r2 == pytest.approx(1.0)
    assert f.prefactor == pytest.approx(3.0)
    f = fit_power_law(list(zip(n, np.full(n.size, 0.2))))
    assert abs(f.exponent) < 1e-12 and f.ci[0] <= 0 <= f.ci[1]
    gen = np.random.default_rng(1)
    f = fit_power_law(list(zip(n, n ** -0.5 * (1 + 0.05 * gen.standard_normal(n.size)))))
    assert 0.4 <= f.exponent <= 0.6
    with pytest.raises(DegenerateInput):
        fit_power_law([(1, 1), (2, 1), (3, 1)])
    with pytest.raises(DegenerateInput):
        fit_power_law([(1, 1), (2, 0), (3, 1), (4, 1)])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.0, 1.5))
def test_fit_power_law_scale_equivariant(a, b, k):
    n = 2.0 ** np.arange(3, 10)
    d = n ** -k * (1 + 0.1 * np.sin(n))
    f1 = fit_power_law(list(zip(n, d)), n_boot=50)
    f2 = fit_power_law(list(zip(a * n, b * d)), n_boot=50)
    assert f1.exponent == pytest.approx(f2.exponent, abs=1e-9)


def test_fit_power_law_with_bootstrap_rows():
    n = 2.0 ** np.arange(4, 10)
    gen = np.random.default_rng(0)
    boot = n ** -0.5 * np.exp(0.02 * gen.standard_normal((200, n.size)))
    f = fit_power_law(list(zip(n, n ** -0.5)), boot=boot)
    assert f.ci[0] <= 0.5 <= f.ci[1] and f.ci[1] - f.ci[0] < 0.1


def test_monotone_within_noise():
    assert monotone_within_noise([1.0, 0.5, 0.52], [0.01, 0.01, 0.01])
    assert not monotone_within_noise([1.0, 0.5, 0.6], [0.01, 0.01, 0.01])


def test_bootstrap_and_tests():
    x = np.arange(100.0)
    lo, hi = bootstrap_ci(x, np.mean, 500, 1)
    assert lo < 49.5 < hi
    assert two_proportion_pvalue(50, 100, 50, 100) == 1.0
    assert two_proportion_pvalue(10, 100, 60, 100) < 1e-6
    gen = np.random.default_rng(3)
    assert energy_test(gen.normal(size=(60, 2)), gen.normal(size=(60, 2)), 200, 1) > 0.01
    assert energy_test(gen.normal(size=(60, 2)), gen.normal(2, size=(60, 2)), 200, 1) < 0.01
