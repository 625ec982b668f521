import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import kstest

from coalflow.maps import constant_map, make_map
from coalflow.models import lattice_shuffle
from coalflow.renorm import (GRID_OFFSET, MapEnsemble, OddEnsemble, WindowExhausted, cbm_reference_ensemble,
                             cbm_renormalized, default_grid, direct_stats, displacement_bound,
                             fixed_point_tests, model_ensemble, renorm_flow, renorm_pair,
                             renormalize_once, window_schedule)
from coalflow.stats import energy_test, pair_coalescence_exact

SQRT2 = math.sqrt(2.0)


def test_degenerate_single_cell():
    f = constant_map(-1, 1, 0.0)
    ens = MapEnsemble((f, f), 0, "test", (-1.0, 1.0))
    out = renormalize_once(ens, 0, margin=0.0)
    assert len(out) == 1 and out.generation == 1
    h = out.samples[0]
    assert h.window == pytest.approx((-1 / SQRT2, 1 / SQRT2))
    assert list(h.values) == [0.0]


def test_odd_ensemble_rejected():
    f = constant_map(-1, 1, 0.0)
    with pytest.raises(OddEnsemble):
        renormalize_once(MapEnsemble((f,) * 3, 0, "test", (-1.0, 1.0)), 0)


def test_margin_too_large():
    f = constant_map(-1, 1, 0.0)
    with pytest.raises(WindowExhausted):
        renorm_pair(f, f, 1.0)
    g = make_map([-1, 0, 1], [-0.5, 0.5])
    with pytest.raises(WindowExhausted):
        renorm_pair(make_map([-1, 1], [3.0]), g, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32), st.lists(st.floats(-2.5, 2.5), min_size=1, max_size=20))
def test_renorm_pair_pointwise(seed, xs):
    ens = model_ensemble(lattice_shuffle(), 2, 8.0, seed)
    f, g = ens.samples
    margin = displacement_bound(ens.samples)
    h = renorm_pair(f, g, margin)
    x = np.array(xs)
    assert np.array_equal(h(x), g(f(SQRT2 * x)) / SQRT2)


def test_renormalize_once_window_and_variance(lattice):
    ens = model_ensemble(lattice, 4000, 12.0, 1)
    assert ens.window == pytest.approx((-12.0, 12.0))
    m = displacement_bound(ens.samples)
    out = renormalize_once(ens, 2)
    assert out.window == pytest.approx(((-12 + m) / SQRT2, (12 - m) / SQRT2))
    v0 = ens.vectors(np.array([GRID_OFFSET]))[:, 0]
    v1 = out.vectors(np.array([GRID_OFFSET]))[:, 0]
    # composing adds variances and the rescale halves them
    assert np.var(v1) == pytest.approx(np.var(v0), rel=0.1)


def test_window_schedule(lattice):
    widths, margins = window_schedule(lattice, 4, 5.0)
    assert widths[-1] == 5.0 and len(margins) == 4
    for k in range(4):
        assert widths[k] == pytest.approx(SQRT2 * widths[k + 1] + margins[k])
        assert margins[k] == pytest.approx(2 ** (k / 2) * 2.0 / lattice.sigma)


def test_window_budget(lattice):
    with pytest.raises(WindowExhausted):
        renorm_flow(lattice, 6, 4, window_budget=10.0)


def test_default_grid():
    g = default_grid(2.0, 0.5)
    assert g.shape == (9,) and np.allclose(np.diff(g), 0.5) and g[4] == GRID_OFFSET


def test_zero_generations(lattice):
    res = renorm_flow(lattice, 0, 50, n_boot=20)
    assert len(res.stats) == 1 and res.sizes == [50]


def test_flow_matches_materialised_renormalisation(lattice):
    # the depth-first flow reproduces renormalize_once applied generation by generation
    grid = default_grid(2.0, 0.5)
    res = renorm_flow(lattice, 2, 3, grid=grid, rng=4, n_boot=10, keep_vectors=True)
    assert [v.shape[0] for v in res.vectors] == [12, 6, 3]
    for k in range(3):
        assert np.all(np.diff(res.vectors[k], axis=1) >= 0)


def test_flow_reproducible_across_threads(lattice):
    a = renorm_flow(lattice, 3, 40, rng=9, n_boot=50, threads=1, keep_vectors=True)
    b = renorm_flow(lattice, 3, 40, rng=9, n_boot=50, threads=3, keep_vectors=True)
    for va, vb in zip(a.vectors, b.vectors):
        assert np.array_equal(va, vb)
    assert np.array_equal(a.values("one_point_w1"), b.values("one_point_w1"))


@pytest.mark.parametrize("kind", ["lattice", "continuous"])
def test_flow_consistent_with_direct_iteration(kind, lattice, continuous):
    model = lattice if kind == "lattice" else continuous
    G, N = 3, 600
    flow = renorm_flow(model, G, N, rng=1, n_boot=300)
    direct = direct_stats(model, G, N, rng=2, n_boot=300)
    for name in ("pair_coalescence", "one_point_w1"):
        for k in range(G + 1):
            a, b = flow.stats[k][name], direct[k][name]
            z = abs(a["value"] - b["value"]) / math.hypot(a["sd"], b["sd"])
            assert z <= 3.5, (name, k, z)


def test_generation_exchangeable(lattice):
    res = renorm_flow(lattice, 2, 200, rng=3, n_boot=10, keep_vectors=True)
    v = res.vectors[2]
    assert energy_test(v[:100], v[100:], n_perm=200, rng=1) > 0.01


def test_cbm_reference_examples():
    grid = np.array([0.0, 1.0, 2.0])
    ref = cbm_reference_ensemble(grid, size=10_000, rng=1)
    assert kstest(ref[:, 0], "norm").pvalue > 0.01
    assert np.all(np.diff(ref, axis=1) >= 0)
    freq = np.mean(ref[:, 0] == ref[:, 1])
    assert abs(freq - pair_coalescence_exact(1.0)) <= 0.005 + 3 * math.sqrt(0.25 / 10_000)


def test_cbm_fixed_point():
    grid = default_grid(4.0, 0.5)
    ref = cbm_reference_ensemble(grid, size=4000, rng=1)
    ren = cbm_renormalized(grid, 4000, rng=2)
    assert np.all(np.diff(ren, axis=1) >= 0)
    p = fixed_point_tests(ref, ren, grid)
    assert len(p) == 4 and min(p.values()) > 0.01, p
