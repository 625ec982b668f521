"""The compiled and pure-Python kernels agree bit for bit."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coalflow import kernels
from coalflow.cbm import build_sigma

pytestmark = pytest.mark.skipif("cython" not in kernels.available_backends(),
                                reason="compiled backend not built")

PY = kernels.get_backend("python")
CY = kernels.get_backend("cython") if "cython" in kernels.available_backends() else None

keys = st.tuples(st.integers(0, 2 ** 32 - 1), st.integers(0, 2 ** 32 - 1))


@pytest.fixture(params=["lattice", "continuous"])
def args(request, lattice, continuous):
    return (lattice if request.param == "lattice" else continuous).kernel_args()


def test_backend_selection():
    assert kernels.BACKEND in kernels.available_backends()
    assert kernels.get_backend("python").NAME == "python"
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


@settings(max_examples=40, deadline=None)
@given(keys, st.lists(st.integers(0, 2 ** 40), min_size=1, max_size=40),
       st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=40, max_size=40))
def test_map_eval_equal(lattice, continuous, key, steps, xs):
    s = np.array(steps, dtype=np.int64)
    x = np.array(xs[:len(steps)])
    for m in (lattice, continuous):
        a = PY.map_eval(*m.kernel_args(), key, s, x)
        b = CY.map_eval(*m.kernel_args(), key, s, x)
        assert np.array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(keys, st.integers(0, 2 ** 40), st.integers(-10 ** 6, 10 ** 6), st.integers(1, 60))
def test_cell_values_equal(lattice, continuous, key, step, k0, n):
    for m in (lattice, continuous):
        oa, a = PY.cell_values(*m.kernel_args(), key, step, k0, n)
        ob, b = CY.cell_values(*m.kernel_args(), key, step, k0, n)
        assert oa == ob and np.array_equal(a, b)


def test_push_points_equal(args):
    for seed in range(5):
        key = (seed, 77)
        x0 = np.sort(np.random.default_rng(seed).uniform(-30, 30, 25))
        xa, xb = x0.copy(), x0.copy()
        ra, rb = np.empty((25, 61)), np.empty((25, 61))
        da = PY.push_points(*args, key, xa, 3, 60, ra, False)
        db = CY.push_points(*args, key, xb, 3, 60, rb, False)
        assert da == db and np.array_equal(ra, rb) and np.array_equal(xa, xb)


def test_push_points_stop_merged_equal(args):
    for seed in range(5):
        xa, xb = np.array([0.0, 3.0]), np.array([0.0, 3.0])
        da = PY.push_points(*args, (seed, 1), xa, 0, 500, None, True)
        db = CY.push_points(*args, (seed, 1), xb, 0, 500, None, True)
        assert da == db and np.array_equal(xa, xb)


@settings(max_examples=30, deadline=None)
@given(keys, st.lists(st.tuples(st.integers(0, 1000), st.integers(0, 2 ** 40)), min_size=1, max_size=30))
def test_std_normal_equal(key, pairs):
    idx = np.array([p[0] for p in pairs], dtype=np.int64)
    steps = np.array([p[1] for p in pairs], dtype=np.int64)
    assert np.array_equal(PY.std_normal(key, idx, steps), CY.std_normal(key, idx, steps))


def _collide(mod, starts, key, nsteps, dt, bridge, raw=None, bu=None, record=True, stop=False, linger=-1):
    m = starts.shape[0]
    rank = build_sigma(m).rank0()
    k1 = nsteps + 1
    op = np.empty((m, k1)) if record else None
    ol = np.empty((m, k1), dtype=np.int32) if record else None
    ms, fp, fl = np.empty(m - 1, dtype=np.int64), np.empty(m), np.empty(m, dtype=np.int32)
    done = mod.cbm_collide(starts, rank, raw, key, nsteps, dt, bridge, bu, op, ol, ms, fp, fl, stop, linger)
    return done, op, ol, ms, fp, fl


@pytest.mark.parametrize("bridge", [False, True])
@pytest.mark.parametrize("stop,linger", [(False, -1), (True, -1), (True, 40)])
def test_cbm_collide_equal(bridge, stop, linger):
    for seed in range(4):
        starts = np.sort(np.random.default_rng(seed).uniform(0, 3, 9))
        starts[3] = starts[4]
        a = _collide(PY, starts, (seed, 5), 300, 1e-2, bridge, stop=stop, linger=linger)
        b = _collide(CY, starts, (seed, 5), 300, 1e-2, bridge, stop=stop, linger=linger)
        done = a[0]
        assert done == b[0]
        # recorded columns past the stopping step are never written
        assert np.array_equal(a[1][:, :done + 1], b[1][:, :done + 1])
        assert np.array_equal(a[2][:, :done + 1], b[2][:, :done + 1])
        for u, v in zip(a[3:], b[3:]):
            assert np.array_equal(u, v)


def test_cbm_collide_given_paths_equal():
    g = np.random.default_rng(3)
    raw = np.cumsum(np.concatenate([np.linspace(0, 2, 6)[:, None], g.normal(0, 0.1, (6, 200))], axis=1), axis=1)
    bu = g.random((200, 5))
    a = _collide(PY, raw[:, 0].copy(), (0, 0), 200, 0.01, True, raw, bu)
    b = _collide(CY, raw[:, 0].copy(), (0, 0), 200, 0.01, True, raw, bu)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


def test_linger_stops_after_first_merge():
    starts = np.array([0.0, 0.05, 5.0])
    done, _, _, ms, _, _ = _collide(CY, starts, (1, 2), 10000, 1e-3, True, stop=True, linger=10)
    assert ms[0] >= 0 and done == ms[0] + 10 and ms[1] == -1
