import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import kstest, norm

from coalflow.cbm import (CBMError, NonPositiveDt, RankPermutation, UnorderedStarts, ancestry_sets,
                          build_sigma, collide, dyadic_split, merge_steps_ensemble,
                          pair_coalescence_exact, simulate_cbm, transport_ensemble,
                          transport_map_sample)


def reachable_oracle(sig):
    """j is reachable from i when j has the top rank on the interval between them."""
    m = len(sig)
    out = []
    for i in range(m):
        s = set()
        for j in range(m):
            a, b = min(i, j), max(i, j)
            if sig[j] == min(sig[a:b + 1]):
                s.add(j + 1)
        out.append(frozenset(s))
    return out


def test_dyadic_split():
    assert dyadic_split(1) == (0, 0)
    assert dyadic_split(12) == (2, 1)
    assert dyadic_split(8) == (3, 0)


def test_sigma_examples():
    assert build_sigma(1).sigma == (1,)
    assert build_sigma(2).sigma == (2, 1)
    assert build_sigma(4).sigma == (4, 2, 3, 1)
    s = build_sigma(4)
    assert s.inverse() == (4, 2, 3, 1)
    with pytest.raises(ValueError):
        build_sigma(0)


def test_ancestry_example():
    assert [len(a) for a in ancestry_sets(build_sigma(4))] == [3, 2, 3, 1]


@pytest.mark.parametrize("m", list(range(1, 65)))
def test_ancestry_matches_interval_oracle(m):
    s = build_sigma(m)
    assert ancestry_sets(s) == reachable_oracle(s.sigma)


def test_ancestry_size_bounds():
    for m in range(1, 1025):
        sets = ancestry_sets(build_sigma(m))
        d = int(math.floor(math.log2(m))) + 1
        assert max(len(a) for a in sets) <= math.log2(m) + 1
        p = d - 1
        assert len(sets[2 ** p - 1]) == d - p


def test_ancestry_random_permutation_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        sig = tuple(int(v) for v in rng.permutation(12) + 1)
        assert ancestry_sets(RankPermutation(sig)) == reachable_oracle(sig)


def test_collide_non_crossing_is_identity():
    t = np.linspace(0, 1, 11)
    raw = np.vstack([t - 1, t + 1])
    bundle, table = collide(t, raw)
    assert np.array_equal(bundle.paths, raw)
    assert np.all(table.leaders[0] == 0) and np.all(table.leaders[1] == 1)
    assert list(bundle.merge_step) == [-1]


@pytest.mark.parametrize("dt,jump", [(0.125, 0.5), (0.2, 0.6)])
def test_collide_hand_trace(dt, jump):
    t = np.arange(int(round(1 / dt)) + 1) * dt
    raw = np.vstack([t, 1 - t])
    bundle, table = collide(t, raw, RankPermutation((2, 1)))
    k = int(np.argmin(np.abs(t - jump)))
    assert np.array_equal(bundle.paths[0, :k], t[:k])
    assert np.array_equal(bundle.paths[0, k:], 1 - t[k:])
    assert np.array_equal(bundle.paths[1], 1 - t)
    assert list(table.leaders[0]) == [0] * k + [1] * (t.shape[0] - k)
    assert list(table.jumps(0)) == [k]
    assert bundle.merge_step[0] == k
    assert table.check_properties(bundle.starts) == {"start": True, "rank_monotone": True,
                                                     "idempotent": True, "absorbing": True}


def test_colocated_start_follows_highest_rank():
    t = np.linspace(0, 1, 5)
    raw = np.vstack([np.zeros(5), np.ones(5), -np.ones(5)]) * t
    bundle, table = collide(t, raw)
    top = int(np.argmin(build_sigma(3).rank0()))
    assert np.all(table.leaders[:, 0] == top)
    assert np.all(bundle.paths == raw[top])
    assert table.check_properties(bundle.starts)["start"]


def test_collide_rejects_unordered():
    t = np.linspace(0, 1, 3)
    with pytest.raises(UnorderedStarts):
        collide(t, np.array([[1.0, 1, 1], [0.0, 0, 0]]))
    with pytest.raises(NonPositiveDt):
        simulate_cbm([0, 1], 1, 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=12), st.integers(0, 2 ** 32), st.booleans())
def test_follower_properties_and_order(starts, seed, bridge):
    starts = sorted(round(s, 1) for s in starts)  # rounding produces co-located starts
    bundle, table = simulate_cbm(starts, 0.5, 0.01, bridge=bridge, rng=seed)
    assert all(table.check_properties(bundle.starts).values())
    assert np.all(np.diff(bundle.paths, axis=0) >= 0)
    # followers sit exactly on their leader's path
    assert np.array_equal(bundle.paths, np.take_along_axis(bundle.paths, table.leaders, axis=0))
    # partitions only coarsen
    prev = None
    for k in range(0, bundle.times.shape[0], 5):
        blocks = [frozenset(b) for b in bundle.partition(k)]
        if prev is not None:
            assert all(any(b <= c for c in blocks) for b in prev)
        prev = blocks


def test_order_preserved_many_seeds():
    x = transport_ensemble(np.linspace(-1, 1, 9), 0.2, 0.01, 10_000, 5)
    assert np.all(np.diff(x, axis=1) >= 0)


def test_reproducible_from_seed():
    a = transport_map_sample([0, 0.5, 1], 1, 1e-2, rng=7)
    b = simulate_cbm([0, 0.5, 1], 1, 1e-2, rng=7)[0].final
    assert np.array_equal(a, b)


def test_single_particle_is_brownian():
    x = transport_ensemble([0.0], 1.0, 1e-2, 100_000, 3)[:, 0]
    se = math.sqrt(1 / x.shape[0])
    assert abs(x.mean()) <= 3 * se
    assert abs(x.var() - 1) <= 0.02


def test_marginals_normal_at_three_times():
    rng_paths = [simulate_cbm([-0.5, 0.0, 0.5], 1.0, 0.01, rng=s)[0].paths for s in range(3000)]
    p = np.stack(rng_paths)
    for k, t in ((25, 0.25), (50, 0.5), (100, 1.0)):
        for i, y in enumerate((-0.5, 0.0, 0.5)):
            assert kstest((p[:, i, k] - y) / math.sqrt(t), "norm").pvalue > 0.01


@pytest.mark.parametrize("gap,tol", [(1.0, 0.005), (3.0, 0.002)])
def test_pair_coalescence_matches_reflection(gap, tol):
    ms = merge_steps_ensemble([0.0, gap], 1.0, 1e-3, 100_000, 11)
    freq = float(np.mean(ms[:, 0] >= 0))
    assert abs(freq - 2 * norm.sf(gap / math.sqrt(2))) <= tol
    assert pair_coalescence_exact(gap) == pytest.approx(2 * norm.sf(gap / math.sqrt(2)))


def test_dt_halving_changes_little():
    n = 40_000
    a = np.mean(merge_steps_ensemble([0.0, 1.0], 1.0, 2e-2, n, 1)[:, 0] >= 0)
    b = np.mean(merge_steps_ensemble([0.0, 1.0], 1.0, 1e-2, n, 2)[:, 0] >= 0)
    assert abs(a - b) <= 4 * math.sqrt(2 * 0.25 / n)


def test_bridge_corrects_grid_bias():
    n = 40_000
    exact = pair_coalescence_exact(1.0)
    off = np.mean(merge_steps_ensemble([0.0, 1.0], 1.0, 5e-2, n, 4, bridge=False)[:, 0] >= 0)
    on = np.mean(merge_steps_ensemble([0.0, 1.0], 1.0, 5e-2, n, 4, bridge=True)[:, 0] >= 0)
    assert off < exact - 0.02
    assert abs(on - exact) <= 4 * math.sqrt(0.25 / n)


def test_distinct_values_stable_under_refinement():
    starts = np.arange(64) * 0.25
    coarse = transport_ensemble(starts, 1.0, 1e-3, 400, 1)
    fine = transport_ensemble(starts, 1.0, 2.5e-4, 400, 2)
    nc = np.mean([np.unique(r).size for r in coarse])
    nf = np.mean([np.unique(r).size for r in fine])
    assert abs(nc - nf) / nf <= 0.03 + 3 * np.std([np.unique(r).size for r in fine]) / math.sqrt(400) / nf
    # interior density approaches 1/sqrt(pi t)
    assert nc == pytest.approx(15.75 / math.sqrt(math.pi) + 2, rel=0.2)


def test_linger_stops_after_first_merge():
    full = merge_steps_ensemble([0.0, 0.01, 2.0], 1.0, 1e-3, 200, 3)
    short = merge_steps_ensemble([0.0, 0.01, 2.0], 1.0, 1e-3, 200, 3, linger=0)
    first = full[:, 0] >= 0
    assert np.array_equal(short[first, 0], full[first, 0])
    late = full[:, 1] > full[:, 0]
    assert np.all(short[late & first, 1] == -1)


def test_bundle_outputs():
    bundle, table = simulate_cbm([0.0, 0.05], 0.5, 0.01, rng=1)
    csv = bundle.to_csv(table)
    assert csv.splitlines()[0] == "time,particle,position,leader"
    assert len(csv.splitlines()) == 1 + 2 * 51
    s = bundle.summary()
    assert s["m"] == 2 and s["dt"] == pytest.approx(0.01)
    terminal, _ = simulate_cbm([0.0], 0.5, 0.01, rng=1, record=False)
    with pytest.raises(CBMError):
        terminal.to_csv()
