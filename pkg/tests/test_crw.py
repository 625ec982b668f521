import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from coalflow.cbm import pair_coalescence_exact
from coalflow.crw import (effective_grid, gap_chain, hitting_times, iterate_maps, iterated_map_sample,
                          one_step_gaps, rescaled_ensemble, rescaled_transport, simulate_crw,
                          terminal_ensemble)
from coalflow.maps import OutOfWindow, image_points
from coalflow.models import continuous_shift, exact_psi_law, lattice_shuffle, sample_map
from coalflow.rng import Stream
from coalflow.stats import w1_to_normal


_CONT = continuous_shift(sigma2_samples=20000)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2 ** 40), st.sampled_from(["lattice", "continuous"]))
def test_composition_and_push_agree(n, seed, kind):
    model = lattice_shuffle() if kind == "lattice" else _CONT
    win = (-10.0, 10.0)
    f = iterate_maps(model, n, win, seed)
    g = iterated_map_sample(model, n, win, seed)
    x = np.linspace(-9.99, 9.99, 300)
    assert np.array_equal(f(x), g(x))
    pushed = simulate_crw(model, x, n, seed, record=False).final
    assert np.array_equal(pushed, f(x))


def test_single_map_is_sample_map(lattice):
    f = iterate_maps(lattice, 1, (-5, 5), 3)
    g = sample_map(lattice, (-5, 5), Stream(3, "crw"))
    assert np.array_equal(f.values, g.values)


def test_two_step_marginal_is_convolution(lattice):
    reps = 40_000
    x = terminal_ensemble(lattice, [0.0], 2, reps, 5)[:, 0]
    law = exact_psi_law(lattice)
    conv = np.convolve(law.probs, law.probs)
    support = np.arange(-2, 3)
    obs = np.array([np.sum(x == v) for v in support])
    assert obs.sum() == reps
    assert chisquare(obs, conv * reps).pvalue > 0.01


def test_increments_follow_psi_law(lattice):
    b = simulate_crw(lattice, [0.0], 100_000, 9)
    inc = np.diff(b.paths[0])
    law = exact_psi_law(lattice)
    obs = np.array([np.sum(inc == v) for v in law.values])
    assert obs.sum() == inc.shape[0]
    assert chisquare(obs, law.probs * inc.shape[0]).pvalue > 0.01


def test_image_count_nonincreasing(lattice):
    counts = [image_points(iterate_maps(lattice, n, (-20, 20), 4)).size for n in (1, 2, 4, 8, 16, 32)]
    assert counts == sorted(counts, reverse=True)


def test_pair_coalesces_by_25(lattice):
    x = terminal_ensemble(lattice, [0.0, 1.0], 25, 2000, 1)
    assert np.mean(x[:, 0] == x[:, 1]) > 0


def test_order_and_absorption(lattice, continuous):
    for model in (lattice, continuous):
        for seed in range(300):
            b = simulate_crw(model, [-2.0, 0.0, 0.3, 3.0], 40, seed)
            assert np.all(np.diff(b.paths, axis=0) >= 0)
            eq = b.paths[1:] == b.paths[:-1]
            assert np.all(np.cumsum(eq, axis=1)[eq.cumsum(axis=1) > 0] > 0)
            assert np.all(eq[:, 1:] | ~eq[:, :-1])


def test_order_many_seeds(lattice):
    x = terminal_ensemble(lattice, np.linspace(-5, 5, 11), 30, 10_000, 2)
    assert np.all(np.diff(x, axis=1) >= 0)


def test_window_checked(lattice):
    with pytest.raises(OutOfWindow):
        simulate_crw(lattice, [0.0, 5.0], 3, 0, window=(-1, 1))


def test_gap_chain_basics(lattice):
    c = gap_chain(lattice, 0.0, 10, 0)
    assert c.hit_index() == 0
    for seed in range(100):
        c = gap_chain(lattice, 4.0, 300, seed)
        assert np.all(c.states >= 0)
        h = c.hit_index()
        if h is not None:
            assert np.all(c.states[h:] == 0)
    assert c.to_csv().startswith("step,gap\n")


def test_hitting_times_monotone_coupling(lattice):
    tau = hitting_times(lattice, [2.0, 8.0], 400, 3000, 6)
    assert np.all(tau[:, 0] <= tau[:, 1])
    for T in (16, 64, 256):
        p2, p8 = np.mean(tau[:, 0] > T), np.mean(tau[:, 1] > T)
        assert p2 <= p8 + 2 * math.sqrt(p8 * (1 - p8) / 3000 + 1e-12)


def test_gap_tail_slope(lattice):
    tau = hitting_times(lattice, [4.0], 512, 20000, 7)[:, 0]
    T = np.array([8, 16, 32, 64, 128, 256, 512])
    surv = np.array([np.mean(tau > t) for t in T])
    slope = np.polyfit(np.log(T), np.log(surv), 1)[0]
    assert -0.65 <= slope <= -0.35


def test_one_step_gaps_shape(lattice):
    g = one_step_gaps(lattice, [1.0, 5.0], 1000, 0)
    assert g.shape == (2, 1000) and np.all(g >= 0)


def test_single_point_variance(lattice):
    n, reps = 256, 100_000
    x = terminal_ensemble(lattice, [0.0], n, reps, 8)[:, 0]
    assert abs(x.mean()) <= 3 * math.sqrt(lattice.sigma2 * n / reps)
    assert x.var() == pytest.approx(lattice.sigma2 * n, rel=0.03)


def test_rescaled_transport(lattice):
    grid = np.array([-1.0, 0.0, 1.0])
    v = rescaled_transport(lattice, 400, grid, 1)
    assert np.all(np.diff(v) >= 0)
    e = rescaled_ensemble(lattice, 400, np.array([0.0]), 10_000, 2)[:, 0]
    assert w1_to_normal(e) <= 0.05


def test_rescaled_pair_coalescence_approaches_cbm(continuous, lattice):
    grid = np.array([0.0, 1.0])
    reps = 4000
    tol = 4 * math.sqrt(0.25 / reps)
    freqs = [np.mean(np.diff(rescaled_ensemble(continuous, n, grid, reps, n), axis=1) == 0) for n in (4, 1024)]
    assert freqs[0] < freqs[1]
    assert abs(freqs[1] - pair_coalescence_exact(1.0)) <= tol
    # lattice grid points act as their cell anchors, so compare at the effective gap
    gaps = []
    for n in (4, 1024):
        eff = effective_grid(lattice, n, grid)
        f = np.mean(np.diff(rescaled_ensemble(lattice, n, grid, reps, n), axis=1) == 0)
        gaps.append(abs(f - pair_coalescence_exact(eff[1] - eff[0])))
    assert gaps[1] < gaps[0] and gaps[1] <= tol


def test_effective_grid_is_anchor(lattice, continuous):
    g = np.array([0.0, 0.3, 1.0])
    s = math.sqrt(lattice.sigma2 * 16)
    assert np.allclose(effective_grid(lattice, 16, g), np.floor(g * s) / s)
    assert np.allclose(effective_grid(continuous, 16, g), g)


def test_threads_do_not_change_results(lattice):
    a = rescaled_ensemble(lattice, 64, np.array([0.0, 0.5]), 500, 3, threads=1)
    b = rescaled_ensemble(lattice, 64, np.array([0.0, 0.5]), 500, 3, threads=3)
    assert np.array_equal(a, b)
