"""The renormalisation step: compose two independent copies, rescale by sqrt(2).

Maps live in diffusive units: a generation-``k`` map built from a model is
``Psi_{2^k,0}(s x) / s`` with ``s = sqrt(sigma2 2^k)``. Windows shrink every
generation, by the factor ``sqrt(2)`` and by the composition margin. The
flow computes the whole window schedule up front from a worst-case
displacement bound, so every generation's maps are exact on their window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import ks_2samp

from .cbm import _fan_out, transport_ensemble
from .crw import effective_grid, rescaled_ensemble
from .maps import RangeEscapesWindow, compose, evaluate, rescale, restrict, MonotoneStepMap
from .models import MapModel, sample_map
from .rng import as_stream
from .stats import diagnostic_summary, two_proportion_pvalue

SQRT2 = math.sqrt(2.0)

# keeps evaluation points off scaled lattice cell boundaries in every generation
GRID_OFFSET = (math.sqrt(5.0) - 1.0) / 40.0


class RenormError(ValueError):
    pass


class OddEnsemble(RenormError):
    pass


class WindowExhausted(RenormError):
    pass


@dataclass(frozen=True, eq=False)
class MapEnsemble:
    samples: tuple
    generation: int
    provenance: str
    window: tuple
    merge_rtol: float = 0.0

    def __post_init__(self):
        for f in self.samples:
            if f.window != tuple(self.window):
                raise RenormError(f"sample window {f.window} differs from ensemble window {self.window}")

    def __len__(self):
        return len(self.samples)

    def vectors(self, grid) -> np.ndarray:
        return np.array([evaluate(f, grid) for f in self.samples])


def displacement_bound(maps) -> float:
    """``sup |f(x) - x|`` over all maps (attained at cell ends)."""
    d = 0.0
    for f in maps:
        b, v = f.breakpoints, f.values
        d = max(d, float(np.max(np.abs(v - b[:-1]))), float(np.max(np.abs(v - b[1:]))))
    return d


def renorm_pair(f: MonotoneStepMap, g: MonotoneStepMap, margin, merge_rtol=0.0) -> MonotoneStepMap:
    """``x -> g(f(sqrt2 x)) / sqrt2`` with ``f`` first cut to ``margin`` inside its window."""
    lo, hi = f.window
    a, b = lo + margin, hi - margin
    if not b > a:
        raise WindowExhausted(f"margin {margin:g} leaves nothing of window [{lo:g}, {hi:g}]")
    try:
        h = compose(g, restrict(f, a, b), merge_rtol=merge_rtol)
    except RangeEscapesWindow as exc:
        raise WindowExhausted(str(exc)) from None
    return rescale(h, SQRT2)


def renormalize_once(ensemble: MapEnsemble, rng, margin=None) -> MapEnsemble:
    """One application of the renormalisation step to an ensemble.

    Samples are paired by a uniformly random perfect matching. ``margin``
    defaults to the largest displacement in the ensemble, which guarantees
    that every inner map's range stays in the outer map's window.
    """
    n = len(ensemble)
    if n < 2 or n % 2:
        raise OddEnsemble(f"need an even ensemble of at least 2 maps, got {n}")
    if margin is None:
        margin = displacement_bound(ensemble.samples)
    perm = as_stream(rng, "pairing").numpy().permutation(n)
    s = ensemble.samples
    out = tuple(renorm_pair(s[perm[2 * k]], s[perm[2 * k + 1]], margin, ensemble.merge_rtol)
                for k in range(n // 2))
    lo, hi = ensemble.window
    return MapEnsemble(out, ensemble.generation + 1, ensemble.provenance,
                       ((lo + margin) / SQRT2, (hi - margin) / SQRT2), ensemble.merge_rtol)


def model_ensemble(model: MapModel, size, half_width, rng) -> MapEnsemble:
    """Generation-0 ensemble: single maps in units of ``sigma``, on ``[-W, W]``."""
    stream = as_stream(rng, "gen0")
    sig = model.sigma
    maps = tuple(rescale(sample_map(model, (-half_width * sig, half_width * sig), stream.replica(i)), sig)
                 for i in range(size))
    return MapEnsemble(maps, 0, model.kind, maps[0].window, model.merge_rtol)


# -- the dyadic flow ----------------------------------------------------------

def window_schedule(model: MapModel, generations, final_half_width):
    """Half-widths ``W_0..W_G`` and margins ``D_0..D_{G-1}``.

    A generation-``k`` map moves no point by more than ``2^k (L + 1)`` original
    units, i.e. ``D_k = 2^(k/2) (L + 1) / sigma`` in its own units; working
    backwards ``W_k = sqrt2 W_{k+1} + D_k``.
    """
    d0 = model.dep_range + model.cell_width
    margins = [2.0 ** (k / 2.0) * d0 / model.sigma for k in range(generations)]
    widths = [0.0] * (generations + 1)
    widths[generations] = float(final_half_width)
    for k in range(generations - 1, -1, -1):
        widths[k] = SQRT2 * widths[k + 1] + margins[k]
    return widths, margins


def default_grid(half_width=4.0, spacing=0.5):
    k = int(math.floor(half_width / spacing))
    return np.arange(-k, k + 1) * spacing + GRID_OFFSET


@dataclass
class FlowResult:
    grid: np.ndarray
    widths: list
    margins: list
    sizes: list
    stats: list = field(default_factory=list)       # per generation: name -> dict
    vectors: list = field(default_factory=list)

    def values(self, name):
        return np.array([s[name]["value"] for s in self.stats])

    def sds(self, name):
        return np.array([s[name]["sd"] for s in self.stats])


def renorm_flow(model: MapModel, generations, ensemble_size, grid=None, rng=0,
                diagnostics=("pair_coalescence", "one_point_w1"), n_boot=1000, threads=1,
                window_budget=20000.0, keep_vectors=False) -> FlowResult:
    """Diagnostics of ``R^k`` applied to the model, ``k = 0..generations``.

    ``ensemble_size`` is the size of the last generation; generation ``k``
    holds ``ensemble_size * 2**(generations - k)`` maps. Maps are built depth
    first along the random matchings, so only one root-to-leaf chain of maps
    is alive per worker; every map's grid values are recorded as it is made.
    """
    if generations < 0:
        raise ValueError("generations must be nonnegative")
    stream = as_stream(rng, "renorm")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    widths, margins = window_schedule(model, generations, float(np.max(np.abs(grid))) + 1.0)
    if widths[0] * model.sigma > window_budget:
        raise WindowExhausted(f"generation-0 window of {2 * widths[0] * model.sigma:.0f} cells exceeds the budget")
    sizes = [ensemble_size * 2 ** (generations - k) for k in range(generations + 1)]
    perms = [stream.derive(f"pairing-{k}").numpy().permutation(sizes[k]) for k in range(generations)]
    vecs = [np.empty((sizes[k], grid.shape[0])) for k in range(generations + 1)]
    sig = model.sigma
    w0 = widths[0] * sig
    gen0 = stream.derive("gen0")

    def build(k, idx):
        if k == 0:
            f = rescale(sample_map(model, (-w0, w0), gen0.replica(idx)), sig)
        else:
            p = perms[k - 1]
            f = renorm_pair(build(k - 1, p[2 * idx]), build(k - 1, p[2 * idx + 1]), margins[k - 1],
                            model.merge_rtol)
        vecs[k][idx] = evaluate(f, grid)
        return f

    _fan_out(lambda j: build(generations, j), ensemble_size, threads)
    res = FlowResult(grid, widths, margins, sizes)
    for k in range(generations + 1):
        eff = effective_grid(model, 2 ** k, grid)
        res.stats.append(diagnostic_summary(vecs[k], eff, diagnostics, n_boot, stream.derive(f"boot-{k}"), grid)[0])
    if keep_vectors:
        res.vectors = vecs
    return res


def direct_stats(model: MapModel, generations, ensemble_size, grid=None, rng=0,
                 diagnostics=("pair_coalescence", "one_point_w1"), n_boot=1000, threads=1):
    """The same diagnostics from direct iteration at ``n = 2**k``."""
    stream = as_stream(rng, "direct")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    out = []
    for k in range(generations + 1):
        n = 2 ** k
        v = rescaled_ensemble(model, n, grid, ensemble_size, stream.derive(f"n{n}"), threads)
        out.append(diagnostic_summary(v, effective_grid(model, n, grid), diagnostics, n_boot,
                                      stream.derive(f"boot-{k}"), grid)[0])
    return out


# -- the Brownian fixed point -------------------------------------------------

def cbm_reference_ensemble(grid, T=1.0, dt=1e-3, size=10000, rng=0, threads=1) -> np.ndarray:
    """``size`` independent transport vectors of coalescing Brownian motion on ``grid``."""
    return transport_ensemble(np.asarray(grid, dtype=np.float64), T, dt, size, as_stream(rng, "cbm-ref"),
                              threads=threads)


def cbm_renormalized(grid, size, dt=1e-3, rng=0, threads=1) -> np.ndarray:
    """The renormalisation step applied to the Brownian transport map on ``grid``.

    The inner copy is sampled at ``sqrt2 * grid``; the outer copy is a fresh
    independent system started from the inner copy's values, where
    co-located particles start coalesced. Both copies run for unit time.
    """
    stream = as_stream(rng, "cbm-renorm")
    grid = np.asarray(grid, dtype=np.float64)
    inner = transport_ensemble(SQRT2 * grid, 1.0, dt, size, stream.derive("inner"), threads=threads)
    keys = stream.derive("outer")
    out = np.empty_like(inner)

    def work(r):
        out[r] = transport_ensemble(inner[r], 1.0, dt, 1, keys.replica(r))[0]

    _fan_out(work, size, threads)
    return out / SQRT2


def fixed_point_tests(reference, renormalized, grid, gaps=(1.0, 3.0)) -> dict:
    """Two-sample tests of finite-dimensional laws; returns ``name -> p-value``."""
    grid = np.asarray(grid, dtype=np.float64)
    a, b = np.asarray(reference), np.asarray(renormalized)
    i0 = int(np.argmin(np.abs(grid)))
    i1 = int(np.argmax(grid))
    out = {
        f"ks_value_at_{grid[i0]:g}": float(ks_2samp(a[:, i0], b[:, i0]).pvalue),
        f"ks_value_at_{grid[i1]:g}": float(ks_2samp(a[:, i1], b[:, i1]).pvalue),
    }
    for g in gaps:
        j = int(np.argmin(np.abs(grid - (grid[i0] + g))))
        ka = int(np.count_nonzero(a[:, i0] == a[:, j]))
        kb = int(np.count_nonzero(b[:, i0] == b[:, j]))
        out[f"pair_coalescence_gap_{grid[j] - grid[i0]:g}"] = two_proportion_pvalue(ka, a.shape[0], kb, b.shape[0])
    return out
