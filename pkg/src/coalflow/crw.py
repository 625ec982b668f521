"""Coalescing random walks: point sets pushed through i.i.d. random maps.

The map applied at step ``s`` is the step-``s`` field of the stream, so
pushing points (:func:`simulate_crw`) and composing materialised maps
(:func:`iterate_maps`) with the same stream give identical trajectories.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .cbm import PathBundle, UnorderedStarts, _fan_out
from .maps import OutOfWindow, compose, make_map, MonotoneStepMap
from .models import MapModel, sample_map
from .rng import as_stream


def iterate_maps(model: MapModel, n, window, rng, step0=0) -> MonotoneStepMap:
    """``Psi_{n,0}`` on ``window`` as an explicit composition of ``n`` maps.

    Each later map is sampled on the current range of the composition padded
    by one cell, which is all the outer map ever gets evaluated on. Cell
    values of a sampled map do not depend on its window, so the result is
    exact on ``window``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    stream = as_stream(rng, "crw")
    f = sample_map(model, window, stream, step=step0)
    for s in range(1, n):
        lo, hi = float(f.values[0]), float(f.values[-1])
        g = sample_map(model, (lo - model.cell_width, hi + model.cell_width), stream, step=step0 + s)
        f = compose(g, f, merge_rtol=model.merge_rtol)
    return f


def _push(model, key, x, n, record, stop_merged=False, step0=0):
    kind, radius, thr, jv, half = model.kernel_args()
    return kernels.push_points(kind, radius, thr, jv, half, key, x, step0, n, record, stop_merged)


def _ordered(starts):
    x = np.ascontiguousarray(starts, dtype=np.float64).copy()
    if x.ndim != 1 or x.shape[0] < 1:
        raise UnorderedStarts("starts must be a nonempty 1-d sequence")
    if np.any(np.diff(x) < 0):
        raise UnorderedStarts("starts must be nondecreasing")
    return x


def _merge_steps(paths):
    same = paths[1:] == paths[:-1]
    has = same.any(axis=1)
    return np.where(has, same.argmax(axis=1), -1).astype(np.int64)


def simulate_crw(model: MapModel, starts, n, rng, window=None, record=True, step0=0) -> PathBundle:
    """Trajectories ``S_k^(i) = Psi_{k,0}(x_i)`` for ``k = 0..n``.

    Only the ``m`` current positions are carried from step to step.
    With ``record=False`` the bundle holds terminal values and no merge steps.
    """
    x = _ordered(starts)
    if window is not None and (x[0] < window[0] or x[-1] > window[1]):
        raise OutOfWindow(f"starts leave window {tuple(window)}")
    key = as_stream(rng, "crw").key
    times = np.arange(n + 1, dtype=np.float64)
    starts = x.copy()
    if record:
        rec = np.empty((x.shape[0], n + 1))
        _push(model, key, x, n, rec, step0=step0)
        return PathBundle(times, starts, rec, rec[:, -1].copy(), _merge_steps(rec))
    _push(model, key, x, n, None, step0=step0)
    return PathBundle(times, starts, None, x, None)


def crw_to_csv(bundle: PathBundle) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "particle", "position"])
    for k in range(bundle.paths.shape[1]):
        for i in range(bundle.m):
            w.writerow([k, i + 1, repr(float(bundle.paths[i, k]))])
    return buf.getvalue()


# -- gap chain ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GapChain:
    """States ``X_k = Psi_{k,0}(x0) - Psi_{k,0}(0)``; 0 is absorbing."""
    states: np.ndarray

    def hit_index(self, h=0.0):
        """First ``k`` with ``X_k <= h``, or ``None``."""
        idx = np.flatnonzero(self.states <= h)
        return int(idx[0]) if idx.size else None

    def to_csv(self) -> str:
        lines = ["step,gap"] + [f"{k},{v!r}" for k, v in enumerate(self.states.tolist())]
        return "\n".join(lines) + "\n"

    def summary_json(self, hs=(0.0,)) -> str:
        return json.dumps({"n_steps": int(self.states.shape[0] - 1),
                           "hitting_times": {repr(float(h)): self.hit_index(h) for h in hs}})


def gap_chain(model: MapModel, x0, n_max, rng) -> GapChain:
    if x0 < 0:
        raise ValueError("x0 must be nonnegative")
    key = as_stream(rng, "gap").key
    x = np.array([0.0, float(x0)])
    rec = np.zeros((2, n_max + 1))
    done = _push(model, key, x, n_max, rec, stop_merged=True)
    gaps = rec[1] - rec[0]
    gaps[done + 1:] = 0.0
    return GapChain(gaps)


def hitting_times(model: MapModel, gaps, n_max, reps, rng, threads=1) -> np.ndarray:
    """Coalescence times with the walker at 0 for several gaps under shared maps.

    Returns an int array ``(reps, len(gaps))``; ``n_max + 1`` marks censoring.
    Sharing the map sequence across gaps is the monotone coupling: larger
    initial gaps never coalesce earlier.
    """
    gaps = np.asarray(gaps, dtype=np.float64)
    order = np.argsort(gaps, kind="stable")
    pts = np.concatenate(([0.0], gaps[order]))
    keys = as_stream(rng, "gap").keys(reps)
    out = np.empty((reps, gaps.shape[0]), dtype=np.int64)

    def work(r):
        x = pts.copy()
        rec = np.empty((x.shape[0], n_max + 1))
        done = _push(model, keys[r], x, n_max, rec, stop_merged=True)
        eq = rec[1:, :done + 1] == rec[0, :done + 1]
        tau = np.where(eq.any(axis=1), eq.argmax(axis=1), n_max + 1)
        out[r, order] = tau

    _fan_out(work, reps, threads)
    return out


def one_step_gaps(model: MapModel, x, reps, rng, step0=0) -> np.ndarray:
    """``reps`` draws of ``X_1`` from each state in ``x``, shape ``(len(x), reps)``.

    Uses a fresh map per draw, so rows sample the chain's transition law.
    """
    x = np.asarray(x, dtype=np.float64)
    key = as_stream(rng, "gap-step").key
    kind, radius, thr, jv, half = model.kernel_args()
    steps = step0 + np.arange(reps, dtype=np.int64)
    base = kernels.map_eval(kind, radius, thr, jv, half, key, steps, np.zeros(reps))
    out = np.empty((x.shape[0], reps))
    for i, xi in enumerate(x):
        out[i] = kernels.map_eval(kind, radius, thr, jv, half, key, steps, np.full(reps, xi)) - base
    return out


# -- diffusive rescaling ------------------------------------------------------

def diffusive_scale(model: MapModel, n) -> float:
    return math.sqrt(model.sigma2 * n)


def effective_grid(model: MapModel, n, grid) -> np.ndarray:
    """Rescaled cell anchors of the grid points.

    ``Psi_tilde_n(y) = Psi_tilde_n(y_eff)`` exactly, so distances between grid
    points should be measured between their anchors when comparing with a
    continuum reference.
    """
    s = diffusive_scale(model, n)
    return model.cell_anchor(np.asarray(grid, dtype=np.float64) * s) / s


def rescaled_transport(model: MapModel, n, grid, rng) -> np.ndarray:
    """``Psi_{n,0}(s y) / s`` at grid points ``y`` with ``s = sqrt(sigma2 n)``."""
    s = diffusive_scale(model, n)
    x = _ordered(np.asarray(grid, dtype=np.float64) * s)
    _push(model, as_stream(rng, "crw").key, x, n, None)
    return x / s


def rescaled_ensemble(model: MapModel, n, grid, reps, rng, threads=1) -> np.ndarray:
    """``reps`` independent draws of :func:`rescaled_transport`, shape ``(reps, m)``."""
    s = diffusive_scale(model, n)
    x0 = _ordered(np.asarray(grid, dtype=np.float64) * s)
    keys = as_stream(rng, "crw").keys(reps)
    out = np.empty((reps, x0.shape[0]))

    def work(r):
        x = x0.copy()
        _push(model, keys[r], x, n, None)
        out[r] = x / s

    _fan_out(work, reps, threads)
    return out


def terminal_ensemble(model: MapModel, starts, n, reps, rng, threads=1) -> np.ndarray:
    """Unscaled terminal positions ``Psi_{n,0}(x_i)`` over ``reps`` replicas."""
    x0 = _ordered(starts)
    keys = as_stream(rng, "crw").keys(reps)
    out = np.empty((reps, x0.shape[0]))

    def work(r):
        x = x0.copy()
        _push(model, keys[r], x, n, None)
        out[r] = x

    _fan_out(work, reps, threads)
    return out


def iterated_map_sample(model: MapModel, n, window, rng) -> MonotoneStepMap:
    """``Psi_{n,0}`` on ``window`` built by pushing every cell's value.

    Same result as :func:`iterate_maps` but without intermediate maps.
    """
    f = sample_map(model, window, as_stream(rng, "crw"))
    vals = np.ascontiguousarray(f.values, dtype=np.float64).copy()
    if n > 1:
        _push(model, as_stream(rng, "crw").key, vals, n - 1, None, step0=1)
    return make_map(f.breakpoints, vals, merge_rtol=model.merge_rtol)

