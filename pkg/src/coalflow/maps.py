"""Piecewise-constant nondecreasing maps on a finite window.

A map is stored as cell left endpoints plus the window's right end
(``breakpoints``, strictly increasing) and one value per cell (``values``,
nondecreasing). Evaluation is right-continuous. Adjacent cells with equal
values are merged on construction, so after a composition the merged cells
are exactly the coalesced groups.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np


class MapError(ValueError):
    pass


class NonMonotoneInput(MapError):
    pass


class WindowMismatch(MapError):
    pass


class OutOfWindow(MapError):
    pass


class RangeEscapesWindow(MapError):
    pass


class NonPositiveScale(MapError):
    pass


@dataclass(frozen=True, eq=False)
class MonotoneStepMap:
    breakpoints: np.ndarray
    values: np.ndarray

    @property
    def window(self) -> tuple[float, float]:
        return float(self.breakpoints[0]), float(self.breakpoints[-1])

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    def __call__(self, x):
        return evaluate(self, x)

    def cells(self):
        """Iterate ``(lo, hi, value)`` per cell."""
        b, v = self.breakpoints, self.values
        for i in range(v.shape[0]):
            yield float(b[i]), float(b[i + 1]), float(v[i])

    def __repr__(self):
        lo, hi = self.window
        return f"MonotoneStepMap(window=[{lo:g}, {hi:g}], cells={self.n_cells})"


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def make_map(breakpoints, values, window=None, merge_rtol=0.0) -> MonotoneStepMap:
    """Build a normalised map; equal (or ``merge_rtol``-close) neighbours are merged."""
    b = np.asarray(breakpoints, dtype=np.float64).ravel()
    v = np.asarray(values, dtype=np.float64).ravel()
    if b.shape[0] < 2 or v.shape[0] != b.shape[0] - 1:
        raise NonMonotoneInput("need len(values) == len(breakpoints) - 1 >= 1")
    if not np.all(np.isfinite(b)) or not np.all(np.isfinite(v)):
        raise NonMonotoneInput("breakpoints and values must be finite")
    if np.any(np.diff(b) <= 0):
        raise NonMonotoneInput("breakpoints must be strictly increasing")
    if np.any(np.diff(v) < 0):
        raise NonMonotoneInput("values must be nondecreasing")
    if window is not None:
        lo, hi = window
        if lo != b[0] or hi != b[-1]:
            raise WindowMismatch(f"window [{lo}, {hi}] does not match breakpoints [{b[0]}, {b[-1]}]")
    if merge_rtol > 0:
        dv = np.diff(v)
        same = dv <= merge_rtol * np.maximum(np.abs(v[:-1]), np.abs(v[1:]))
    else:
        same = np.diff(v) == 0
    if np.any(same):
        keep = np.concatenate(([True], ~same))
        v = v[keep]
        b = np.concatenate((b[:-1][keep], b[-1:]))
    return MonotoneStepMap(_frozen(b), _frozen(v))


def identity_grid_map(lo, hi, n_cells) -> MonotoneStepMap:
    """Step approximation of the identity: cell ``[a, a + h)`` maps to ``a``."""
    b = np.linspace(lo, hi, n_cells + 1)
    return make_map(b, b[:-1])


def constant_map(lo, hi, c) -> MonotoneStepMap:
    return make_map([lo, hi], [c])


def _cell_index(m, x):
    idx = np.searchsorted(m.breakpoints, x, side="right") - 1
    return np.clip(idx, 0, m.n_cells - 1)


def evaluate(m: MonotoneStepMap, x):
    """Right-continuous value at ``x`` (scalar or array); ``x`` must lie in the window."""
    xa = np.asarray(x, dtype=np.float64)
    lo, hi = m.window
    if np.any(xa < lo) or np.any(xa > hi) or np.any(np.isnan(xa)):
        raise OutOfWindow(f"point outside window [{lo}, {hi}]")
    out = m.values[_cell_index(m, xa)]
    return float(out) if out.ndim == 0 else out


def compose(g: MonotoneStepMap, f: MonotoneStepMap, merge_rtol=0.0) -> MonotoneStepMap:
    """``g o f`` on f's window. Cells of f landing in one cell of g coalesce."""
    glo, ghi = g.window
    if f.values[0] < glo or f.values[-1] > ghi:
        raise RangeEscapesWindow(
            f"range [{f.values[0]}, {f.values[-1]}] of inner map leaves outer window [{glo}, {ghi}]"
        )
    return make_map(f.breakpoints, g.values[_cell_index(g, f.values)], merge_rtol=merge_rtol)


def rescale(m: MonotoneStepMap, s) -> MonotoneStepMap:
    """``x -> m(s x) / s``; window shrinks by ``s``."""
    if not s > 0:
        raise NonPositiveScale(f"scale must be positive, got {s}")
    return make_map(m.breakpoints / s, m.values / s)


def restrict(m: MonotoneStepMap, lo, hi) -> MonotoneStepMap:
    """Restriction to the subwindow ``[lo, hi]``."""
    wlo, whi = m.window
    if lo < wlo or hi > whi or not lo < hi:
        raise WindowMismatch(f"[{lo}, {hi}] is not a subwindow of [{wlo}, {whi}]")
    b = m.breakpoints
    i0 = int(_cell_index(m, lo))
    i1 = int(np.searchsorted(b, hi, side="left"))
    inner = b[i0 + 1:i1]
    return make_map(np.concatenate(([lo], inner, [hi])), m.values[i0:i1])


def image_points(m: MonotoneStepMap) -> np.ndarray:
    """Distinct values in increasing order."""
    return np.unique(m.values)


def clamp_values(m: MonotoneStepMap, bound) -> MonotoneStepMap:
    return make_map(m.breakpoints, np.clip(m.values, -bound, bound))


# -- Levy metrics -----------------------------------------------------------

@dataclass(frozen=True)
class LevyMetricParams:
    b_max: int = 30
    eps_tol: float = 1e-9

    def __post_init__(self):
        if self.b_max < 1:
            raise ValueError("b_max must be a positive integer")
        if not self.eps_tol > 0:
            raise ValueError("eps_tol must be positive")

    @property
    def tail_bound(self) -> float:
        """Error of the truncated series: dropped tail plus bisection slack."""
        return 2.0 ** (-self.b_max) + self.eps_tol


def _shift_lookup(bp, vals, x, shift):
    # value of the clamped-argument step function y -> f(clip(y + shift)) at x
    idx = np.searchsorted(bp - shift, x, side="right") - 1
    return vals[np.clip(idx, 0, vals.shape[0] - 1)]


def _levy_feasible(bf, vf, bg, vg, eps):
    lo, hi = bg[0], bg[-1]
    # x beyond the window, where both maps are constant
    if vg[0] > vf[0] + eps or vf[-1] - eps > vg[-1]:
        return False
    # g(x) >= f(x - eps) - eps
    cand = np.concatenate((bg[:-1], bf[1:-1] + eps))
    cand = cand[(cand >= lo) & (cand <= hi)]
    gx = vg[np.clip(np.searchsorted(bg, cand, side="right") - 1, 0, vg.shape[0] - 1)]
    if np.any(_shift_lookup(bf, vf, cand, -eps) - eps > gx):
        return False
    # g(x) <= f(x + eps) + eps
    cand = np.concatenate((bg[:-1], bf[1:-1] - eps))
    cand = cand[(cand >= lo) & (cand <= hi)]
    gx = vg[np.clip(np.searchsorted(bg, cand, side="right") - 1, 0, vg.shape[0] - 1)]
    return not np.any(gx > _shift_lookup(bf, vf, cand, eps) + eps)


def levy_tilde(f: MonotoneStepMap, g: MonotoneStepMap, bound=None, eps_tol=1e-9, cap=None) -> float:
    """Levy distance of ``chi_B o f`` and ``chi_B o g`` on their common window.

    Bisection over epsilon with an exact feasibility test (both sides are step
    functions, so checking the merged breakpoint set suffices). The returned
    value is feasible and within ``eps_tol`` of the infimum. Both maps are
    extended as constants beyond the window and the inequalities are required
    on the whole line, which keeps the distance symmetric. With ``cap`` set, bisection
    stops as soon as the distance is known to be at least ``cap``.
    """
    if f.window != g.window:
        raise WindowMismatch(f"windows differ: {f.window} vs {g.window}")
    vf, vg = f.values, g.values
    if bound is not None:
        vf = np.clip(vf, -bound, bound)
        vg = np.clip(vg, -bound, bound)
    bf, bg = f.breakpoints, g.breakpoints
    if _levy_feasible(bf, vf, bg, vg, 0.0):
        return 0.0
    lo = 0.0
    hi = float(max(vf.max(), vg.max()) - min(vf.min(), vg.min())) + eps_tol
    while hi - lo > eps_tol:
        if cap is not None and lo >= cap:
            return float(cap)
        mid = 0.5 * (lo + hi)
        if _levy_feasible(bf, vf, bg, vg, mid):
            hi = mid
        else:
            lo = mid
    return hi


def levy_metric(f: MonotoneStepMap, g: MonotoneStepMap, params: LevyMetricParams = LevyMetricParams()) -> float:
    """Generalised Levy metric: sum over B of ``min(levy_tilde_B, 1) / 2**B``, B <= b_max.

    Once B exceeds every value's magnitude the clamp is inert, so the remaining
    terms share one value and are summed in closed form.
    """
    vmax = max(np.abs(f.values).max(), np.abs(g.values).max())
    total = 0.0
    for b in range(1, params.b_max + 1):
        term = min(levy_tilde(f, g, b, params.eps_tol, cap=1.0), 1.0)
        if b >= vmax:
            total += term * (2.0 ** (-b + 1) - 2.0 ** (-params.b_max))
            break
        total += term * 2.0 ** (-b)
    return total


# -- serialisation ------------------------------------------------------------

def map_to_json(m: MonotoneStepMap) -> str:
    lo, hi = m.window
    return json.dumps({
        "window": [lo, hi],
        "breakpoints": [float(v) for v in m.breakpoints],
        "values": [float(v) for v in m.values],
    })


def map_from_json(text: str) -> MonotoneStepMap:
    d = json.loads(text)
    return make_map(d["breakpoints"], d["values"], window=tuple(d["window"]))


def map_to_csv(m: MonotoneStepMap) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lo", "hi", "value"])
    for lo, hi, v in m.cells():
        w.writerow([repr(lo), repr(hi), repr(v)])
    return buf.getvalue()


def map_from_csv(text: str) -> MonotoneStepMap:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise MapError("empty map CSV")
    b = [float(r["lo"]) for r in rows] + [float(rows[-1]["hi"])]
    for a, r in zip(rows[1:], rows[:-1]):
        if float(a["lo"]) != float(r["hi"]):
            raise MapError("cells in map CSV are not contiguous")
    return make_map(b, [float(r["value"]) for r in rows])
