"""Distance diagnostics against the coalescing Brownian fixed point and rate fits.

All reductions use ``math.fsum`` so results do not depend on how samples were
split across workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm

from .maps import LevyMetricParams, levy_metric
from .rng import as_stream


class StatsError(ValueError):
    pass


class EmptySample(StatsError):
    pass


class ShapeMismatch(StatsError):
    pass


class DegenerateInput(StatsError):
    pass


def fmean(x) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    return math.fsum(x) / x.shape[0]


# -- one-dimensional Wasserstein ----------------------------------------------

def _quantile_subsample(x, n):
    # n evenly spaced order statistics of the sorted sample
    idx = np.floor((np.arange(n) + 0.5) * x.shape[0] / n).astype(np.int64)
    return x[idx]


def w1_empirical(samples_a, samples_b) -> float:
    """W1 between two empirical laws on the line.

    Unequal sizes are reduced by taking evenly spaced order statistics of the
    larger sample.
    """
    a = np.sort(np.asarray(samples_a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(samples_b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptySample("w1_empirical needs two nonempty samples")
    if a.size > b.size:
        a = _quantile_subsample(a, b.size)
    elif b.size > a.size:
        b = _quantile_subsample(b, a.size)
    return math.fsum(np.abs(a - b)) / a.size


def _gauss_prim(x):
    # antiderivative of the standard normal cdf
    return x * ndtr(x) + norm.pdf(x)


def w1_to_normal(samples, loc=0.0, scale=1.0) -> float:
    """Exact W1 between an empirical law and ``N(loc, scale**2)``."""
    x = (np.asarray(samples, dtype=np.float64).ravel() - loc) / scale
    if x.size == 0:
        raise EmptySample("w1_to_normal needs a nonempty sample")
    u, counts = np.unique(x, return_counts=True)
    return scale * NormalW1(u).value(counts)


class NormalW1:
    """W1 to the standard normal of weighted atoms at fixed sorted points ``u``.

    Integrates ``|F_w - Phi|`` piece by piece between atoms. Pieces where the
    weighted cdf does not cross ``Phi`` have a closed form from the
    antiderivative ``G(x) = x Phi(x) + phi(x)``; only crossing pieces need a
    normal quantile. Reweighting (bootstrap) reuses everything but the cdf.
    """

    def __init__(self, u):
        self.u = np.asarray(u, dtype=np.float64)
        self.phi = ndtr(self.u)
        self.g = _gauss_prim(self.u)
        self.g_neg_last = float(_gauss_prim(-self.u[-1]))

    def value(self, weights) -> float:
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        c = np.cumsum(w)[:-1] / total
        a, b = self.u[:-1], self.u[1:]
        pa, pb = self.phi[:-1], self.phi[1:]
        ga, gb = self.g[:-1], self.g[1:]
        gap = b - a
        above = c >= pb          # F_w >= Phi on the whole piece
        below = c <= pa          # F_w <= Phi on the whole piece
        pieces = np.where(above, c * gap - (gb - ga), (gb - ga) - c * gap)
        cross = ~(above | below)
        if np.any(cross):
            cc = c[cross]
            q = np.clip(norm.ppf(cc), a[cross], b[cross])
            gq = _gauss_prim(q)
            pieces[cross] = (cc * (q - a[cross]) - (gq - ga[cross])) + ((gb[cross] - gq) - cc * (b[cross] - q))
        return math.fsum(pieces.tolist()) + float(self.g[0]) + self.g_neg_last


# -- coalescence and density --------------------------------------------------

def coalescence_curve(vector_samples, grid):
    """Pair-coalescence frequencies and their standard errors.

    Returns ``(freq, stderr)``, both ``(m, m)``; entry ``(i, j)`` is the
    fraction of samples with equal values at grid points ``i`` and ``j``.
    """
    v = np.asarray(vector_samples, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != grid.shape[0]:
        raise ShapeMismatch(f"samples {v.shape} do not match grid of length {grid.shape[0]}")
    if v.shape[0] == 0:
        raise EmptySample("no samples")
    m = grid.shape[0]
    freq = np.ones((m, m))
    # ordered vectors: i ~ j iff every adjacent pair between them is equal
    adj = (v[:, 1:] == v[:, :-1])
    for i in range(m):
        run = np.ones(v.shape[0], dtype=bool)
        for j in range(i + 1, m):
            run &= adj[:, j - 1]
            freq[i, j] = freq[j, i] = math.fsum(run) / v.shape[0]
    stderr = np.sqrt(freq * (1 - freq) / v.shape[0])
    return freq, stderr


def pair_coalescence_exact(gaps, T=1.0):
    """Closed form ``2 (1 - Phi(d / sqrt(2 T)))`` for Brownian pairs."""
    return 2.0 * norm.sf(np.abs(np.asarray(gaps, dtype=np.float64)) / math.sqrt(2.0 * T))


class PairCoalescence:
    """Pooled pair-coalescence discrepancy against the Brownian closed form.

    Grid pairs are grouped by nominal gap (``<= max_gap``). Per group the
    observed coalescence frequency, pooled over all pairs of the group, is
    compared with the mean exact probability at the pairs' effective gaps.
    The statistic is the mean absolute group error. Pooling before taking
    absolute values keeps sampling noise from dominating the bias.
    """

    name = "pair_coalescence"

    def __init__(self, samples, grid, nominal=None, max_gap=3.0, T=1.0):
        v = np.asarray(samples, dtype=np.float64)
        grid = np.asarray(grid, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != grid.shape[0]:
            raise ShapeMismatch(f"samples {v.shape} do not match grid of length {grid.shape[0]}")
        if v.shape[0] == 0:
            raise EmptySample("no samples")
        nominal = grid if nominal is None else np.asarray(nominal, dtype=np.float64)
        i, j = np.triu_indices(grid.shape[0], 1)
        dn = np.round(nominal[j] - nominal[i], 9)
        keep = dn <= max_gap
        i, j, dn = i[keep], j[keep], dn[keep]
        if i.size == 0:
            raise DegenerateInput("no grid pair within max_gap")
        self.gaps, group = np.unique(dn, return_inverse=True)
        group = group.reshape(-1)
        self.npairs = np.bincount(group, minlength=self.gaps.size)
        exact = pair_coalescence_exact(grid[j] - grid[i], T)
        self.expected = np.bincount(group, weights=exact, minlength=self.gaps.size) / self.npairs
        eq = (v[:, j] == v[:, i]).astype(np.float64)
        # per replica, number of coalesced pairs in each gap group
        self.counts = np.stack([eq[:, group == g].sum(axis=1) for g in range(self.gaps.size)], axis=1)
        self.n = v.shape[0]

    def observed(self, weights=None):
        if weights is None:
            tot = self.counts.sum(axis=0)
            n = self.n
        else:
            tot = weights @ self.counts
            n = weights.sum()
        return tot / (n * self.npairs)

    def value(self, weights=None) -> float:
        return fmean(np.abs(self.observed(weights) - self.expected))


class OnePointW1:
    """W1 between pooled one-point displacements ``v(y) - y`` and ``N(0, 1)``.

    Every grid point contributes, since a single point's law does not depend
    on the others; the bootstrap resamples whole replicas.
    """

    name = "one_point_w1"

    def __init__(self, samples, grid):
        v = np.asarray(samples, dtype=np.float64)
        grid = np.asarray(grid, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != grid.shape[0]:
            raise ShapeMismatch(f"samples {v.shape} do not match grid of length {grid.shape[0]}")
        if v.shape[0] == 0:
            raise EmptySample("no samples")
        d = (v - grid[None, :]).ravel()
        u, inv = np.unique(d, return_inverse=True)
        self._w1 = NormalW1(u)
        self._inv = inv.reshape(-1)
        self._row = np.repeat(np.arange(v.shape[0]), v.shape[1])
        self._nu = u.size
        self.n = v.shape[0]

    def value(self, weights=None) -> float:
        w = None if weights is None else np.asarray(weights, dtype=np.float64)[self._row]
        return self._w1.value(np.bincount(self._inv, weights=w, minlength=self._nu))


DIAGNOSTICS = {"pair_coalescence": PairCoalescence, "one_point_w1": OnePointW1}


def make_diagnostic(name, samples, grid, nominal=None, max_gap=3.0):
    if name == "pair_coalescence":
        return PairCoalescence(samples, grid, nominal, max_gap=max_gap)
    if name == "one_point_w1":
        return OnePointW1(samples, grid)
    raise ValueError(f"unknown diagnostic {name!r}; known: {sorted(DIAGNOSTICS)}")


def bootstrap_diagnostic(diag, n_boot=1000, rng=0) -> np.ndarray:
    """Bootstrap replicates of ``diag.value`` from multinomial replica weights."""
    gen = as_stream(rng, "boot").numpy()
    p = np.full(diag.n, 1.0 / diag.n)
    return np.array([diag.value(gen.multinomial(diag.n, p).astype(np.float64)) for _ in range(n_boot)])


def diagnostic_summary(samples, eff_grid, names, n_boot=1000, rng=0, nominal=None, max_gap=3.0):
    """Value, bootstrap sd and 95% percentile interval of each named diagnostic.

    Returns ``(summary, diags)``: ``summary[name]`` is a dict that includes the
    bootstrap replicates under ``"boot"``; ``diags[name]`` is the diagnostic.
    """
    stream = as_stream(rng, "summary")
    out, diags = {}, {}
    for name in names:
        d = make_diagnostic(name, samples, eff_grid, nominal, max_gap)
        boot = bootstrap_diagnostic(d, n_boot, stream.derive(name))
        out[name] = {"value": d.value(), "sd": float(boot.std(ddof=1)),
                     "ci_lo": float(np.quantile(boot, 0.025)), "ci_hi": float(np.quantile(boot, 0.975)),
                     "n_samples": int(d.n), "boot": boot}
        diags[name] = d
    return out, diags


def pair_discrepancy(vector_samples, grid, max_gap=3.0, T=1.0) -> float:
    """Shortcut for :class:`PairCoalescence` on a single grid."""
    return PairCoalescence(vector_samples, grid, max_gap=max_gap, T=T).value()


def point_density(map_samples, window) -> float:
    """Mean number of distinct values per unit length inside ``window``.

    ``map_samples`` is a sequence of maps or a 2-d array of value vectors.
    """
    lo, hi = window
    if not hi > lo:
        raise ValueError("window must have positive length")
    counts = []
    for s in map_samples:
        vals = s.values if hasattr(s, "values") and not isinstance(s, np.ndarray) else np.asarray(s)
        u = np.unique(vals)
        counts.append(int(np.count_nonzero((u >= lo) & (u < hi))))
    if not counts:
        raise EmptySample("no samples")
    return math.fsum(counts) / len(counts) / (hi - lo)


def trimmed_window(window, T=1.0, margin=4.0):
    """Shrink ``window`` by ``margin * sqrt(T)`` at each end."""
    lo, hi = window
    d = margin * math.sqrt(T)
    if hi - lo <= 2 * d:
        raise ValueError("window too short to trim")
    return lo + d, hi - d


# -- Levy distances over ensembles --------------------------------------------

def levy_distance_mc(ensemble_a, ensemble_b, params=LevyMetricParams(), pairing="index-matched",
                     rng=0, n_boot=1000):
    """Mean generalised Levy distance over paired samples with a bootstrap CI.

    Returns ``(mean, (lo, hi))``. ``pairing="independent"`` pairs ``a[i]``
    with a uniformly permuted ``b``.
    """
    a, b = list(ensemble_a), list(ensemble_b)
    if len(a) != len(b):
        raise ShapeMismatch("ensembles must have equal size")
    if not a:
        raise EmptySample("empty ensembles")
    stream = as_stream(rng, "levy")
    if pairing == "independent":
        perm = stream.numpy().permutation(len(b))
        b = [b[i] for i in perm]
    elif pairing != "index-matched":
        raise ValueError(f"unknown pairing {pairing!r}")
    d = np.array([levy_metric(f, g, params) for f, g in zip(a, b)])
    ci = bootstrap_ci(d, fmean, n_boot, stream.derive("boot"))
    return fmean(d), ci


# -- bootstrap and tests ------------------------------------------------------

def bootstrap_ci(data, stat, n_boot=1000, rng=0, level=0.95):
    """Percentile bootstrap interval of ``stat`` over rows of ``data``."""
    data = np.asarray(data)
    gen = as_stream(rng, "boot").numpy()
    n = data.shape[0]
    vals = np.array([stat(data[gen.integers(0, n, n)]) for _ in range(n_boot)])
    a = (1 - level) / 2
    return float(np.quantile(vals, a)), float(np.quantile(vals, 1 - a))


def bootstrap_values(data, stat, n_boot=1000, rng=0) -> np.ndarray:
    data = np.asarray(data)
    gen = as_stream(rng, "boot").numpy()
    n = data.shape[0]
    return np.array([stat(data[gen.integers(0, n, n)]) for _ in range(n_boot)])


def two_proportion_pvalue(k1, n1, k2, n2) -> float:
    """Two-sided z-test for equal proportions."""
    p = (k1 + k2) / (n1 + n2)
    se = math.sqrt(p * (1 - p) * (1 / n1 + 1 / n2))
    if se == 0:
        return 1.0
    z = (k1 / n1 - k2 / n2) / se
    return float(2 * norm.sf(abs(z)))


def energy_test(a, b, n_perm=500, rng=0) -> float:
    """Permutation p-value of the two-sample energy statistic (rows are points)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 1 and a.shape[1] > 1 and b.shape[0] == 1:
        a, b = a.T, b.T
    z = np.vstack([a, b])
    n = a.shape[0]
    dist = np.sqrt(((z[:, None, :] - z[None, :, :]) ** 2).sum(axis=-1))

    def stat(idx):
        ia, ib = idx[:n], idx[n:]
        return 2 * dist[np.ix_(ia, ib)].mean() - dist[np.ix_(ia, ia)].mean() - dist[np.ix_(ib, ib)].mean()

    gen = as_stream(rng, "energy").numpy()
    base = np.arange(z.shape[0])
    obs = stat(base)
    hits = sum(stat(gen.permutation(base)) >= obs for _ in range(n_perm))
    return (hits + 1) / (n_perm + 1)


# -- power-law fits -----------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    exponent: float
    ci: tuple
    points: tuple
    r2: float
    intercept: float

    @property
    def prefactor(self) -> float:
        return math.exp(self.intercept)

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "ci_lo": self.ci[0], "ci_hi": self.ci[1], "r2": self.r2,
                "prefactor": self.prefactor, "points": [list(p) for p in self.points]}


def _loglog(n, d):
    x, y = np.log(n), np.log(d)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = math.fsum((y - y.mean()) ** 2)
    r2 = 1.0 - math.fsum(resid ** 2) / ss if ss > 0 else 1.0
    return float(slope), float(icpt), r2


def fit_power_law(points, boot=None, n_boot=1000, rng=0, level=0.95) -> RateFit:
    """Least-squares fit of ``log d`` on ``log n``; exponent is minus the slope.

    Parameters
    ----------
    points : sequence of ``(n, d)`` with ``n`` strictly increasing, ``d > 0``.
    boot : optional ``(B, len(points))`` bootstrap replicates of the distances
        (one column per ``n``). When given, the interval comes from refitting
        each replicate row; otherwise the points themselves are resampled.
    """
    pts = [(float(n), float(d)) for n, d in points]
    if len(pts) < 4:
        raise DegenerateInput("need at least 4 points")
    n = np.array([p[0] for p in pts])
    d = np.array([p[1] for p in pts])
    if np.any(d <= 0) or np.any(n <= 0):
        raise DegenerateInput("n and distances must be positive")
    if np.any(np.diff(n) <= 0):
        raise DegenerateInput("n must be strictly increasing")
    slope, icpt, r2 = _loglog(n, d)
    if boot is not None:
        boot = np.asarray(boot, dtype=np.float64)
        if boot.ndim != 2 or boot.shape[1] != n.shape[0]:
            raise ShapeMismatch("boot must have one column per point")
        x = np.log(n)
        X = np.vstack([x, np.ones_like(x)]).T
        ok = np.all(boot > 0, axis=1)
        sl = np.linalg.lstsq(X, np.log(boot[ok]).T, rcond=None)[0][0]
    else:
        gen = as_stream(rng, "fit").numpy()
        sl = []
        while len(sl) < n_boot:
            idx = gen.integers(0, n.shape[0], n.shape[0])
            if np.unique(idx).shape[0] < 2:
                continue
            sl.append(np.polyfit(np.log(n[idx]), np.log(d[idx]), 1)[0])
        sl = np.asarray(sl)
    a = (1 - level) / 2
    lo, hi = -np.quantile(sl, 1 - a), -np.quantile(sl, a)
    k = -slope
    # percentile intervals can miss a skewed point estimate; keep lo <= k <= hi
    return RateFit(k, (float(min(lo, k)), float(max(hi, k))), tuple(pts), r2, icpt)


def monotone_within_noise(values, sds, factor=2.0) -> bool:
    """``values`` nonincreasing up to ``factor`` combined standard deviations per step."""
    v = np.asarray(values, dtype=np.float64)
    s = np.asarray(sds, dtype=np.float64)
    inc = v[1:] - v[:-1]
    return bool(np.all(inc <= factor * np.sqrt(s[1:] ** 2 + s[:-1] ** 2)))

