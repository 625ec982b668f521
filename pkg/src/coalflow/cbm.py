"""Finite systems of coalescing Brownian motions built by the collision rule.

Particles ``0..m-1`` (0-based here; ranks are 1-based as in the usual
notation) start ordered. Each carries an independent raw Brownian path. At
every grid time, adjacent clusters whose leader positions cross or touch are
merged and the merged cluster follows the member with the highest rank
(smallest ``sigma``). The coalesced path of particle ``i`` is the raw path of
its current leader ``f_i(t)``.

With ``bridge=True`` an adjacent pair that did not cross on the grid still
merges with the Brownian-bridge crossing probability
``exp(-g0 * g1 / dt)`` of the difference process (variance ``2 dt`` per step),
which removes the grid's late-detection bias for pair collisions.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .rng import Stream, as_stream


class CBMError(ValueError):
    pass


class UnorderedStarts(CBMError):
    pass


class NonPositiveDt(CBMError):
    pass


# -- ranks and ancestry -------------------------------------------------------

@dataclass(frozen=True)
class RankPermutation:
    """``sigma[i]`` is the rank of particle ``i + 1``; rank 1 is the highest."""
    sigma: tuple

    @property
    def m(self) -> int:
        return len(self.sigma)

    def rank0(self) -> np.ndarray:
        """0-based particle index -> rank, as the kernels expect."""
        return np.asarray(self.sigma, dtype=np.int32)

    def inverse(self) -> tuple:
        inv = [0] * self.m
        for i, s in enumerate(self.sigma):
            inv[s - 1] = i + 1
        return tuple(inv)


def dyadic_split(i: int) -> tuple[int, int]:
    """Write ``i = (2 i' + 1) 2**p`` and return ``(p, i')``."""
    p = (i & -i).bit_length() - 1
    return p, (i >> p) >> 1


def build_sigma(m: int) -> RankPermutation:
    """Binary-tree ranking: deeper dyadic level first, then larger odd part."""
    if m < 1:
        raise ValueError("m must be at least 1")
    order = sorted(range(1, m + 1), key=lambda i: dyadic_split(i), reverse=True)
    sigma = [0] * m
    for r, i in enumerate(order, start=1):
        sigma[i - 1] = r
    return RankPermutation(tuple(sigma))


def _nearest_higher(sig):
    # nearest index on each side with smaller sigma (monotonic stack)
    m = len(sig)
    left = [-1] * m
    right = [-1] * m
    stack = []
    for i in range(m):
        while stack and sig[stack[-1]] > sig[i]:
            right[stack.pop()] = i
        left[i] = stack[-1] if stack else -1
        stack.append(i)
    return left, right


def ancestry_sets(sigma: RankPermutation) -> list:
    """Indices (1-based) that each particle's follower function can reach.

    Built from the highest rank down: a particle joins the set of whichever
    higher-ranked nearest neighbour has the lower rank of the two.
    """
    sig = sigma.sigma
    m = len(sig)
    left, right = _nearest_higher(sig)
    sets = [None] * m
    for i in sorted(range(m), key=lambda q: sig[q]):
        lo, hi = left[i], right[i]
        s_lo = sig[lo] if lo >= 0 else 0
        s_hi = sig[hi] if hi >= 0 else 0
        if lo < 0 and hi < 0:
            sets[i] = frozenset({i + 1})
        elif s_lo > s_hi:
            sets[i] = sets[lo] | {i + 1}
        else:
            sets[i] = sets[hi] | {i + 1}
    return sets


# -- bundles and follower tables ----------------------------------------------

@dataclass(frozen=True, eq=False)
class FollowerTable:
    """``leaders[i, k]`` is the 0-based index followed by particle ``i`` at grid index ``k``."""
    leaders: np.ndarray
    sigma: RankPermutation

    def jumps(self, i) -> np.ndarray:
        """Grid indices at which particle ``i`` changes leader."""
        return np.flatnonzero(np.diff(self.leaders[i])) + 1

    def check_properties(self, starts) -> dict:
        """Evaluate the four follower properties; returns ``name -> bool``."""
        f = self.leaders
        m = f.shape[0]
        rank = self.sigma.rank0()
        starts = np.asarray(starts)
        idx = np.arange(m)
        f0 = f[:, 0]
        p1 = bool(np.all((f0 == idx) | ((starts[f0] == starts) & (rank[f0] < rank))))
        rf = rank[f]
        p2 = bool(np.all(np.diff(rf, axis=1) <= 0))
        p3 = bool(np.all(np.take_along_axis(f, f, axis=0) == f))
        # once two particles share a leader they share it forever; adjacent pairs suffice
        same = f[1:] == f[:-1]
        first = np.where(same.any(axis=1), same.argmax(axis=1), same.shape[1])
        after = np.arange(f.shape[1])[None, :] >= first[:, None]
        p4 = bool(np.all(same | ~after))
        return {"start": p1, "rank_monotone": p2, "idempotent": p3, "absorbing": p4}


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Trajectories on a uniform grid with their coalescence structure.

    ``paths`` may be ``None`` when only terminal values were kept.
    ``merge_step[b]`` is the first grid index at which particles ``b`` and
    ``b + 1`` share a cluster, or ``-1`` if they never do.
    """
    times: np.ndarray
    starts: np.ndarray
    paths: np.ndarray | None
    final: np.ndarray
    merge_step: np.ndarray

    @property
    def m(self) -> int:
        return self.starts.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.shape[0] > 1 else 0.0

    def coalescence_times(self) -> np.ndarray:
        """Time at which each adjacent pair merged (``nan`` if never)."""
        ms = self.merge_step
        return np.where(ms >= 0, self.times[np.maximum(ms, 0)], np.nan)

    def partition(self, k=-1) -> list:
        """Blocks of 0-based particle indices coalesced by grid index ``k``."""
        k = k % self.times.shape[0]
        cut = (self.merge_step < 0) | (self.merge_step > k)
        blocks, cur = [], [0]
        for b in range(self.m - 1):
            if cut[b]:
                blocks.append(cur)
                cur = []
            cur.append(b + 1)
        blocks.append(cur)
        return blocks

    def to_csv(self, leaders: FollowerTable | None = None) -> str:
        """Rows ``time, particle, position, leader`` (1-based particle and leader)."""
        if self.paths is None:
            raise CBMError("bundle holds terminal values only")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "particle", "position", "leader"])
        for k, t in enumerate(self.times):
            for i in range(self.m):
                lead = int(leaders.leaders[i, k]) + 1 if leaders is not None else ""
                w.writerow([repr(float(t)), i + 1, repr(float(self.paths[i, k])), lead])
        return buf.getvalue()

    def summary(self) -> dict:
        ct = self.coalescence_times()
        return {
            "m": self.m,
            "T": float(self.times[-1]),
            "dt": self.dt,
            "coalescence_times": [None if math.isnan(v) else float(v) for v in ct],
            "final_partition": [[i + 1 for i in b] for b in self.partition()],
            "final_positions": [float(v) for v in self.final],
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def _check_starts(starts):
    starts = np.ascontiguousarray(starts, dtype=np.float64)
    if starts.ndim != 1 or starts.shape[0] < 1:
        raise UnorderedStarts("starts must be a nonempty 1-d sequence")
    if np.any(np.diff(starts) < 0):
        raise UnorderedStarts("starts must be nondecreasing")
    return starts


def _grid(T, dt):
    if not dt > 0:
        raise NonPositiveDt(f"dt must be positive, got {dt}")
    if not T >= 0:
        raise ValueError("T must be nonnegative")
    n = int(round(T / dt))
    if n and abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a whole number of steps of dt={dt}")
    return n, np.arange(n + 1) * dt


def _run(starts, sigma, key, nsteps, dt, bridge, raw, bridge_u, record, stop_single, linger=-1):
    m = starts.shape[0]
    merge_step = np.empty(max(m - 1, 0), dtype=np.int64)
    final_pos = np.empty(m, dtype=np.float64)
    final_lead = np.empty(m, dtype=np.int32)
    out_pos = np.empty((m, nsteps + 1)) if record else None
    out_lead = np.empty((m, nsteps + 1), dtype=np.int32) if record else None
    done = kernels.cbm_collide(starts, sigma.rank0(), raw, key, nsteps, dt, bridge, bridge_u,
                               out_pos, out_lead, merge_step, final_pos, final_lead, stop_single, linger)
    return done, out_pos, out_lead, merge_step, final_pos, final_lead


def collide(times, raw_paths, sigma: RankPermutation | None = None, bridge_u=None):
    """Apply the collision rule to given raw paths.

    Parameters
    ----------
    times : uniform grid of length ``K + 1``.
    raw_paths : array ``(m, K + 1)`` of independent paths with ordered starts.
    sigma : ranking; defaults to :func:`build_sigma`.
    bridge_u : optional ``(K, m - 1)`` uniforms; when given, a non-crossing
        adjacent pair also merges if its uniform falls below the bridge
        crossing probability.

    Returns
    -------
    (PathBundle, FollowerTable)
    """
    raw = np.ascontiguousarray(raw_paths, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    m, k1 = raw.shape
    if times.shape[0] != k1:
        raise ValueError("times and raw paths disagree on the grid length")
    starts = _check_starts(raw[:, 0])
    sigma = sigma or build_sigma(m)
    dt = float(times[1] - times[0]) if k1 > 1 else 1.0
    bu = None if bridge_u is None else np.ascontiguousarray(bridge_u, dtype=np.float64)
    _, pos, lead, ms, fin, _ = _run(starts, sigma, (0, 0), k1 - 1, dt, bu is not None, raw, bu, True, False)
    return PathBundle(times, starts, pos, fin, ms), FollowerTable(lead, sigma)


def simulate_cbm(starts, T, dt, sigma=None, bridge=True, rng=0, record=True):
    """Sample coalescing Brownian motions from ``starts`` on ``[0, T]``.

    Raw increments are standard normal draws at counters ``(particle, step)``
    of the stream, so a run is reproducible from its key alone.
    """
    starts = _check_starts(starts)
    nsteps, times = _grid(T, dt)
    sigma = sigma or build_sigma(starts.shape[0])
    key = as_stream(rng, "cbm").key
    _, pos, lead, ms, fin, flead = _run(starts, sigma, key, nsteps, dt, bridge, None, None, record, False)
    table = FollowerTable(lead if record else flead[:, None], sigma)
    return PathBundle(times, starts, pos, fin, ms), table


def transport_map_sample(starts, T, dt, rng=0, bridge=True) -> np.ndarray:
    """Terminal positions ``(Phi(y_1), ..., Phi(y_m))``; nondecreasing."""
    starts = _check_starts(starts)
    nsteps, _ = _grid(T, dt)
    key = as_stream(rng, "cbm").key
    return _run(starts, build_sigma(starts.shape[0]), key, nsteps, dt, bridge, None, None, False, False)[4]


def transport_ensemble(starts, T, dt, reps, rng, bridge=True, threads=1) -> np.ndarray:
    """``reps`` independent transport vectors, shape ``(reps, m)``."""
    starts = _check_starts(starts)
    nsteps, _ = _grid(T, dt)
    sigma = build_sigma(starts.shape[0])
    stream = as_stream(rng, "cbm")
    keys = stream.keys(reps)
    out = np.empty((reps, starts.shape[0]))

    def work(r):
        out[r] = _run(starts, sigma, keys[r], nsteps, dt, bridge, None, None, False, False)[4]

    _fan_out(work, reps, threads)
    return out


def merge_steps_ensemble(starts, T, dt, reps, rng, bridge=True, threads=1, linger=None) -> np.ndarray:
    """Merge steps of every adjacent pair per replica, shape ``(reps, m - 1)``.

    Runs stop once everything has coalesced, so this is cheaper than
    :func:`transport_ensemble` when only coalescence times matter. With
    ``linger`` a run also stops that many steps after its first merge; later
    merges then read ``-1``.
    """
    starts = _check_starts(starts)
    nsteps, _ = _grid(T, dt)
    sigma = build_sigma(starts.shape[0])
    keys = as_stream(rng, "cbm").keys(reps)
    out = np.empty((reps, starts.shape[0] - 1), dtype=np.int64)
    lg = -1 if linger is None else int(linger)

    def work(r):
        out[r] = _run(starts, sigma, keys[r], nsteps, dt, bridge, None, None, False, True, lg)[3]

    _fan_out(work, reps, threads)
    return out


def pair_coalescence_exact(gap, T=1.0) -> float:
    """Probability that two Brownian particles ``gap`` apart meet by time ``T``."""
    from scipy.stats import norm
    return float(2.0 * norm.sf(gap / math.sqrt(2.0 * T)))


def _fan_out(work, n, threads):
    # each replica writes its own output row, so order of execution is irrelevant
    if threads <= 1:
        for r in range(n):
            work(r)
        return
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(work, range(n), chunksize=max(1, n // (8 * threads))))
