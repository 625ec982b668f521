"""Statistical checks of the hitting-time and displacement estimates.

Each check returns :class:`BoundCheckReport` objects. Constants in
constant-free bounds are fitted on a calibration subset; the remaining
points test the shape. Every verdict allows 3 standard errors.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import kernels
from .cbm import merge_steps_ensemble
from .crw import hitting_times, one_step_gaps
from .models import MapModel
from .rng import as_stream

MARGIN = 3.0


class BadParams(ValueError):
    pass


@dataclass(frozen=True)
class BoundCheckReport:
    """``kind="upper"``: pass iff ``empirical <= bound + 3 se``; ``"lower"`` mirrors it."""
    name: str
    theoretical_bound: float
    empirical_value: float
    stderr: float
    kind: str = "upper"
    details: dict = field(default_factory=dict, compare=False)

    @property
    def verdict(self) -> str:
        slack = MARGIN * self.stderr
        if self.kind == "upper":
            ok = self.empirical_value <= self.theoretical_bound + slack
        else:
            ok = self.empirical_value >= self.theoretical_bound - slack
        return "pass" if ok else "fail"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "theoretical_bound": self.theoretical_bound,
                "empirical_value": self.empirical_value, "stderr": self.stderr,
                "verdict": self.verdict, "details": self.details}


def reports_to_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)


def _mean_se(x):
    x = np.asarray(x, dtype=np.float64)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.shape[0]))


def _binom_se(p, n):
    # a zero count still carries the resolution of the sample
    return math.sqrt(max(p * (1 - p), 1.0 / n) / n)


# -- Brownian passage times ---------------------------------------------------

def _no_hit_prob(a, T, nu, reps, dt, gen, chunk=64):
    """Per-path probability that ``B`` stays below ``a`` on ``[0, T]``, given the grid path.

    Conditional on the grid values the bridge over a step from ``x0`` to
    ``x1`` (both below ``a``) reaches ``a`` with probability
    ``exp(-2 (a - x0)(a - x1) / (nu dt))``, so averaging the product over
    paths is unbiased for any ``dt``.
    """
    nsteps = max(1, int(round(T / dt)))
    dt = T / nsteps
    sd = math.sqrt(nu * dt)
    out = np.empty(reps)
    for s in range(0, reps, chunk):
        n = min(chunk, reps - s)
        x = np.cumsum(gen.standard_normal((n, nsteps)) * sd, axis=1)
        x = np.concatenate([np.zeros((n, 1)), x], axis=1)
        below = np.all(x < a, axis=1)
        d0, d1 = a - x[:, :-1], a - x[:, 1:]
        p = np.exp(-2.0 * np.clip(d0, 0, None) * np.clip(d1, 0, None) / (nu * dt))
        with np.errstate(divide="ignore"):
            logq = np.log1p(-p).sum(axis=1)
        out[s:s + n] = np.where(below, np.exp(logq), 0.0)
    return out


def reflection_check(a=1.0, T=1.0, nu=1.0, reps=10000, rng=0, dt=1e-4):
    """Check both passage-time estimates for Brownian motion with ``E B_t^2 = nu t``.

    Returns ``(not_large, not_small)``: reports for ``P(tau_a >= T)`` against
    ``sqrt(2/pi) a / sqrt(nu T)`` and for ``P(B*_T >= a)`` against
    ``sqrt(2/pi) sqrt(nu T) / a exp(-a^2 / (2 nu T))``. Both carry the exact
    reflection value and whether the estimate matches it within 3 se.
    """
    if not (a > 0 and T > 0 and nu > 0):
        raise BadParams("a, T and nu must be positive")
    if reps < 2:
        raise BadParams("reps must be at least 2")
    gen = as_stream(rng, "reflection").numpy()
    q = _no_hit_prob(a, T, nu, reps, dt, gen)
    stay, se = _mean_se(q)
    s = math.sqrt(nu * T)
    exact_stay = float(1.0 - 2.0 * norm.sf(a / s))
    c = math.sqrt(2.0 / math.pi)
    out = []
    for name, emp, exact, bound in (
        ("passage_time_not_large", stay, exact_stay, c * a / s),
        ("maximum_not_small", 1.0 - stay, 1.0 - exact_stay, c * s / a * math.exp(-a * a / (2 * nu * T))),
    ):
        out.append(BoundCheckReport(name, bound, emp, se, "upper", {
            "a": a, "T": T, "nu": nu, "dt": dt, "reps": reps, "exact": exact,
            "exact_match": bool(abs(emp - exact) <= MARGIN * se)}))
    return tuple(out)


# -- gap chain tail -----------------------------------------------------------

def gap_tail_check(model: MapModel, x0=4.0, T_grid=tuple(2 ** k for k in range(4, 10)), p=0.45, p0=0.49,
                   reps=20000, rng=0, n_calib=3, threads=1) -> BoundCheckReport:
    """``P(tau_0 > T | X_0 = x0) <= C x0^(2 p0) T^(-p)``.

    ``C`` is the smallest constant that covers the first ``n_calib`` times;
    the report is the worst held-out time. The log-log slope of the tail
    over the whole grid goes in ``details["slope"]``.
    """
    if not 0 < p < p0 < 0.5:
        raise BadParams("need 0 < p < p0 < 1/2")
    if x0 < 1:
        raise BadParams("x0 must be at least 1")
    T = np.asarray(sorted(T_grid), dtype=np.int64)
    if T.shape[0] <= n_calib:
        raise BadParams("T_grid must be longer than the calibration subset")
    tau = hitting_times(model, [x0], int(T[-1]), reps, as_stream(rng, "gap-tail"), threads)[:, 0]
    tail = np.array([np.count_nonzero(tau > t) / reps for t in T])
    se = np.array([_binom_se(v, reps) for v in tail])
    shape = x0 ** (2 * p0) * T.astype(np.float64) ** (-p)
    C = float(np.max(tail[:n_calib] / shape[:n_calib]))
    env = C * shape
    held = np.arange(n_calib, T.shape[0])
    worst = held[np.argmax((tail[held] - env[held]) / se[held])]
    pos = tail > 0
    slope = float(np.polyfit(np.log(T[pos]), np.log(tail[pos]), 1)[0]) if pos.sum() >= 2 else float("nan")
    return BoundCheckReport("gap_tail", float(env[worst]), float(tail[worst]), float(se[worst]), "upper", {
        "x0": x0, "p": p, "p0": p0, "C": C, "slope": slope, "reps": reps, "T": T.tolist(),
        "tail": tail.tolist(), "stderr": se.tolist(), "envelope": env.tolist(), "worst_T": int(T[worst])})


# -- single walker displacement -----------------------------------------------

def walk_maxima(model: MapModel, n, reps, rng) -> np.ndarray:
    """``max_{k <= n} |S_k|`` for ``reps`` walkers started at 0.

    Walker ``r`` uses steps ``r n .. r n + n - 1`` of one stream, so walkers
    are independent and the result does not depend on how reps are split.
    """
    kind, radius, thr, jv, half = model.kernel_args()
    key = as_stream(rng, "walk").key
    base = np.arange(reps, dtype=np.int64) * n
    x = np.zeros(reps)
    top = np.zeros(reps)
    for k in range(n):
        x = kernels.map_eval(kind, radius, thr, jv, half, key, base + k, x)
        np.maximum(top, np.abs(x), out=top)
    return top


def displacement_check(model: MapModel, n=256, M_grid=None, reps=20000, rng=0, p=0.45) -> BoundCheckReport:
    """``P(S*_n >= M) <= C (sqrt(n)/M exp(-M^2 / 18 n) + n^-p)`` for ``M >= sqrt(n)``.

    ``C`` is fitted at the smallest ``M``; the report is the worst other ``M``.
    """
    rn = math.sqrt(n)
    M = np.asarray(M_grid if M_grid is not None else rn * np.array([1.0, 1.5, 2.0, 3.0, 4.0, 6.0]),
                   dtype=np.float64)
    if np.any(M < rn * (1 - 1e-12)):
        raise BadParams("every M must be at least sqrt(n)")
    if M.shape[0] < 2:
        raise BadParams("need at least two values of M")
    M = np.sort(M)
    top = walk_maxima(model, n, reps, as_stream(rng, "displacement"))
    emp = np.array([np.count_nonzero(top >= m) / reps for m in M])
    se = np.array([_binom_se(v, reps) for v in emp])
    shape = rn / M * np.exp(-M ** 2 / (18.0 * n)) + n ** (-p)
    C = float(emp[0] / shape[0])
    env = C * shape
    worst = 1 + int(np.argmax((emp[1:] - env[1:]) / se[1:]))
    return BoundCheckReport("displacement", float(env[worst]), float(emp[worst]), float(se[worst]), "upper", {
        "n": n, "p": p, "C": C, "M": M.tolist(), "tail": emp.tolist(), "stderr": se.tolist(),
        "envelope": env.tolist(), "reps": reps})


# -- three coalescing particles -----------------------------------------------

def three_particle_check(a_grid=(0.005, 0.01, 0.02, 0.05, 0.1, 0.2), p=0.4, reps=20000, dt=1e-4, rng=0,
                         starts=(0.0, 1.0, 2.0), T=8.0, n_boot=500, threads=1) -> BoundCheckReport:
    """Near-simultaneous double collisions are rare: ``P(|tau_- - tau_+| < a)`` decays in ``a``.

    Runs stop ``max(a_grid)`` after the first collision. Replicas with no
    collision by ``T`` (or too close to ``T`` to decide) are dropped, so the
    estimates are conditional on an early first collision. Passes when the
    log-log slope is at least ``p - 0.1`` up to 3 bootstrap se.
    """
    s = np.asarray(starts, dtype=np.float64)
    if s.shape[0] != 3 or np.any(np.diff(s) < 1):
        raise BadParams("need three starts with gaps at least 1")
    if not 0 < p < 0.5:
        raise BadParams("need 0 < p < 1/2")
    a = np.sort(np.asarray(a_grid, dtype=np.float64))
    if a[0] <= 0 or a.shape[0] < 2:
        raise BadParams("a_grid needs at least two positive values")
    linger = int(math.ceil(a[-1] / dt)) + 1
    ms = merge_steps_ensemble(s, T, dt, reps, as_stream(rng, "three"), bridge=True, threads=threads,
                              linger=linger)
    nsteps = int(round(T / dt))
    lo_, hi_ = ms[:, 0], ms[:, 1]
    first = np.where((lo_ >= 0) & (hi_ >= 0), np.minimum(lo_, hi_), np.maximum(lo_, hi_))
    both = (lo_ >= 0) & (hi_ >= 0)
    keep = (first >= 0) & (both | (first + linger <= nsteps))
    gap = np.where(both, np.abs(lo_ - hi_) * dt, np.inf)[keep]
    N = gap.shape[0]
    prob = np.array([np.count_nonzero(gap < v) / N for v in a])

    def slope_of(g):
        pr = np.array([np.count_nonzero(g < v) for v in a]) / g.shape[0]
        ok = pr > 0
        if ok.sum() < 2:
            return float("nan")
        return float(np.polyfit(np.log(a[ok]), np.log(pr[ok]), 1)[0])

    slope = slope_of(gap)
    gen = as_stream(rng, "three-boot").numpy()
    boot = np.array([slope_of(gap[gen.integers(0, N, N)]) for _ in range(n_boot)])
    boot = boot[np.isfinite(boot)]
    sse = float(boot.std(ddof=1)) if boot.shape[0] > 1 else float("inf")
    return BoundCheckReport("three_particle", p - 0.1, slope, sse, "lower", {
        "a": a.tolist(), "prob": prob.tolist(), "stderr": [_binom_se(v, N) for v in prob],
        "increasing": bool(np.all(np.diff(prob) >= 0)), "kept": int(N), "reps": reps, "dt": dt, "T": T})


# -- Lyapunov drift of the gap chain ------------------------------------------

def drift_condition_check(model: MapModel, p0=0.4, A=10.0, reps=200000, rng=0, states=None) -> BoundCheckReport:
    """``E(X_1^(2 p0) - x^(2 p0) | X_0 = x) <= -lambda x^(2 p0 - 2)`` for states ``x > A``.

    Each state gets ``reps`` fresh one-step transitions. The report is the
    bin with the largest mean increment; ``details["lambda"]`` is the
    weighted least-squares fit of the common constant.
    """
    if not 0 < p0 < 0.5:
        raise BadParams("need 0 < p0 < 1/2")
    if A <= model.dep_range:
        raise BadParams(f"A must exceed the dependence range {model.dep_range:g}")
    if states is None:
        states = np.unique(model.cell_anchor(A * np.geomspace(1.0, 8.0, 8)) + model.cell_width)
    x = np.asarray(states, dtype=np.float64)
    if np.any(x <= A):
        raise BadParams("all states must exceed A")
    q = 2.0 * p0
    y = one_step_gaps(model, x, reps, as_stream(rng, "drift"))
    inc = np.clip(y, 0.0, None) ** q - x[:, None] ** q
    means = inc.mean(axis=1)
    ses = inc.std(axis=1, ddof=1) / math.sqrt(reps)
    basis = x ** (q - 2.0)
    w = 1.0 / ses ** 2
    lam = float(-np.sum(w * means * basis) / np.sum(w * basis ** 2))
    lam_se = float(1.0 / math.sqrt(np.sum(w * basis ** 2)))
    worst = int(np.argmax(means / ses))
    return BoundCheckReport("drift_condition", 0.0, float(means[worst]), float(ses[worst]), "upper", {
        "p0": p0, "A": A, "states": x.tolist(), "means": means.tolist(), "stderr": ses.tolist(),
        "lambda": lam, "lambda_stderr": lam_se, "lambda_positive": lam > 0, "reps": reps})
