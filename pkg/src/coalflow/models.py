"""Random monotone map models.

Two families of i.i.d. step maps built by local sorting of jittered cell
proposals:

``lattice_shuffle``
    Cells ``[k, k+1)``; proposal ``k + xi_k`` with ``xi_k`` drawn from a finite
    law. Sorted proposals are assigned to cells left to right, so ties give
    adjacent cells one value (coalescence in a single step).
``continuous_shift``
    Cells ``[k+U, k+1+U)`` with a fresh uniform offset ``U`` per map; proposal
    is the cell centre plus ``xi_k ~ U[-h, h]``. Ties have probability zero, so
    points only coalesce through composition. The random offset makes the
    displacement field stationary in ``x`` (not only in integer shifts).

Jumps are bounded by ``L``, so proposals more than ``2L`` cells apart are
already ordered and a sort over ``2L+1`` neighbours on each side reproduces the
global sort exactly.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .maps import make_map, MonotoneStepMap
from .rng import Stream, as_stream

LATTICE = "lattice_shuffle"
CONTINUOUS = "continuous_shift"
KINDS = (LATTICE, CONTINUOUS)

MERGE_RTOL_CONTINUOUS = 1e-12


class ModelError(ValueError):
    pass


class WindowTooSmall(ModelError):
    pass


class AssumptionViolated(ModelError):
    def __init__(self, item, detail):
        super().__init__(f"assumption {item} violated: {detail}")
        self.item = item


@dataclass(frozen=True)
class PsiLaw:
    """Law of the one-step displacement at the origin."""
    values: np.ndarray
    probs: np.ndarray
    mean: float
    var: float
    exact: bool
    n_samples: int = 0
    stderr_mean: float = 0.0

    def to_csv(self) -> str:
        lines = ["value,probability"]
        lines += [f"{v!r},{p!r}" for v, p in zip(self.values.tolist(), self.probs.tolist())]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class MapModel:
    kind: str
    jump_values: tuple = ()
    jump_probs: tuple = ()
    half_width: float = 0.0
    cell_width: float = 1.0
    sort_radius: int = 0
    dep_range: float = 0.0
    sigma2: float = 0.0
    sigma2_exact: bool = False
    sigma2_seed: int = 0
    sigma2_samples: int = 0
    _thr: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def anchor(self) -> float:
        """Position inside a cell that the proposal is built around."""
        return 0.0 if self.kind == LATTICE else 0.5

    def cell_anchor(self, x):
        """Point that ``x`` is equivalent to under every map of the model.

        Lattice maps are constant on ``[k, k+1)``, so ``x`` acts exactly like
        ``floor(x)``. Continuous cells are randomly offset, so every point is
        its own anchor.
        """
        x = np.asarray(x, dtype=np.float64)
        return np.floor(x) if self.kind == LATTICE else x

    @property
    def merge_rtol(self) -> float:
        return 0.0 if self.kind == LATTICE else MERGE_RTOL_CONTINUOUS

    def kernel_args(self):
        if self.kind == LATTICE:
            return (kernels.KIND_LATTICE, self.sort_radius, self._thr,
                    np.asarray(self.jump_values, dtype=np.float64), 0.0)
        return (kernels.KIND_CONTINUOUS, self.sort_radius, np.zeros(1, dtype=np.uint64),
                np.zeros(1), float(self.half_width))

    def jump_mean(self) -> float:
        if self.kind == LATTICE:
            return math.fsum(v * p for v, p in zip(self.jump_values, self.jump_probs))
        return 0.0

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == LATTICE:
            d["jump_values"] = list(self.jump_values)
            d["jump_probs"] = list(self.jump_probs)
        else:
            d["half_width"] = self.half_width
            d["sigma2_seed"] = self.sigma2_seed
            d["sigma2_samples"] = self.sigma2_samples
        d["sigma2"] = self.sigma2
        d["sigma2_exact"] = self.sigma2_exact
        return d


def _thresholds(probs):
    # uint32 draw w selects the first t with w < thr[t]
    c = np.cumsum(np.asarray(probs, dtype=np.float64))
    thr = np.floor(c * 2.0 ** 32).astype(np.uint64)
    thr[-1] = np.uint64(2 ** 32)
    return thr


def lattice_shuffle(jump_values=(-1, 1), jump_probs=None) -> MapModel:
    """Lattice model; the default is the symmetric +-1 jump law."""
    vals = tuple(float(v) for v in jump_values)
    if jump_probs is None:
        jump_probs = [1.0 / len(vals)] * len(vals)
    probs = tuple(float(p) for p in jump_probs)
    if len(vals) == 0 or len(vals) != len(probs):
        raise ModelError("jump_values and jump_probs must be nonempty and of equal length")
    if any(not math.isfinite(v) for v in vals) or any(p < 0 for p in probs):
        raise ModelError("jump values must be finite and probabilities nonnegative")
    if abs(math.fsum(probs) - 1.0) > 1e-12:
        raise ModelError(f"jump probabilities sum to {math.fsum(probs)}, not 1")
    if list(vals) != sorted(set(vals)):
        raise ModelError("jump values must be strictly increasing")
    L = max(abs(v) for v in vals)
    radius = 2 * math.ceil(L) + 1
    model = MapModel(kind=LATTICE, jump_values=vals, jump_probs=probs, sort_radius=radius,
                     dep_range=float(L), _thr=_thresholds(probs))
    law = exact_psi_law(model)
    return _with_sigma2(model, law.var, True)


def continuous_shift(half_width=math.sqrt(3.0), sigma2_samples=200_000, sigma2_seed=20240601) -> MapModel:
    """Continuous model with uniform jitter on ``[-half_width, half_width]``.

    The displacement variance has no closed form; it is estimated once from
    ``sigma2_samples`` independent maps on a fixed stream.
    """
    if not (half_width > 0 and math.isfinite(half_width)):
        raise ModelError("half_width must be positive and finite")
    radius = 2 * math.ceil(half_width) + 1
    model = MapModel(kind=CONTINUOUS, half_width=float(half_width), sort_radius=radius,
                     dep_range=float(half_width), sigma2_seed=int(sigma2_seed),
                     sigma2_samples=int(sigma2_samples))
    law = psi_law_mc(model, int(sigma2_samples), Stream(int(sigma2_seed), "sigma2"))
    return _with_sigma2(model, law.var, False)


def _with_sigma2(model, var, exact):
    if not var > 0:
        raise ModelError("displacement variance must be positive")
    return MapModel(**{**{f: getattr(model, f) for f in model.__dataclass_fields__},
                       "sigma2": float(var), "sigma2_exact": exact})


def model_from_dict(d: dict) -> MapModel:
    kind = d.get("kind")
    if kind == LATTICE:
        m = lattice_shuffle(d.get("jump_values", (-1, 1)), d.get("jump_probs"))
    elif kind == CONTINUOUS:
        m = continuous_shift(d.get("half_width", math.sqrt(3.0)),
                             d.get("sigma2_samples", 200_000), d.get("sigma2_seed", 20240601))
    else:
        raise ModelError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    return m


# -- sampling -----------------------------------------------------------------

def _offset(model, step, key):
    if model.kind == LATTICE:
        return 0.0
    off, _ = kernels.cell_values(*model.kernel_args(), key, step, 0, 1)
    return off


def sample_map(model: MapModel, window, rng, step=0) -> MonotoneStepMap:
    """One map of the model restricted to ``window``.

    Every cell value is computed from its own sorting neighbourhood, so the
    returned cells are exact regardless of where the window is cut.
    ``step`` selects which map of the stream's sequence is drawn.
    """
    stream = as_stream(rng)
    lo, hi = float(window[0]), float(window[1])
    if not hi - lo >= 2 * model.cell_width:
        raise WindowTooSmall(f"window [{lo}, {hi}] is shorter than two cells")
    kind, radius, thr, jv, half = model.kernel_args()
    u = _offset(model, step, stream.key)
    k0 = math.floor(lo - u)
    n = math.ceil(hi - u) - k0
    off, vals = kernels.cell_values(kind, radius, thr, jv, half, stream.key, step, k0, n)
    # cell k0 contains lo and cell k0 + n - 1 contains hi
    inner = (k0 + np.arange(1, n)) + off
    b = np.concatenate(([lo], inner, [hi]))
    return make_map(b, vals, merge_rtol=model.merge_rtol)


def psi_at(model: MapModel, x, steps, key) -> np.ndarray:
    """Displacement ``Psi(x) - x`` of the step-``steps[i]`` map at ``x[i]``."""
    x = np.asarray(x, dtype=np.float64)
    return kernels.map_eval(*model.kernel_args(), key, np.asarray(steps, dtype=np.int64), x) - x


def psi_law_mc(model: MapModel, n, rng) -> PsiLaw:
    """Monte Carlo law of the displacement at 0 over ``n`` independent maps."""
    stream = as_stream(rng)
    d = psi_at(model, np.zeros(n), np.arange(n), stream.key)
    vals, counts = np.unique(d, return_counts=True)
    mean = math.fsum(d) / n
    var = math.fsum((d - mean) ** 2) / (n - 1)
    return PsiLaw(vals, counts / n, mean, var, exact=False, n_samples=n,
                  stderr_mean=math.sqrt(var / n))


def _psi_enumerate(values, probs, radius):
    """Exact law of the middle order statistic of ``j + xi_j``, ``|j| <= radius``."""
    vals = np.asarray(values, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    width = 2 * radius + 1
    table = {}
    js = np.arange(-radius, radius + 1, dtype=np.float64)
    for pattern in itertools.product(range(vals.shape[0]), repeat=width):
        idx = np.array(pattern)
        w = float(np.prod(probs[idx]))
        if w == 0.0:
            continue
        d = float(np.sort(js + vals[idx])[radius])
        table[d] = table.get(d, 0.0) + w
    keys = sorted(table)
    return np.array(keys), np.array([table[k] for k in keys])


def exact_psi_law(model: MapModel, mc_samples=1_000_000, rng=None) -> PsiLaw:
    """Law of the displacement at 0.

    Lattice models are enumerated over all jump patterns in the sorting
    neighbourhood (only cells within ``2L`` of the origin can matter). The
    continuous model has no finite enumeration and gets a Monte Carlo
    histogram flagged ``exact=False``.
    """
    if model.kind == CONTINUOUS:
        return psi_law_mc(model, mc_samples, rng if rng is not None else Stream(model.sigma2_seed, "psi-law"))
    radius = 2 * math.ceil(model.dep_range)
    n_patterns = len(model.jump_values) ** (2 * radius + 1)
    if n_patterns > 5_000_000:
        raise ModelError(f"jump law too wide for enumeration ({n_patterns} patterns)")
    vals, probs = _psi_enumerate(model.jump_values, model.jump_probs, radius)
    mean = math.fsum(v * p for v, p in zip(vals, probs))
    var = math.fsum((v - mean) ** 2 * p for v, p in zip(vals, probs))
    return PsiLaw(vals, probs, mean, var, exact=True)


# -- assumption checks --------------------------------------------------------

@dataclass
class AssumptionReport:
    coalescence: dict          # gap A -> (steps l, frequency)
    psi_mean: float
    psi_var: float
    psi_exact: bool
    max_abs_psi: float
    dep_range: float
    passed: dict

    @property
    def ok(self) -> bool:
        return all(self.passed.values())


def coalescence_frequency(model: MapModel, gap, steps, reps, rng, start=0.0):
    """Fraction of ``reps`` two-point walks from ``(start, start+gap)`` that meet within ``steps``."""
    stream = as_stream(rng)
    kind, radius, thr, jv, half = model.kernel_args()
    hits = 0
    for r in range(reps):
        x = np.array([start, start + gap], dtype=np.float64)
        kernels.push_points(kind, radius, thr, jv, half, stream.replica(r).key, x, 0, steps, None, True)
        hits += x[0] == x[1]
    return hits / reps


def validate_assumptions(model: MapModel, reps, rng, gaps=(1, 5, 20), raise_on_fail=True) -> AssumptionReport:
    """Empirical and structural checks of the model assumptions.

    A1 coalescence from each gap ``A`` within ``ceil(4 A**2)`` steps is positive;
    A2 displacement mean is zero (variance is recorded, not forced to 1);
    A3/A4 displacements are bounded by the dependence range.
    """
    if reps < 1000:
        raise ValueError("reps must be at least 1000")
    stream = as_stream(rng, "validate")
    coal = {}
    for a in gaps:
        steps = math.ceil(4 * a * a)
        coal[a] = (steps, coalescence_frequency(model, a, steps, reps, stream.derive(f"A1-{a}")))
    law = exact_psi_law(model, mc_samples=max(reps, 100_000), rng=stream.derive("A2"))
    if law.exact:
        mean_ok = abs(law.mean) <= 1e-12
    else:
        mean_ok = abs(law.mean) <= 4 * law.stderr_mean
    # displacement at cell anchors is within L by construction of the sort
    sub = stream.derive("A3")
    k = np.arange(-8, 9, dtype=np.float64)
    x = np.tile(k, reps) + model.anchor
    steps = np.repeat(np.arange(reps), k.shape[0])
    if model.kind == CONTINUOUS:
        u = np.array([_offset(model, int(s), sub.key) for s in range(reps)])
        x = x + np.repeat(u, k.shape[0])
    max_psi = float(np.max(np.abs(psi_at(model, x, steps, sub.key))))
    passed = {
        "A1": all(f > 0 for _, f in coal.values()),
        "A2": mean_ok and law.var > 0,
        "A3": max_psi <= model.dep_range + 1e-12,
        "A4": math.isfinite(model.dep_range) and model.sort_radius >= 2 * model.dep_range,
    }
    rep = AssumptionReport(coal, law.mean, law.var, law.exact, max_psi, model.dep_range, passed)
    if raise_on_fail:
        for item, ok in passed.items():
            if not ok:
                detail = {
                    "A1": f"coalescence frequencies {coal}",
                    "A2": f"displacement mean {law.mean:.6g}",
                    "A3": f"max |psi| = {max_psi:.6g} exceeds L = {model.dep_range}",
                    "A4": "dependence range is not finite",
                }[item]
                raise AssumptionViolated(item, detail)
    return rep
