"""Experiment runners behind the command line.

Each runner takes a validated :class:`~coalflow.config.Config`, writes its
tables into ``out_dir`` and returns ``(ok, files)``. Outputs depend only on
the configuration: thread count and backend change speed, never bytes.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os

import numpy as np

from . import appendix
from .cbm import simulate_cbm
from .config import Config
from .crw import crw_to_csv, effective_grid, rescaled_ensemble, simulate_crw
from .models import exact_psi_law, model_from_dict, validate_assumptions
from .renorm import default_grid, direct_stats, renorm_flow
from .rng import Stream
from .stats import diagnostic_summary, fit_power_law, monotone_within_noise

log = logging.getLogger(__name__)

SUMMARY_SCHEMA = 1
NOISE_FACTOR = 3.0


class Outputs:
    """Writes tables as CSV or JSON and remembers every file it wrote."""

    def __init__(self, out_dir, fmt="csv"):
        if fmt not in ("csv", "json"):
            raise ValueError(f"unknown format {fmt!r}")
        self.dir = out_dir
        self.fmt = fmt
        self.files = []
        os.makedirs(out_dir, exist_ok=True)

    def _path(self, name):
        self.files.append(name)
        return os.path.join(self.dir, name)

    def table(self, stem, header, rows):
        if self.fmt == "csv":
            with open(self._path(stem + ".csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)
        else:
            self.json(stem, [dict(zip(header, r)) for r in rows])

    def text(self, name, body):
        with open(self._path(name), "w") as fh:
            fh.write(body)

    def json(self, stem, obj):
        with open(self._path(stem + ".json"), "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _num(x):
    return repr(float(x))


def _summary(command, cfg, model, body):
    return {"schema_version": SUMMARY_SCHEMA, "command": command, "seed": cfg.seed,
            "model": model.to_dict() if model is not None else None, **body}


def _strip_boot(stats):
    return {k: {kk: vv for kk, vv in v.items() if kk != "boot"} for k, v in stats.items()}


# -- path simulations ---------------------------------------------------------

def run_simulate_cbm(cfg: Config, out: Outputs, threads=1):
    c = cfg["cbm"]
    bundle, table = simulate_cbm(c["starts"], c["T"], c["dt"], bridge=c["bridge"], rng=Stream(cfg.seed, "cbm"))
    if out.fmt == "csv":
        out.text("paths.csv", bundle.to_csv(table))
    else:
        out.json("paths", {"times": bundle.times, "positions": bundle.paths, "leaders": table.leaders + 1})
    out.json("summary", _summary("simulate-cbm", cfg, None, bundle.summary()))
    return True, out.files


def run_simulate_crw(cfg: Config, out: Outputs, threads=1):
    model = model_from_dict(cfg["model"])
    c = cfg["crw"]
    bundle = simulate_crw(model, c["starts"], c["n"], Stream(cfg.seed, "crw"))
    if out.fmt == "csv":
        out.text("paths.csv", crw_to_csv(bundle))
    else:
        out.json("paths", {"steps": bundle.times.astype(int), "positions": bundle.paths})
    out.json("summary", _summary("simulate-crw", cfg, model, bundle.summary()))
    return True, out.files


# -- rate of convergence ------------------------------------------------------

def rate_grid(n, D=2.0, spacing=0.5):
    """Evenly spaced points on ``[-D ln n, D ln n]``, symmetric about 0."""
    half = D * math.log(n)
    k = int(math.floor(half / spacing + 1e-9))
    return np.arange(-k, k + 1) * spacing


def run_rate_experiment(cfg: Config, out: Outputs, threads=1):
    """Diagnostics of the rescaled composition against Brownian references, and power-law fits.

    The Brownian references are the closed forms: pair coalescence
    ``2 (1 - Phi(d / sqrt 2))`` and the standard normal one-point law.
    """
    model = model_from_dict(cfg["model"])
    r = cfg["rate"]
    if r["ensemble"] < 100:
        log.warning("ensemble of %d replicas: bootstrap intervals will be too wide to be informative",
                    r["ensemble"])
    root = Stream(cfg.seed, "rate")
    ns = [2 ** int(e) for e in r["n_exponents"]]
    names = list(r["diagnostics"])
    rows, curve, per_n = [], [], []
    for n in ns:
        grid = rate_grid(n, r["grid_D"], r["grid_spacing"])
        v = rescaled_ensemble(model, n, grid, r["ensemble"], root.derive(f"n{n}"), threads)
        eff = effective_grid(model, n, grid)
        st, diags = diagnostic_summary(v, eff, names, r["n_boot"], root.derive(f"boot-n{n}"), grid, r["max_gap"])
        per_n.append(st)
        for name in names:
            s = st[name]
            rows.append([n, name, _num(s["value"]), _num(s["sd"]), _num(s["ci_lo"]), _num(s["ci_hi"]),
                         s["n_samples"]])
        if "pair_coalescence" in diags:
            d = diags["pair_coalescence"]
            for g, o, e in zip(d.gaps, d.observed(), d.expected):
                curve.append([n, _num(g), _num(o), _num(e)])
        log.info("n=%d %s", n, {k: round(st[k]["value"], 5) for k in names})
    out.table("rate_points", ["n", "diagnostic", "value", "sd", "ci_lo", "ci_hi", "n_samples"], rows)
    if curve:
        out.table("pair_curve", ["n", "gap", "observed", "expected"], curve)
    fits, ok = {}, True
    for name in names:
        vals = [p[name]["value"] for p in per_n]
        sds = [p[name]["sd"] for p in per_n]
        entry = {"values": vals, "sds": sds}
        if len(ns) >= 4:
            boot = np.stack([p[name]["boot"] for p in per_n], axis=1)
            fit = fit_power_law(list(zip(ns, vals)), boot=boot)
            mono = monotone_within_noise(vals, sds, 2.0)
            entry.update(fit.to_dict())
            entry["monotone_within_2sd"] = mono
            entry["pass"] = bool(fit.exponent > 0 and fit.ci[0] > 0 and mono)
        else:
            entry["pass"] = None
            log.warning("fewer than 4 values of n: no power-law fit for %s", name)
        ok = ok and entry["pass"] is not False
        fits[name] = entry
    out.json("rate_fit", _summary("rate-fit", cfg, model, {"n": ns, "fits": fits, "passed": ok}))
    return ok, out.files


# -- renormalisation ----------------------------------------------------------

def run_renorm_experiment(cfg: Config, out: Outputs, threads=1):
    """Diagnostics of ``R^k`` for ``k <= generations``, optionally against direct iteration."""
    model = model_from_dict(cfg["model"])
    r = cfg["renorm"]
    G = int(r["generations"])
    names = list(r["diagnostics"])
    grid = default_grid(r["grid_half_width"], r["grid_spacing"])
    root = Stream(cfg.seed, "renorm")
    flow = renorm_flow(model, G, r["ensemble"], grid, root.derive("flow"), names, r["n_boot"], threads,
                       r["window_budget"])
    direct = direct_stats(model, G, r["ensemble"], grid, root.derive("direct"), names, r["n_boot"],
                          threads) if r["direct"] else None
    rows = []
    for k in range(G + 1):
        for src, st in (("renorm", flow.stats[k]), ("direct", direct[k] if direct else None)):
            if st is None:
                continue
            for name in names:
                s = st[name]
                rows.append([k, 2 ** k, src, name, _num(s["value"]), _num(s["sd"]), _num(s["ci_lo"]),
                             _num(s["ci_hi"]), s["n_samples"]])
    out.table("renorm_generations",
              ["generation", "n", "source", "diagnostic", "value", "sd", "ci_lo", "ci_hi", "n_samples"], rows)
    ok = True
    body = {"generations": G, "sizes": flow.sizes, "widths": flow.widths, "margins": flow.margins,
            "grid": grid, "stats": [_strip_boot(s) for s in flow.stats], "fits": {}, "consistency": {}}
    for name in names:
        vals = flow.values(name)
        if G >= 3:
            boot = np.stack([s[name]["boot"] for s in flow.stats], axis=1)
            fit = fit_power_law(list(zip([2 ** k for k in range(G + 1)], vals)), boot=boot)
            contraction = 2.0 ** (-fit.exponent)
            body["fits"][name] = {**fit.to_dict(), "contraction": contraction}
            ok = ok and contraction < 1
        if direct:
            z = [abs(flow.stats[k][name]["value"] - direct[k][name]["value"])
                 / math.hypot(flow.stats[k][name]["sd"], direct[k][name]["sd"]) for k in range(G + 1)]
            cons = all(v <= NOISE_FACTOR for v in z)
            body["consistency"][name] = {"z": z, "within_noise": cons}
            ok = ok and cons
    body["passed"] = ok
    out.json("renorm_summary", _summary("renorm", cfg, model, body))
    return ok, out.files


# -- oracle suite -------------------------------------------------------------

def run_appendix_suite(cfg: Config, out: Outputs, threads=1):
    """All five bound checks with the configured parameters."""
    model = model_from_dict(cfg["model"])
    a = cfg["appendix"]
    root = Stream(cfg.seed, "appendix")
    reports = []
    ref = a["reflection"]
    for i, (aa, T) in enumerate(ref["cases"]):
        reports.extend(appendix.reflection_check(aa, T, ref["nu"], ref["reps"], root.derive(f"reflection-{i}"),
                                                 ref["dt"]))
    g = a["gap_tail"]
    reports.append(appendix.gap_tail_check(model, g["x0"], g["T_grid"], g["p"], g["p0"], g["reps"],
                                           root.derive("gap-tail"), g["n_calib"], threads))
    d = a["displacement"]
    reports.append(appendix.displacement_check(model, d["n"], [m * math.sqrt(d["n"]) for m in d["M_multiples"]],
                                               d["reps"], root.derive("displacement"), d["p"]))
    t = a["three_particle"]
    reports.append(appendix.three_particle_check(t["a_grid"], t["p"], t["reps"], t["dt"], root.derive("three"),
                                                 T=t["T"], threads=threads))
    dr = a["drift"]
    reports.append(appendix.drift_condition_check(model, dr["p0"], dr["A"], dr["reps"], root.derive("drift")))
    out.table("reports", ["name", "kind", "theoretical_bound", "empirical_value", "stderr", "verdict"],
              [[r.name, r.kind, _num(r.theoretical_bound), _num(r.empirical_value), _num(r.stderr), r.verdict]
               for r in reports])
    out.text("reports.json", appendix.reports_to_json(reports) + "\n")
    ok = all(r.passed for r in reports) and all(r.details.get("exact_match", True) for r in reports)
    return ok, out.files


# -- model validation ---------------------------------------------------------

def run_validate_model(cfg: Config, out: Outputs, threads=1):
    model = model_from_dict(cfg["model"])
    v = cfg["validate"]
    rep = validate_assumptions(model, v["reps"], Stream(cfg.seed, "validate"), tuple(v["gaps"]),
                               raise_on_fail=False)
    law = exact_psi_law(model, rng=Stream(cfg.seed, "psi-law"))
    out.text("psi_law.csv", law.to_csv())
    out.json("assumptions", _summary("validate-model", cfg, model, {
        "coalescence": {str(k): {"steps": s, "frequency": f} for k, (s, f) in rep.coalescence.items()},
        "psi_mean": rep.psi_mean, "psi_var": rep.psi_var, "psi_exact": rep.psi_exact,
        "max_abs_psi": rep.max_abs_psi, "dep_range": rep.dep_range, "passed": rep.passed, "ok": rep.ok}))
    return rep.ok, out.files


RUNNERS = {
    "simulate-cbm": run_simulate_cbm,
    "simulate-crw": run_simulate_crw,
    "rate-fit": run_rate_experiment,
    "renorm": run_renorm_experiment,
    "appendix-check": run_appendix_suite,
    "validate-model": run_validate_model,
}
