"""Command line entry point.

Exit codes: 0 when every check passes, 1 when a check fails (or a replay
does not reproduce), 2 for configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
import time

from . import config as cfgmod
from . import kernels
from .appendix import BadParams
from .experiments import RUNNERS, Outputs
from .manifest import MANIFEST_NAME, RunManifest, compare_outputs
from .models import ModelError
from .renorm import RenormError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("coalflow")

CSV_COLUMNS = {
    "simulate-cbm": "paths.csv: time, particle, position, leader (1-based); summary.json",
    "simulate-crw": "paths.csv: step, particle, position; summary.json",
    "rate-fit": "rate_points.csv: n, diagnostic, value, sd, ci_lo, ci_hi, n_samples; "
                "pair_curve.csv: n, gap, observed, expected; rate_fit.json",
    "renorm": "renorm_generations.csv: generation, n, source, diagnostic, value, sd, ci_lo, ci_hi, "
              "n_samples; renorm_summary.json",
    "appendix-check": "reports.csv: name, kind, theoretical_bound, empirical_value, stderr, verdict; "
                      "reports.json",
    "validate-model": "psi_law.csv: value, probability; assumptions.json",
}


def _u64(s):
    v = int(s, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _positive(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coalflow", description="Coalescing flows: simulation, rates and checks")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)
    for name, cols in CSV_COLUMNS.items():
        sp = sub.add_parser(name, help=cols.split(";")[0], description=f"Outputs: {cols}")
        sp.add_argument("--config", type=str, default=None, help="TOML configuration file")
        sp.add_argument("--seed", type=_u64, default=None, help="master seed (overrides the config)")
        sp.add_argument("--out", type=str, default=None, help="output directory")
        sp.add_argument("--threads", type=_positive, default=1, help="worker threads")
        sp.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")
    rp = sub.add_parser("replay", help="rerun a manifest and compare output digests")
    rp.add_argument("manifest", help=f"path to {MANIFEST_NAME} or its directory")
    rp.add_argument("--out", type=str, default=None, help="directory for the rerun (default: temporary)")
    rp.add_argument("--threads", type=_positive, default=1, help="worker threads")
    return p


def execute(command, cfg, out_dir, threads=1, fmt="csv"):
    """Run one command and write its manifest; returns ``(ok, manifest)``."""
    out = Outputs(out_dir, fmt)
    t0 = time.perf_counter()
    ok, files = RUNNERS[command](cfg, out, threads)
    man = RunManifest(command, cfg.to_dict(), cfg.seed, fmt, threads, kernels.BACKEND)
    man.record(out_dir, files)
    man.write(out_dir)
    log.info("%s finished in %.1f s", command, time.perf_counter() - t0)
    return ok, man


def _replay(args):
    path = args.manifest
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    try:
        man = RunManifest.read(path)
        cfg = cfgmod.from_dict(man.params, source=path)
    except (OSError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if man.command not in RUNNERS:
        print(f"error: {path}: unknown command {man.command!r}", file=sys.stderr)
        return EXIT_CONFIG
    ctx = tempfile.TemporaryDirectory() if args.out is None else None
    out_dir = args.out if ctx is None else ctx.name
    try:
        execute(man.command, cfg, out_dir, args.threads, man.format)
        bad = compare_outputs(man, out_dir)
    finally:
        if ctx is not None:
            ctx.cleanup()
    for name, (want, got) in bad.items():
        print(f"MISMATCH {name}: expected {want}, got {got}")
    print(f"replay {man.command}: {len(man.outputs) - len(bad)}/{len(man.outputs)} outputs reproduced")
    return EXIT_OK if not bad else EXIT_FAIL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "replay":
        return _replay(args)
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.default()
        cfg = cfg.with_overrides(seed=args.seed)
        out_dir = args.out or os.path.join("runs", args.command)
        ok, man = execute(args.command, cfg, out_dir, args.threads, args.format)
    except (cfgmod.ConfigError, ModelError, BadParams, RenormError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{args.command}: {'pass' if ok else 'FAIL'}; wrote {len(man.outputs)} files to {out_dir}")
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
