"""Run manifests: what was run, with which parameters, and what it wrote."""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from importlib import metadata

from .rng import DERIVATION_RULE

MANIFEST_NAME = "manifest.json"
MANIFEST_SCHEMA = 1


def artifact_version() -> str:
    try:
        return metadata.version("coalflow")
    except metadata.PackageNotFoundError:
        return "unknown"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    params: dict
    seed: int
    format: str = "csv"
    threads: int = 1
    backend: str = ""
    derivation_rule: str = DERIVATION_RULE
    artifact_version: str = field(default_factory=artifact_version)
    timestamp: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
    outputs: dict = field(default_factory=dict)
    schema_version: int = MANIFEST_SCHEMA

    def record(self, out_dir, names):
        self.outputs = {n: file_digest(os.path.join(out_dir, n)) for n in sorted(names)}

    def write(self, out_dir) -> str:
        path = os.path.join(out_dir, MANIFEST_NAME)
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path) as fh:
            d = json.load(fh)
        if d.get("schema_version") != MANIFEST_SCHEMA:
            raise ValueError(f"{path}: unsupported manifest schema {d.get('schema_version')!r}")
        return cls(**d)


def compare_outputs(manifest: RunManifest, out_dir) -> dict:
    """``name -> (expected, actual)`` for every output whose digest differs."""
    bad = {}
    for name, want in manifest.outputs.items():
        p = os.path.join(out_dir, name)
        got = file_digest(p) if os.path.exists(p) else None
        if got != want:
            bad[name] = (want, got)
    return bad
