"""Experiment configuration: TOML with a schema version and strict keys.

Every key a run may use has a default below; a file overrides a subset. Keys
the schema does not know and values of the wrong type are errors that name
the line they came from.
"""
from __future__ import annotations

import copy
import json
import re
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 20240601,
    "model": {
        "kind": "lattice_shuffle",
        "jump_values": [-1, 1],
        "jump_probs": [0.5, 0.5],
        "half_width": 3 ** 0.5,
        "sigma2_samples": 200000,
        "sigma2_seed": 20240601,
    },
    "cbm": {
        "starts": [0.0, 1.0],
        "T": 1.0,
        "dt": 1e-3,
        "bridge": True,
    },
    "crw": {
        "starts": [0.0, 1.0, 2.0],
        "n": 100,
    },
    "rate": {
        "n_exponents": [4, 5, 6, 7, 8, 9, 10, 11, 12],
        "ensemble": 10000,
        "diagnostics": ["pair_coalescence", "one_point_w1"],
        "grid_D": 2.0,
        "grid_spacing": 0.5,
        "max_gap": 3.0,
        "n_boot": 1000,
    },
    "renorm": {
        "generations": 6,
        "ensemble": 1000,
        "grid_half_width": 4.0,
        "grid_spacing": 0.5,
        "diagnostics": ["pair_coalescence", "one_point_w1"],
        "n_boot": 1000,
        "direct": True,
        "window_budget": 20000.0,
    },
    "appendix": {
        "reflection": {"cases": [[1.0, 1.0], [1.0, 4.0], [2.0, 1.0]], "nu": 1.0, "reps": 10000, "dt": 1e-4},
        "gap_tail": {"x0": 4.0, "T_grid": [16, 32, 64, 128, 256, 512], "p": 0.45, "p0": 0.49,
                     "reps": 20000, "n_calib": 3},
        "displacement": {"n": 256, "M_multiples": [1.0, 1.5, 2.0, 3.0, 4.0, 6.0], "reps": 20000, "p": 0.45},
        "three_particle": {"a_grid": [0.005, 0.01, 0.02, 0.05, 0.1, 0.2], "p": 0.4, "reps": 20000,
                           "dt": 1e-4, "T": 8.0},
        "drift": {"p0": 0.4, "A": 10.0, "reps": 200000},
    },
    "validate": {
        "reps": 2000,
        "gaps": [1, 5, 20],
    },
}


class ConfigError(ValueError):
    pass


def _line_of(text, path):
    """Best-effort line number of the key at dotted ``path`` in TOML ``text``."""
    if text is None:
        return None
    *tables, key = path
    lines = text.splitlines()
    section = []
    pat = re.compile(r"^\s*(\"?)" + re.escape(key) + r"\1\s*=")
    dotted = re.compile(r"^\s*" + r"\s*\.\s*".join(re.escape(p) for p in path) + r"\s*=")
    for i, line in enumerate(lines, 1):
        s = line.strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]$", s)
        if m:
            section = [p.strip().strip('"') for p in m.group(1).split(".")]
            if section == list(path):
                return i
            continue
        if section == tables and pat.match(line):
            return i
        if not section and dotted.match(line):
            return i
    return None


def _where(text, path, source):
    ln = _line_of(text, path)
    loc = f"{source}:{ln}" if ln else source
    return f"{loc}: {'.'.join(path)}"


def _merge(default, given, path, text, source):
    out = copy.deepcopy(default)
    for k, v in given.items():
        p = path + (k,)
        if k not in default:
            raise ConfigError(f"{_where(text, p, source)}: unknown key")
        d = default[k]
        if isinstance(d, dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{_where(text, p, source)}: expected a table")
            out[k] = _merge(d, v, p, text, source)
            continue
        out[k] = _coerce(d, v, p, text, source)
    return out


def _coerce(default, v, path, text, source):
    bad = ConfigError(f"{_where(text, path, source)}: expected {type(default).__name__}, "
                      f"got {type(v).__name__}")
    if isinstance(default, bool):
        if not isinstance(v, bool):
            raise bad
        return v
    if isinstance(default, int):
        if isinstance(v, bool) or not isinstance(v, int):
            raise bad
        return v
    if isinstance(default, float):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise bad
        return float(v)
    if isinstance(default, str):
        if not isinstance(v, str):
            raise bad
        return v
    if isinstance(default, list):
        if not isinstance(v, list):
            raise bad
        return v
    raise bad


class Config:
    """Validated configuration; ``cfg["rate"]["ensemble"]`` style access."""

    def __init__(self, data: dict):
        self.data = data

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True)

    def with_overrides(self, **top) -> "Config":
        d = self.to_dict()
        for k, v in top.items():
            if v is not None:
                d[k] = v
        return Config(d)


def from_dict(given: dict, text=None, source="<config>") -> Config:
    ver = given.get("schema_version", SCHEMA_VERSION)
    if ver != SCHEMA_VERSION:
        raise ConfigError(f"{_where(text, ('schema_version',), source)}: "
                          f"unsupported schema version {ver!r} (expected {SCHEMA_VERSION})")
    data = _merge(DEFAULTS, given, (), text, source)
    seed = data["seed"]
    if not 0 <= seed < 2 ** 64:
        raise ConfigError(f"{_where(text, ('seed',), source)}: seed must fit in 64 unsigned bits")
    return Config(data)


def loads(text: str, source="<string>") -> Config:
    try:
        given = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return from_dict(given, text, source)


def load(path) -> Config:
    with open(path, "rb") as fh:
        raw = fh.read()
    return loads(raw.decode("utf-8"), str(path))


def default() -> Config:
    return Config(copy.deepcopy(DEFAULTS))
