"""Key-value run configuration.

A config file holds one ``key = value`` per line; ``#`` starts a comment and
lists are comma separated. Command-line ``key=value`` overrides replace file
values. Unknown keys, duplicates within one source, and out-of-range values
are rejected with a message naming the key.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


SUBCOMMANDS = ("gen-env", "walk", "network", "percolation", "mott", "selftest")


@dataclass(frozen=True)
class Key:
    kind: str  # int, float, str, bool, floats, ints
    default: object
    commands: tuple
    check: object = None  # callable value -> bool
    valid: str = ""
    required: bool = False


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _in(*opts):
    return lambda v: v in opts


def _all_pos(v):
    return len(v) > 0 and all(x > 0 for x in v)


_ALL = SUBCOMMANDS[:-1]
_WALKISH = ("walk", "mott")
_MEDIUM = ("gen-env", "walk", "network", "percolation", "mott")

SCHEMA: dict[str, Key] = {
    "seed": Key("int", 0, _ALL, _nonneg, "an integer >= 0"),
    "out": Key("str", "vrh-out", _ALL),
    "d": Key("int", 2, _MEDIUM, lambda v: v >= 2, "an integer >= 2 (the hopping model is only defined for d >= 2)"),
    "alpha": Key("float", 0.0, _MEDIUM, _nonneg, "a number >= 0"),
    "rho": Key("float", 1.0, _MEDIUM, _pos, "a number > 0"),
    "process": Key("str", "ppp", _MEDIUM, _in("ppp", "lattice"), "one of ppp, lattice"),
    "box": Key("float", 48.0, ("gen-env", "walk", "mott"), _pos, "a number > 0"),
    "periodic": Key("bool", True, ("gen-env",)),
    "palm_mode": Key("str", "", ("gen-env", "walk", "mott"), _in("", "exact-ppp", "recenter"), "one of exact-ppp, recenter"),
    # walk
    "beta": Key("float", 1.0, ("walk",), _pos, "a number > 0"),
    "r_max": Key("float", 8.0, ("walk",), _pos, "a number > 0"),
    "method": Key("str", "kmc", _WALKISH, _in("kmc", "corrector"), "one of kmc, corrector"),
    "horizon": Key("float", 100.0, _WALKISH, _pos, "a number > 0"),
    "n_env": Key("int", 8, _WALKISH, lambda v: v >= 1, "an integer >= 1"),
    "n_traj": Key("int", 100, _WALKISH, lambda v: v >= 1, "an integer >= 1"),
    "jump_budget": Key("int", 10**7, _WALKISH, lambda v: v >= 1, "an integer >= 1"),
    "margin": Key("float", 10.0, _WALKISH, _pos, "a number > 0"),
    # network
    "E_c": Key("float", 1.0, ("network", "percolation"), lambda v: 0 < v <= 1, "a number in (0, 1]"),
    "r_c": Key("float", 1.5, ("network",), _pos, "a number > 0"),
    "N": Key("ints", [8, 16], ("network",), _all_pos, "a list of integers > 0"),
    "n_samples": Key("int", 8, ("network", "percolation"), lambda v: v >= 2, "an integer >= 2"),
    "tol": Key("float", 1e-10, ("network", "mott"), lambda v: 0 < v < 1, "a number in (0, 1)"),
    # percolation
    "p": Key("float", 0.8, ("percolation",), lambda v: 0 < v < 1, "a number in (0, 1)"),
    "rho_prime": Key("float", 1.0, ("percolation",), _pos, "a number > 0"),
    "N_grid": Key("ints", [8, 16, 32], ("percolation",), _all_pos, "a list of integers > 0"),
    "b": Key("float", -1.0, ("percolation",), lambda v: v == -1.0 or v > 0, "a number > 0, or -1 to calibrate"),
    "calibration_samples": Key("int", 200, ("percolation",), lambda v: v >= 20, "an integer >= 20"),
    "pc_estimate": Key("float", -1.0, ("percolation",), lambda v: v == -1.0 or 0 < v < 1,
                       "a number in (0, 1), or -1 to estimate it"),
    # mott
    "beta_grid": Key("floats", None, ("mott",), _all_pos, "a list of numbers > 0", required=True),
    "c": Key("float", 1.0, ("mott",), _pos, "a number > 0"),
    "c_prime": Key("float", 1.0, ("mott",), _pos, "a number > 0"),
    "network_N": Key("ints", [8, 16], ("mott",), _all_pos, "a list of integers > 0"),
    "network_samples": Key("int", 8, ("mott",), lambda v: v >= 2, "an integer >= 2"),
    "r_max_min": Key("float", 8.0, ("mott",), _pos, "a number > 0"),
    "r_max_scale": Key("float", 4.0, ("mott",), _pos, "a number > 0"),
}

_MOTT_DEFAULTS = {"method": "corrector", "n_env": 16, "horizon": 1000.0}


@dataclass
class RunConfig:
    subcommand: str
    values: dict = field(default_factory=dict)
    strict: bool = False

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def as_dict(self) -> dict:
        return {"subcommand": self.subcommand, **self.values}


def _convert(key: str, raw: str):
    entry = SCHEMA[key]
    raw = raw.strip()
    try:
        if entry.kind == "int":
            v = int(raw)
        elif entry.kind == "float":
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
        elif entry.kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            v = low in ("true", "1", "yes")
        elif entry.kind == "floats":
            v = [float(x) for x in raw.split(",") if x.strip()]
            if any(not math.isfinite(x) for x in v):
                raise ValueError
        elif entry.kind == "ints":
            v = [int(x) for x in raw.split(",") if x.strip()]
        else:
            v = raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r}; expected {entry.valid or entry.kind}") from None
    if entry.check is not None and not entry.check(v):
        raise ConfigError(f"{key}: value {raw!r} is out of range; expected {entry.valid}")
    return v


def parse_pairs(items, source: str) -> dict:
    """``["k=v", ...]`` (or lines of a file) to a raw dict; rejects duplicates and malformed items."""
    out = {}
    for n, item in enumerate(items, 1):
        line = item.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value, got {item.strip()!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in out:
            raise ConfigError(f"{source}:{n}: duplicate key {k!r}")
        out[k] = v
    return out


def parse_config(subcommand: str, overrides=(), file_text: str | None = None, strict: bool = False) -> RunConfig:
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}; choose from {', '.join(SUBCOMMANDS)}")
    raw = parse_pairs(file_text.splitlines(), "config") if file_text else {}
    raw.update(parse_pairs(overrides, "command line"))
    allowed = {k for k, s in SCHEMA.items() if subcommand in s.commands}
    for k in raw:
        if k not in SCHEMA:
            raise ConfigError(f"unknown key {k!r}")
        if k not in allowed:
            raise ConfigError(f"key {k!r} does not apply to {subcommand}; valid keys: {', '.join(sorted(allowed))}")
    values = {}
    for k in sorted(allowed):
        entry = SCHEMA[k]
        if k in raw:
            values[k] = _convert(k, raw[k])
        elif entry.required:
            raise ConfigError(f"{subcommand} needs {k} ({entry.valid})")
        else:
            d = _MOTT_DEFAULTS.get(k, entry.default) if subcommand == "mott" else entry.default
            values[k] = list(d) if isinstance(d, list) else d
    return RunConfig(subcommand, values, strict)
