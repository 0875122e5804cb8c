"""Run configuration: flat ``key = value`` files with command-prefixed keys.

Example::

    command = w2
    seed = 7
    w2.mu = a.txt
    w2.nu = b.txt

Keys without a prefix are global (``command``, ``seed``, ``tol``, ``out``).
Command flags given on the command line override file values.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["ConfigError", "RunConfig", "SCHEMA", "COMMANDS", "parse_config_text", "build_config"]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (exit code 2)."""


def _floats(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    parts = [p for p in str(text).replace(" ", "").split(",") if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


FLOAT, INT, STR, FLOATS, BOOL = float, int, str, _floats, _bool
REQUIRED = object()

_TERMINAL_KEYS = {
    "terminal": (STR, "second_moment"),
    "scale": (FLOAT, 1.0),
    "alpha": (FLOAT, 1.0),
    "value": (FLOAT, 0.0),
    "anchor": (STR, None),
    "lipschitz": (FLOAT, None),
    "lagrangian": (STR, "quadratic"),
    "a": (FLOAT, 1.0),
    "p": (FLOAT, 2.0),
    "horizon": (FLOAT, 1.0),
    "mu": (STR, REQUIRED),
    "starts": (INT, 5),
}

SCHEMA: dict = {
    "w2": {
        "mu": (STR, REQUIRED),
        "nu": (STR, REQUIRED),
        "method": (STR, "exact"),
        "reg": (FLOAT, None),
        "expected": (FLOAT, None),
        "plan_out": (STR, None),
    },
    "hopflax": dict(_TERMINAL_KEYS, t_grid=(FLOATS, (0.0, 0.25, 0.5, 0.75, 1.0)), optimizer_out=(STR, None)),
    "dpp-check": dict(_TERMINAL_KEYS, t=(FLOAT, 0.0), s=(FLOAT, None)),
    "convexity-check": {
        "mode": (STR, REQUIRED),
        "functional": (STR, "second_moment"),
        "scale": (FLOAT, 1.0),
        "alpha": (FLOAT, 1.0),
        "value": (FLOAT, 0.0),
        "anchor": (STR, None),
        "lam": (FLOAT, None),
        "mu0": (STR, None),
        "mu1": (STR, None),
        "mu": (STR, None),
        "h": (FLOAT, 0.5),
        "segments": (STR, None),
        "rho": (STR, None),
        "nu": (STR, None),
        "slack": (FLOAT, 0.05),
    },
    "vv-rate": {
        "hamiltonian": (STR, "abs"),
        "terminal": (STR, "abs"),
        "grid": (INT, 2000),
        "eps": (FLOATS, REQUIRED),
        "t_probe": (FLOAT, None),
        "one_sided": (BOOL, False),
        "domain": (FLOATS, (-2.0, 2.0)),
        "horizon": (FLOAT, 1.0),
        "slope_min": (FLOAT, None),
        "slope_max": (FLOAT, None),
        "refinement": (BOOL, False),
    },
    "fenchel-check": {
        "g": (STR, REQUIRED),
        "xi": (STR, REQUIRED),
        "lagrangian": (STR, "quadratic"),
        "a": (FLOAT, 1.0),
        "p": (FLOAT, 2.0),
        "expect_optimal": (BOOL, False),
    },
    "functional": {
        "kind": (STR, REQUIRED),
        "rho": (STR, None),
        "mu": (STR, None),
        "g": (STR, None),
        "lagrangian": (STR, "quadratic"),
        "a": (FLOAT, 1.0),
        "p": (FLOAT, 2.0),
        "expected": (FLOAT, None),
    },
}

COMMANDS = tuple(SCHEMA)
GLOBAL_KEYS = {"command": STR, "seed": INT, "tol": FLOAT, "out": STR}
CONVEXITY_MODES = ("geodesic", "mixture", "flat", "divbound", "weakaction")


@dataclass(frozen=True)
class RunConfig:
    command: str
    params: dict
    seed: int = 0
    tol: float | None = None
    out: str | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    def path(self, key: str) -> Path | None:
        v = self.params.get(key)
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    def digest(self) -> str:
        """SHA-256 of the effective configuration (paths as given, sorted keys)."""
        items = [("command", self.command), ("seed", self.seed), ("tol", self.tol)]
        items += sorted((f"{self.command}.{k}", v) for k, v in self.params.items())
        text = "\n".join(f"{k}={_canon(v)}" for k, v in items)
        return hashlib.sha256(text.encode()).hexdigest()


def _canon(v) -> str:
    if isinstance(v, tuple):
        return ",".join(repr(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Raw ``key -> value`` strings; duplicate keys and malformed lines are errors."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _convert(key: str, conv, value):
    try:
        return conv(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {key}: {value!r} ({exc})") from None


def build_config(file_values: dict, flag_values: dict, command: str | None, base_dir: Path | None = None) -> RunConfig:
    """Merge file and command-line values, validate against the schema."""
    file_values = dict(file_values)
    cmd = command or file_values.get("command")
    if cmd is None:
        raise ConfigError("no command given")
    if cmd not in SCHEMA:
        raise ConfigError(f"unknown command {cmd!r}")
    if command and "command" in file_values and file_values["command"] != command:
        raise ConfigError(f"config file is for command {file_values['command']!r}, not {command!r}")
    schema = SCHEMA[cmd]
    glob: dict = {}
    params: dict = {}
    for key, value in file_values.items():
        if key in GLOBAL_KEYS:
            if key != "command":
                glob[key] = _convert(key, GLOBAL_KEYS[key], value)
            continue
        section, _, name = key.partition(".")
        if not name or section != cmd or name.replace("-", "_") not in schema:
            raise ConfigError(f"unknown config key {key!r}")
        name = name.replace("-", "_")
        params[name] = _convert(key, schema[name][0], value)
    for key, value in flag_values.items():
        if value is None:
            continue
        if key in GLOBAL_KEYS:
            glob[key] = _convert(key, GLOBAL_KEYS[key], value)
        elif key in schema:
            params[key] = _convert(key, schema[key][0], value)
        else:
            raise ConfigError(f"unknown option {key!r} for {cmd}")
    for name, (conv, default) in schema.items():
        if name not in params:
            if default is REQUIRED:
                raise ConfigError(f"{cmd}: missing required value --{name.replace('_', '-')}")
            params[name] = default
    seed = glob.get("seed", 0)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    tol = glob.get("tol")
    if tol is not None and not tol > 0:
        raise ConfigError("tolerances must be positive")
    for name in ("slack", "h"):
        if name in params and params[name] is not None and params[name] < 0:
            raise ConfigError(f"{name} must be nonnegative")
    if cmd == "convexity-check" and params["mode"] not in CONVEXITY_MODES:
        raise ConfigError(f"unknown convexity-check mode {params['mode']!r}")
    return RunConfig(cmd, params, seed, tol, glob.get("out"), base_dir or Path.cwd())
