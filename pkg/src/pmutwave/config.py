"""Flat ``key = value`` configuration files with dotted section prefixes.

Values are Python literals (numbers, lists, tuples, True/False); bare words
are strings and ``true``/``false``/``auto`` are recognised. ``#`` starts a
comment. Unknown keys are rejected.

Lengths in metres, times in seconds, frequencies in hertz.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from pathlib import Path

SCENARIOS = ("tx_single", "txrx_obstacle", "array")


class ConfigError(ValueError):
    pass


# key -> (default, kind); kind is a validator name
_SCHEMA = {
    "scenario": ("tx_single", "scenario"),
    "workers": (1, "posint"),
    "geometry.lx": (None, "pos"),
    "geometry.ly": (None, "pos"),
    "geometry.lz": (None, "pos"),
    "geometry.inner_thickness": (45e-6, "pos"),
    "geometry.obstacle_radius": (None, "pos"),
    "geometry.obstacle_depth": (None, "pos"),
    "geometry.obstacle_thickness": (None, "pos"),
    "geometry.outer_boundary": ("abc", "boundary"),
    "array.rows": (1, "posint"),
    "array.cols": (1, "posint"),
    "array.radius": (65e-6, "pos"),
    "array.pitch": (150e-6, "pos"),
    "array.stagger": (0.0, "nonneg"),
    "array.row_pitch": (None, "pos"),
    "material.c": (1481.0, "pos"),
    "material.rho": (1000.0, "pos"),
    "material.c_outer": (None, "pos"),
    "material.rho_outer": (None, "pos"),
    "drive.amplitude": (1.0, "float"),
    "drive.frequency": (25e6, "pos"),
    "drive.duration": (None, "pos"),
    "drive.envelope": ("g", "envelope"),
    "drive.switch_time": (None, "pos"),
    "drive.clamp_envelope": (False, "bool"),
    "pmut.modes": (3, "posint"),
    "pmut.omega": (None, "poslist"),
    "pmut.eta": (None, "list"),
    "pmut.capacitance": (1e-12, "pos"),
    "pmut.modal_file": (None, "str"),
    "numerics.r_in": (2, "degree"),
    "numerics.r_out": (2, "degree"),
    "numerics.h_in": (7.5e-6, "pos"),
    "numerics.h_out": (15e-6, "pos"),
    "numerics.dt": ("auto", "dt"),
    "numerics.t_end": (None, "pos"),
    "numerics.alpha": (10.0, "alpha"),
    "numerics.safety": (0.5, "pos"),
    "pml.enabled": (True, "bool"),
    "pml.thickness": (None, "pos"),
    "pml.reflection_coeff": (1e-4, "refl"),
    "probes": (None, "points"),
    "output.snapshot": (True, "bool"),
}


def _parse_value(text):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _check(key, value, kind):
    def bad(why):
        raise ConfigError(f"{key}: {why} (got {value!r})")

    num = lambda v: isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
    if value is None:
        return None
    if kind == "scenario":
        if value not in SCENARIOS:
            bad(f"must be one of {', '.join(SCENARIOS)}")
    elif kind == "posint":
        if not (isinstance(value, int) and not isinstance(value, bool) and value >= 1):
            bad("must be a positive integer")
    elif kind == "pos":
        if not num(value) or value <= 0:
            bad("must be a positive number")
        value = float(value)
    elif kind == "nonneg":
        if not num(value) or value < 0:
            bad("must be a non-negative number")
        value = float(value)
    elif kind == "float":
        if not num(value):
            bad("must be a number")
        value = float(value)
    elif kind == "bool":
        if not isinstance(value, bool):
            bad("must be true or false")
    elif kind == "str":
        value = str(value)
    elif kind == "boundary":
        if value not in ("abc", "neumann"):
            bad("must be abc or neumann")
    elif kind == "envelope":
        if value not in ("g", "h"):
            bad("must be g or h")
    elif kind == "degree":
        if not (isinstance(value, int) and 1 <= value <= 8):
            bad("must be an integer degree in 1..8")
    elif kind == "dt":
        if value != "auto" and (not num(value) or value <= 0):
            bad("must be a positive number or auto")
        value = value if value == "auto" else float(value)
    elif kind == "alpha":
        if not num(value) or value < 1:
            bad("penalty alpha must be >= 1")
        value = float(value)
    elif kind == "refl":
        if not num(value) or not 0 < value < 1:
            bad("reflection coefficient must lie in (0, 1)")
        value = float(value)
    elif kind in ("list", "poslist"):
        if num(value):
            value = [value]
        if not isinstance(value, (list, tuple)) or not all(num(v) for v in value):
            bad("must be a list of numbers")
        if kind == "poslist" and any(v <= 0 for v in value):
            bad("entries must be positive")
        value = [float(v) for v in value]
    elif kind == "points":
        if isinstance(value, tuple) and len(value) == 3 and all(num(v) for v in value):
            value = [value]
        if not isinstance(value, (list, tuple)) or not all(
            isinstance(p, (list, tuple)) and len(p) == 3 and all(num(v) for v in p) for p in value
        ):
            bad("must be a list of (x, y, z) points")
        value = [tuple(float(v) for v in p) for p in value]
    return value


@dataclass
class SimulationConfig:
    values: dict = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    def replace(self, **updates):
        """Copy with ``section__key=value`` style overrides (``__`` for the dot)."""
        vals = dict(self.values)
        for k, v in updates.items():
            vals[k.replace("__", ".")] = v
        return from_dict(vals)

    def dumps(self):
        return "".join(f"{k} = {v!r}\n" for k, v in sorted(self.values.items()) if v is not None)


def from_dict(d):
    unknown = sorted(set(d) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}")
    vals = {}
    for key, (default, kind) in _SCHEMA.items():
        vals[key] = _check(key, d.get(key, default), kind)
    return _finish(SimulationConfig(vals))


def _finish(cfg):
    v = cfg.values
    if v["numerics.h_out"] < v["numerics.h_in"]:
        raise ConfigError("numerics.h_out: outer elements must not be finer than inner ones")
    sc = v["scenario"]
    if v["drive.duration"] is None:
        v["drive.duration"] = 0.1e-6 if sc == "txrx_obstacle" else 0.5e-6
    if sc == "txrx_obstacle" and v["drive.switch_time"] is None:
        v["drive.switch_time"] = v["drive.duration"]
    if v["drive.switch_time"] is not None and v["drive.switch_time"] < v["drive.duration"]:
        raise ConfigError("drive.switch_time: must not precede the end of the burst")
    if v["pml.thickness"] is None:
        v["pml.thickness"] = v["material.c_outer"] or v["material.c"]
        v["pml.thickness"] /= v["drive.frequency"]
    return cfg


def loads(text, source="<string>"):
    d = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in d:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        d[key] = _parse_value(val)
    cfg = from_dict(d)
    cfg.source = source
    return cfg


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return loads(text, str(path))
