"""Plain-text run configuration.

Format: ``key = value`` lines, ``#`` comments, optional ``[section]`` headers.
Sections are only for readability; keys live in one flat namespace. Values are
numbers (dot decimal separator), booleans ``true``/``false``, quoted or bare
strings, or bracketed lists of those.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

SECTIONS = ("run", "drift", "datum", "test", "quadrature", "study", "flow", "tolerances")

# key -> (type, default). Types: int, float, str, bool, floats, ints.
SCHEMA = {
    # run
    "d": ("int", 2),
    "T": ("float", 1.0),
    "n_steps": ("int", 1024),
    "seed": ("int", 0),
    "workers": ("int", 1),
    "replicates": ("int", 256),
    "paths": ("int", 8),
    # drift
    "drift": ("str", "zero"),
    "alpha": ("float", 0.5),
    "beta": ("float", 0.5),
    "r0": ("float", 0.5),
    "omega": ("float", 1.0),
    "c": ("floats", [1.0, 0.0]),
    "shear_amplitude": ("float", 0.5),
    "shear_wavenumber": ("float", 1.0),
    "shear_mean": ("float", 0.0),
    "cutoff_radius": ("float", 10.0),
    "p": ("float", 0.0),
    "q": ("float", 0.0),
    # datum
    "datum": ("str", "radial_bump"),
    "datum_center": ("floats", [0.25, 0.0]),
    "datum_radius": ("float", 0.75),
    "datum_amplitude": ("float", 1.0),
    "datum_level": ("float", 1.0),
    "datum_normal": ("floats", [1.0, 0.0]),
    "datum_offset": ("float", 0.0),
    "sequence": ("str", "oscillatory"),
    "strong_sequence": ("str", "offset"),
    "ns": ("ints", [4, 8, 16, 32, 64]),
    # test functions and quadrature
    "phi_count": ("int", 8),
    "phi_ring": ("float", 0.5),
    "phi_radius": ("float", 0.5),
    "phi_center": ("floats", [0.0, 0.0]),
    "nodes": ("int", 65),
    "times": ("floats", [0.25, 0.5, 0.75, 1.0]),
    # flow
    "t": ("float", 1.0),
    "x": ("floats", [0.5, 0.0]),
    "direction": ("str", "forward"),
    "h": ("float", 1e-4),
    # studies
    "deltas": ("floats", [0.4, 0.2, 0.1, 0.05]),
    "kernel_points": ("int", 33),
    "level_min": ("int", 6),
    "level_max": ("int", 10),
    "reference_levels": ("int", 3),
    "levels": ("int", 4),
    "pmom": ("float", 2.0),
    "holder_alpha": ("float", 0.9),
    "points": ("int", 400),
    "start_radius": ("float", 0.05),
    # tolerances
    "slope_min": ("float", 0.8),
    "slope_max": ("float", 1.2),
    "noise_tol": ("float", 2e-3),
    "final_tol": ("float", 1e-2),
    "ratio_max": ("float", 2.0),
    "decay_factor": ("float", 0.05),
    "residual_ratio": ("float", 0.1),
}


class ConfigError(ValueError):
    """Malformed configuration; ``line`` is 1-based or None for overrides."""

    def __init__(self, message, line=None, key=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.key = key


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: _copy(v) for k, (_, v) in SCHEMA.items()})
    explicit: set = field(default_factory=set)

    def __getitem__(self, key):
        return self.values[key]

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    @property
    def master_seed(self) -> int:
        return self.values["seed"]

    def override(self, key, value) -> "RunConfig":
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", key=key)
        values = dict(self.values)
        values[key] = coerce(key, value)
        return RunConfig(values, self.explicit | {key})

    def echo(self) -> str:
        """The resolved config as parseable text (every key, sorted)."""
        lines = ["# resolved configuration"]
        for k in sorted(self.values):
            lines.append(f"{k} = {_render(self.values[k])}")
        return "\n".join(lines) + "\n"


def _copy(v):
    return list(v) if isinstance(v, list) else v


def _render(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_render(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")
_INT = re.compile(r"^[+-]?\d+$")


def _scalar(text):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    if text in ("true", "false"):
        return text == "true"
    if _INT.match(text):
        return int(text)
    if _NUMBER.match(text) or text in ("inf", "-inf", "nan"):
        return float(text)
    return text


def _literal(text):
    text = text.strip()
    if text.startswith("["):
        if not text.endswith("]"):
            raise ValueError("unterminated list")
        body = text[1:-1].strip()
        return [] if not body else [_scalar(p) for p in body.split(",")]
    return _scalar(text)


def coerce(key, value):
    """Convert a parsed literal (or a CLI string) to the schema type of ``key``."""
    kind, _ = SCHEMA[key]
    if isinstance(value, str) and kind != "str":
        value = _literal(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"key {key!r} expects a string", key=key)
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"key {key!r} expects true or false", key=key)
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key {key!r} expects an integer", key=key)
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key {key!r} expects a number", key=key)
        return float(value)
    items = value if isinstance(value, list) else [value]
    if kind == "floats":
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in items):
            raise ConfigError(f"key {key!r} expects a list of numbers", key=key)
        return [float(v) for v in items]
    if any(isinstance(v, bool) or not isinstance(v, int) for v in items):
        raise ConfigError(f"key {key!r} expects a list of integers", key=key)
    return [int(v) for v in items]


def _strip_comment(line):
    out, quote = [], None
    for ch in line:
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            break
        out.append(ch)
    return "".join(out).strip()


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        if line.startswith("["):
            name = line.strip("[] ")
            if not line.endswith("]") or name not in SECTIONS:
                raise ConfigError(f"unknown section {line!r}", line=lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", line=lineno, key=key)
        if key in seen:
            raise ConfigError(f"key {key!r} already set on line {seen[key]}", line=lineno, key=key)
        try:
            parsed = _literal(value)
            cfg.values[key] = coerce(key, parsed)
        except ConfigError as exc:
            raise ConfigError(str(exc), line=lineno, key=key) from None
        except ValueError as exc:
            raise ConfigError(f"key {key!r}: {exc}", line=lineno, key=key) from None
        seen[key] = lineno
        cfg.explicit.add(key)
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
