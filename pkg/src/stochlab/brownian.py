"""Seeded d-dimensional Brownian paths on uniform grids, with bridge refinement.

A path is stored by its knot values B(t_k), k = 0..n, so that refinement can
keep coarse knots bit-identical. Randomness comes from a counter-based Philox
stream whose key is hashed from (master seed, replicate, level); the stream
position is the (step, component) index. Paths therefore never depend on call
order or on how replicates are scheduled across workers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

_STREAM_SAMPLE = 0
_STREAM_BRIDGE = 1


def _generator(seed, replicate, level, stream):
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(replicate), int(level), stream])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(master, *keys) -> int:
    """64-bit child seed hashed from a master seed and integer keys."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True, eq=False)
class BrownianPath:
    dimension: int
    horizon: float
    n_steps: int
    values: np.ndarray
    seed: int = 0
    level: int = 0
    replicate: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.n_steps + 1, self.dimension):
            raise ValueError(f"knot array must have shape {(self.n_steps + 1, self.dimension)}, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def knot(self, t) -> int:
        """Index k with t_k = t; raises ValueError when t is not a grid time."""
        if t < -1e-12 * self.horizon or t > self.horizon * (1 + 1e-12):
            raise ValueError(f"time {t} outside [0, {self.horizon}]")
        k = int(round(t / self.dt))
        if abs(k * self.dt - t) > 1e-9 * self.dt:
            raise ValueError(f"time {t} is not a grid time of a {self.n_steps}-step path")
        return k

    @classmethod
    def zeros(cls, d, T, n):
        """The frozen path B = 0 (deterministic regime)."""
        return cls(d, float(T), int(n), np.zeros((n + 1, d)), seed=-1)


def sample_path(seed: int, d: int, T: float, n: int, replicate: int = 0) -> BrownianPath:
    if n < 1 or T <= 0:
        raise ValueError("need n >= 1 and T > 0")
    z = _generator(seed, replicate, 0, _STREAM_SAMPLE).standard_normal((n, d))
    values = np.zeros((n + 1, d))
    np.cumsum(z * np.sqrt(T / n), axis=0, out=values[1:])
    return BrownianPath(d, float(T), int(n), values, int(seed), 0, int(replicate))


def refine(path: BrownianPath) -> BrownianPath:
    """Insert Brownian-bridge midpoints; coarse knots are copied unchanged."""
    level = path.level + 1
    v = path.values
    z = _generator(path.seed, path.replicate, level, _STREAM_BRIDGE).standard_normal((path.n_steps, path.dimension))
    mid = 0.5 * (v[:-1] + v[1:]) + np.sqrt(path.dt / 4) * z
    out = np.empty((2 * path.n_steps + 1, path.dimension))
    out[0::2] = v
    out[1::2] = mid
    return BrownianPath(path.dimension, path.horizon, 2 * path.n_steps, out, path.seed, level, path.replicate)


def refine_to(path: BrownianPath, n_steps: int) -> BrownianPath:
    while path.n_steps < n_steps:
        path = refine(path)
    if path.n_steps != n_steps:
        raise ValueError("target step count must be the base count times a power of two")
    return path


class PathValue(NamedTuple):
    value: np.ndarray
    interpolated: bool


def value_at(path: BrownianPath, t: float) -> PathValue:
    if t < 0 or t > path.horizon:
        raise ValueError(f"time {t} outside [0, {path.horizon}]")
    s = t / path.dt
    near = round(s)
    if abs(s - near) <= 1e-9:
        # grid time up to rounding in t
        return PathValue(path.values[min(int(near), path.n_steps)].copy(), False)
    k = int(np.floor(s))
    frac = s - k
    return PathValue((1 - frac) * path.values[k] + frac * path.values[k + 1], True)


def sample_paths(seed, d, T, n, replicates, level=0):
    """Replicates 0..replicates-1 of the path family, refined ``level`` times."""
    out = []
    for r in range(replicates):
        p = sample_path(seed, d, T, n, replicate=r)
        for _ in range(level):
            p = refine(p)
        out.append(p)
    return out


def stack_values(paths) -> np.ndarray:
    """Knot values of equally gridded paths as an array of shape (n + 1, R, d)."""
    return np.stack([p.values for p in paths], axis=1)


def dump_path_csv(path: BrownianPath, filename) -> None:
    header = ["t"] + [f"B{i + 1}" for i in range(path.dimension)]
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, row in zip(path.times, path.values):
            w.writerow([format(t, ".17g")] + [format(v, ".17g") for v in row])


def load_path_csv(filename) -> BrownianPath:
    with open(filename, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "t" or len(header) < 2:
        raise ValueError(f"{filename}: expected header t,B1,...,Bd")
    data = np.array([[float(v) for v in r] for r in body])
    n = len(data) - 1
    T = data[-1, 0]
    if not np.allclose(data[:, 0], np.arange(n + 1) * (T / n), rtol=0, atol=1e-12 * max(T, 1)):
        raise ValueError(f"{filename}: knots are not on a uniform grid")
    return BrownianPath(len(header) - 1, float(T), n, data[:, 1:], seed=-1)
