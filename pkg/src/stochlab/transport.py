"""Solutions of the stochastic continuity equation and their weak-form verification.

Two constructions are provided on a stored Brownian path:

* ``representation``: u(t, x) = u0(Y_{0,t}(x)) through the backward flow;
* ``auxiliary``: u(t, x) = v(t, x - B_t) where v is transported by the
  deterministic characteristics dz/dr = b(r, z + B_r). The forward z-map is
  explicit Euler; v(t, .) = u0(Z_{0,t}^{-1}(.)) inverts each Euler step exactly by
  fixed-point iteration, so this route is a genuinely different discretization
  of the same solution and can serve as an oracle for the first one.

The weak residual pairs a candidate field with a compactly supported bump
phi on a tensor trapezoid grid and assembles

    R(t) = <u(t), phi> - <u0, phi> - int_0^t <u, b . grad phi> ds - int_0^t <u, grad phi> o dB

with a time trapezoid for the ds integral and the midpoint (Stratonovich)
sum for the stochastic one.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .brownian import BrownianPath
from .drift import DriftField, _bump, _bump_normalizer
from .flow import backward_map, backward_to_origin, forward_map

DATUM_KINDS = ("constant", "indicator_halfspace", "radial_bump", "continuous_bounded", "sequence_member")
SEQUENCE_MODES = ("oscillatory", "offset", "scaled", "additive", "constant")


def _bump_peak_slope():
    """max over s in (0, 1) of |d/ds exp(1 - 1/(1 - s^2))|."""
    def neg(s):
        q = 1.0 - s * s
        return -(2 * s / q**2) * math.exp(1.0 - 1.0 / q)

    grid = np.linspace(0.01, 0.99, 99)
    s0 = grid[np.argmin([neg(s) for s in grid])]
    res = minimize_scalar(neg, bounds=(s0 - 0.01, s0 + 0.01), method="bounded", options={"xatol": 1e-12})
    return -res.fun


_PEAK_SLOPE = None


def bump_peak_slope():
    global _PEAK_SLOPE
    if _PEAK_SLOPE is None:
        _PEAK_SLOPE = _bump_peak_slope()
    return _PEAK_SLOPE


# ---------------------------------------------------------------------------
# initial data


@dataclass(frozen=True, eq=False)
class InitialDatum:
    """Bounded initial datum u0; sequence members keep a reference to their limit."""

    kind: str
    params: dict = field(default_factory=dict)
    base: Optional["InitialDatum"] = None
    extra: Optional["InitialDatum"] = None

    def __post_init__(self):
        if self.kind not in DATUM_KINDS:
            raise ValueError(f"unknown datum kind {self.kind!r}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        k = self.kind
        if k == "constant":
            return np.full(x.shape[:-1], p["level"])
        if k == "indicator_halfspace":
            return np.where(x @ np.asarray(p["normal"]) > p["offset"], p["level"], 0.0)
        if k == "radial_bump":
            q = np.sum((x - np.asarray(p["center"])) ** 2, axis=-1) / p["radius"] ** 2
            with np.errstate(divide="ignore", over="ignore"):
                return p["amplitude"] * np.where(q < 1, np.exp(1.0 - 1.0 / np.maximum(1.0 - q, 1e-300)), 0.0)
        if k == "continuous_bounded":
            r = np.linalg.norm(x - np.asarray(p["center"]), axis=-1)
            return p["amplitude"] * np.maximum(0.0, 1.0 - r / p["radius"])
        return self.limit()(x) + self.difference(x)

    # sequence members -------------------------------------------------
    def limit(self) -> "InitialDatum":
        if self.kind != "sequence_member":
            return self
        if self.params["mode"] == "oscillatory":
            return make_datum("constant", level=0.0)
        return self.base

    def difference(self, x):
        """u0^n(x) - u0(x) evaluated directly from the sequence definition."""
        if self.kind != "sequence_member":
            return np.zeros(np.shape(x)[:-1])
        x = np.asarray(x, dtype=float)
        n, mode = self.params["n"], self.params["mode"]
        if mode == "oscillatory":
            return np.sin(n * x[..., 0]) * self.base(x)
        if mode == "offset":
            return np.full(x.shape[:-1], 1.0 / n)
        if mode == "scaled":
            return self.base(x) / n
        if mode == "additive":
            return self.extra(x) / n
        return np.zeros(x.shape[:-1])

    def sup_distance(self) -> float:
        """sup over R^d of |u0^n - u0|."""
        if self.kind != "sequence_member":
            return 0.0
        n, mode = self.params["n"], self.params["mode"]
        if mode == "oscillatory":
            return self.base.sup_norm
        if mode == "offset":
            return 1.0 / n
        if mode == "scaled":
            return self.base.sup_norm / n
        if mode == "additive":
            return self.extra.sup_norm / n
        return 0.0

    @property
    def sup_norm(self) -> float:
        p = self.params
        if self.kind == "constant":
            return abs(p["level"])
        if self.kind == "indicator_halfspace":
            return abs(p["level"])
        if self.kind in ("radial_bump", "continuous_bounded"):
            return abs(p["amplitude"])
        n, mode = p["n"], p["mode"]
        if mode == "oscillatory":
            return self.base.sup_norm
        if mode == "offset":
            return self.base.sup_norm + 1.0 / n
        if mode == "scaled":
            return self.base.sup_norm * (1 + 1.0 / n)
        if mode == "additive":
            return self.base.sup_norm + self.extra.sup_norm / n
        return self.base.sup_norm

    @property
    def lipschitz(self) -> Optional[float]:
        """A Lipschitz constant, or None for discontinuous data."""
        p = self.params
        if self.kind == "constant":
            return 0.0
        if self.kind == "indicator_halfspace":
            return None
        if self.kind == "radial_bump":
            return abs(p["amplitude"]) * bump_peak_slope() / p["radius"]
        if self.kind == "continuous_bounded":
            return abs(p["amplitude"]) / p["radius"]
        base = self.base.lipschitz
        if base is None:
            return None
        n, mode = p["n"], p["mode"]
        if mode == "oscillatory":
            return n * self.base.sup_norm + base
        if mode == "scaled":
            return base * (1 + 1.0 / n)
        if mode == "additive":
            e = self.extra.lipschitz
            return None if e is None else base + e / n
        return base


def make_datum(kind, **params) -> InitialDatum:
    if kind == "constant":
        return InitialDatum(kind, {"level": float(params.get("level", 1.0))})
    if kind == "indicator_halfspace":
        normal = tuple(float(v) for v in params.get("normal", (1.0, 0.0)))
        return InitialDatum(kind, {"normal": normal, "offset": float(params.get("offset", 0.0)),
                                   "level": float(params.get("level", 1.0))})
    if kind in ("radial_bump", "continuous_bounded"):
        center = tuple(float(v) for v in params.get("center", (0.0, 0.0)))
        radius = float(params.get("radius", 1.0))
        if radius <= 0:
            raise ValueError("datum radius must be positive")
        return InitialDatum(kind, {"center": center, "radius": radius,
                                   "amplitude": float(params.get("amplitude", 1.0))})
    if kind == "sequence_member":
        return sequence_member(params["base"], params["n"], params.get("mode", "oscillatory"), params.get("extra"))
    raise ValueError(f"unknown datum kind {kind!r}")


def sequence_member(base: InitialDatum, n: int, mode="oscillatory", extra=None) -> InitialDatum:
    """The n-th member of a datum sequence converging to ``base`` (or to 0 when oscillatory)."""
    if mode not in SEQUENCE_MODES:
        raise ValueError(f"unknown sequence mode {mode!r}")
    if n < 1:
        raise ValueError("sequence index must be >= 1")
    if mode == "additive" and extra is None:
        extra = base
    return InitialDatum("sequence_member", {"n": int(n), "mode": mode}, base, extra)


# ---------------------------------------------------------------------------
# test functions and quadrature


@dataclass(frozen=True)
class TestFunction:
    """phi(x) = amplitude * exp(-1 / (1 - |x - c|^2 / r^2)) inside the ball, 0 outside."""

    __test__ = False  # not a pytest class

    center: tuple
    radius: float
    amplitude: float = 1.0

    def _q(self, x):
        x = np.asarray(x, dtype=float)
        return x - np.asarray(self.center), np.sum((x - np.asarray(self.center)) ** 2, axis=-1) / self.radius**2

    def value(self, x):
        _, q = self._q(x)
        return self.amplitude * _bump(q)

    __call__ = value

    def gradient(self, x):
        diff, q = self._q(x)
        inside = q < 1
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(inside, -2.0 * self.amplitude * _bump(q) / (self.radius**2 * (1 - q) ** 2), 0.0)
        return diff * factor[..., None]

    def integral(self) -> float:
        d = len(self.center)
        return self.amplitude * self.radius**d * _bump_normalizer(d)

    def abs_integral(self) -> float:
        return abs(self.integral())


def phi_battery(count=8, ring=0.5, radius=0.5, center=(0.0, 0.0)):
    """``count`` bumps with centers evenly spaced on a circle."""
    out = []
    for k in range(count):
        a = 2 * math.pi * k / count
        out.append(TestFunction((center[0] + ring * math.cos(a), center[1] + ring * math.sin(a)), radius))
    return out


@dataclass(frozen=True)
class QuadratureSpec:
    box: tuple
    nodes_per_axis: int = 129

    def nodes(self):
        """Tensor trapezoid nodes (m, d) and weights (m,)."""
        xs, ws = [], []
        for lo, hi in self.box:
            x = np.linspace(lo, hi, self.nodes_per_axis)
            w = np.full(self.nodes_per_axis, (hi - lo) / (self.nodes_per_axis - 1))
            w[[0, -1]] *= 0.5
            xs.append(x)
            ws.append(w)
        X = np.meshgrid(*xs, indexing="ij")
        W = np.meshgrid(*ws, indexing="ij")
        pts = np.stack([a.ravel() for a in X], axis=-1)
        return pts, np.prod(np.stack([a.ravel() for a in W]), axis=0)

    def contains(self, phi: TestFunction) -> bool:
        return all(lo <= c - phi.radius and c + phi.radius <= hi for (lo, hi), c in zip(self.box, phi.center))

    def refined(self) -> "QuadratureSpec":
        return QuadratureSpec(self.box, 2 * self.nodes_per_axis - 1)


def enclosing_box(phis, margin=0.0):
    c = np.array([p.center for p in phis])
    r = np.array([p.radius for p in phis])[:, None]
    lo = (c - r).min(axis=0) - margin
    hi = (c + r).max(axis=0) + margin
    return tuple((float(a), float(b)) for a, b in zip(lo, hi))


# ---------------------------------------------------------------------------
# solutions


ROUTES = ("representation", "auxiliary", "candidate")


@dataclass(eq=False)
class WeakSolution:
    drift: DriftField
    path: BrownianPath
    datum: InitialDatum
    route: str = "representation"
    candidate: Optional[Callable] = None
    fixed_point_tol: float = 1e-13
    fixed_point_iter: int = 60
    fallback_steps: int = field(default=0, init=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.route not in ROUTES:
            raise ValueError(f"unknown route {self.route!r}")
        if self.route == "candidate" and self.candidate is None:
            raise ValueError("candidate route needs a field u(t, x)")


def representation_solution(b, w, u0) -> WeakSolution:
    return WeakSolution(b, w, u0, "representation")


def auxiliary_solution(b: DriftField, w: BrownianPath, u0: InitialDatum) -> WeakSolution:
    if not b.divergence_free:
        raise ValueError("the auxiliary construction needs a divergence-free drift")
    return WeakSolution(b, w, u0, "auxiliary")


def frozen_candidate(b, w, u0) -> WeakSolution:
    """Negative control u(t, x) := u0(x), which ignores the transport."""
    return WeakSolution(b, w, u0, "candidate", candidate=lambda t, x: u0(x))


def _auxiliary_to_origin(ws: WeakSolution, x, knots):
    """Z_{0,t_j}^{-1}(x - B_{t_j}) for each knot j, inverting every Euler step of z."""
    b, w = ws.drift, ws.path
    B, dt = w.values, w.dt
    x = np.asarray(x, dtype=float)
    order = np.argsort(knots, kind="stable")
    ks = np.asarray(knots)[order]
    Z = x[None] - B[ks][:, None, :]
    kmax = int(ks[-1]) if len(ks) else 0
    for k in range(kmax - 1, -1, -1):
        first = int(np.searchsorted(ks, k + 1))
        if first == len(ks):
            continue
        znext = Z[first:]
        guess = znext - b.evaluate((k + 1) * dt, znext + B[k + 1], on_singular="nan") * dt
        shape = znext.shape
        zf = znext.reshape(-1, shape[-1])
        gf = guess.reshape(-1, shape[-1])
        z = gf.copy()
        active = np.arange(len(z))
        for _ in range(ws.fixed_point_iter):
            if 2 * len(active) > len(z):
                # mostly unconverged: a full sweep is cheaper than gathering
                zn = zf - b.evaluate(k * dt, z + B[k], on_singular="nan") * dt
                done = np.abs(zn - z).max(axis=-1) <= ws.fixed_point_tol * (1 + np.abs(zn).max(axis=-1))
                z = zn
                active = np.flatnonzero(~done)
            else:
                zn = zf[active] - b.evaluate(k * dt, z[active] + B[k], on_singular="nan") * dt
                done = np.abs(zn - z[active]).max(axis=-1) <= ws.fixed_point_tol * (1 + np.abs(zn).max(axis=-1))
                z[active] = zn
                active = active[~done]
            if len(active) == 0:
                break
        if len(active):
            ws.fallback_steps += len(active)
            z[active] = gf[active]
        z = z.reshape(shape)
        Z[first:] = z
    out = np.empty_like(Z)
    out[order] = Z
    return out


def foot_points(ws: WeakSolution, knots, x):
    """Points in the initial configuration carried to x at each knot time: (len(knots), m, d)."""
    x = np.asarray(x, dtype=float)
    if ws.route == "representation":
        return backward_to_origin(ws.drift, ws.path.values, ws.path.dt, x, list(knots))
    if ws.route == "auxiliary":
        return _auxiliary_to_origin(ws, x, list(knots))
    raise ValueError("candidate fields have no characteristics")


def evaluate_solution(ws: WeakSolution, t, x):
    """u(t, x) through the solution's route (x of shape (..., d))."""
    k = ws.path.knot(t)
    x = np.asarray(x, dtype=float)
    if ws.route == "candidate":
        return np.asarray(ws.candidate(k * ws.path.dt, x), dtype=float)
    flat = x.reshape(-1, x.shape[-1])
    feet = foot_points(ws, [k], flat)[0]
    return ws.datum(feet).reshape(x.shape[:-1])


def _key(nodes):
    return hashlib.sha1(np.ascontiguousarray(nodes).tobytes()).hexdigest()


def solution_at_knots(ws: WeakSolution, nodes, kmax):
    """u(t_k, nodes) for k = 0..kmax, shape (kmax + 1, m); memoized per node set."""
    key = _key(nodes)
    hit = ws._cache.get(key)
    if hit is not None and hit.shape[0] > kmax:
        return hit[: kmax + 1]
    if ws.route == "candidate":
        U = np.stack([np.asarray(ws.candidate(k * ws.path.dt, nodes), dtype=float) for k in range(kmax + 1)])
    else:
        U = ws.datum(foot_points(ws, range(kmax + 1), nodes))
    ws._cache[key] = U
    return U


def _values_at(ws, nodes, k):
    hit = ws._cache.get(_key(nodes))
    if hit is not None and hit.shape[0] > k:
        return hit[k]
    return evaluate_solution(ws, k * ws.path.dt, nodes)


def _check_support(quad, phi):
    if not quad.contains(phi):
        raise ValueError("quadrature box does not contain the support of the test function")


def pairing(ws: WeakSolution, phi: TestFunction, t, quad: QuadratureSpec) -> float:
    """Trapezoid quadrature of u(t, .) phi over the box."""
    _check_support(quad, phi)
    nodes, w = quad.nodes()
    u = _values_at(ws, nodes, ws.path.knot(t))
    return float(np.sum(w * u * phi(nodes)))


class ResidualReport(NamedTuple):
    pairing_t: float
    pairing_0: float
    drift_term: float
    strat_term: float
    residual: float
    nodes: int
    steps: int
    skipped: int


def _drift_at_nodes(b: DriftField, nodes, kmax, dt):
    if b.autonomous:
        v = b.evaluate(0.0, nodes, on_singular="nan")
        return lambda k: v
    return lambda k: b.evaluate(k * dt, nodes, on_singular="nan")


def residual_battery(ws: WeakSolution, phis: Sequence[TestFunction], t, quad: QuadratureSpec):
    """Weak-form terms for each test function, sharing one evaluation of u on the grid."""
    for phi in phis:
        _check_support(quad, phi)
    w = ws.path
    K = w.knot(t)
    nodes, wq = quad.nodes()
    U = solution_at_knots(ws, nodes, K)
    bk = _drift_at_nodes(ws.drift, nodes, K, w.dt)
    dB = np.diff(w.values[: K + 1], axis=0)
    reports = []
    for phi in phis:
        val = phi(nodes)
        grad = phi.gradient(nodes)
        P = U @ (wq * val)
        F = U @ (wq[:, None] * grad)  # (K + 1, d)
        g = np.empty(K + 1)
        skipped = 0
        for k in range(K + 1):
            bg = np.sum(bk(k) * grad, axis=-1)
            bad = np.isnan(bg)
            skipped += int(bad.sum())
            g[k] = np.sum(np.where(bad, 0.0, wq * U[k] * bg))
        drift_term = float(np.sum(0.5 * (g[:-1] + g[1:])) * w.dt)
        strat = float(np.sum(0.5 * (F[:-1] + F[1:]) * dB))
        res = P[K] - P[0] - drift_term - strat
        reports.append(ResidualReport(float(P[K]), float(P[0]), drift_term, strat, float(res),
                                      len(nodes), K, skipped))
    return reports


def drift_term(ws, phi, t, quad) -> float:
    return residual_battery(ws, [phi], t, quad)[0].drift_term


def stratonovich_term(ws, phi, t, quad) -> float:
    return residual_battery(ws, [phi], t, quad)[0].strat_term


def weak_residual(ws, phi, t, quad) -> float:
    return residual_battery(ws, [phi], t, quad)[0].residual


def pairing_trace(ws: WeakSolution, phi: TestFunction, t, quad: QuadratureSpec):
    """<u(t_k), phi> for every knot up to t."""
    _check_support(quad, phi)
    nodes, wq = quad.nodes()
    U = solution_at_knots(ws, nodes, ws.path.knot(t))
    return U @ (wq * phi(nodes))


def pushforward_defect(b: DriftField, w: BrownianPath, f, phi: TestFunction, t, quad: QuadratureSpec):
    """|int f(X_t(y)) phi(y) dy - int f(y) phi(Y_t(y)) dy| on a common path."""
    nodes, wq = quad.nodes()
    lhs = np.sum(wq * f(forward_map(b, w, nodes, 0.0, t)) * phi(nodes))
    rhs = np.sum(wq * f(nodes) * phi(backward_map(b, w, nodes, 0.0, t)))
    return float(abs(lhs - rhs))


def lagrangian_pairing(b: DriftField, w: BrownianPath, datum, phi, t, quad: QuadratureSpec, images=None):
    """<u(t), phi> computed as int u0(x) phi(X_{0,t}(x)) dx (unit Jacobian transfer)."""
    nodes, wq = quad.nodes()
    if images is None:
        images = forward_map(b, w, nodes, 0.0, t)
    return float(np.sum(wq * datum(nodes) * phi(images)))
