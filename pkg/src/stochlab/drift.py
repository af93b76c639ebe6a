"""Drift vector fields b(t, x): catalog, LPS bookkeeping, divergence, mollification, L^p norms.

Every cataloged field carries a smooth compact cutoff so that it is globally
integrable. Rotational fields are multiplied by a radial cutoff (which keeps them
divergence-free because x . x_perp = 0); shear and constant fields are cut at the
stream-function level in d = 2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

SINGULAR_RADIUS = 16 * np.finfo(float).eps

DRIFT_KINDS = (
    "zero",
    "constant",
    "linear_skew",
    "shear",
    "rotational_singular",
    "holder_rotational",
    "custom_callable",
)


class SingularityError(ValueError):
    """Raised when a drift is evaluated inside the machine-epsilon ball of a singular point."""

    def __init__(self, message, points=None, time=None):
        super().__init__(message)
        self.points = points
        self.time = time


# ---------------------------------------------------------------------------
# LPS exponents


@dataclass(frozen=True)
class LpsExponents:
    d: int
    p: float
    q: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d}")
        if not (math.isfinite(self.p) and math.isfinite(self.q)):
            raise ValueError("LPS exponents p and q must be finite")


def lps_index(e: LpsExponents) -> float:
    """Return d/p + 2/q."""
    if e.d < 1 or e.p <= 0 or e.q <= 0:
        raise ValueError(f"exponents must be positive: d={e.d}, p={e.p}, q={e.q}")
    return e.d / e.p + 2 / e.q


def lps_satisfied(e: LpsExponents) -> bool:
    # strict inequality on the index; the boundary case is the open sharpness question
    return e.p >= 2 and e.q > 2 and lps_index(e) < 1


# ---------------------------------------------------------------------------
# cutoff


def _smooth_step(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1. Returns (value, derivative)."""
    u = np.asarray(u, dtype=float)
    a = np.clip(u, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        fa = np.where(a > 0, np.exp(-1.0 / a), 0.0)
        fb = np.where(a < 1, np.exp(-1.0 / (1.0 - a)), 0.0)
        dfa = np.where(a > 0, fa / a**2, 0.0)
        dfb = np.where(a < 1, fb / (1.0 - a) ** 2, 0.0)
    den = fa + fb
    s = fa / den
    ds = (dfa * fb + fa * dfb) / den**2
    ds = np.where((u <= 0) | (u >= 1), 0.0, ds)
    return s, ds


def radial_cutoff(r, radius):
    """chi(r) = 1 for r <= radius/2, 0 for r >= radius, smooth between. Returns (chi, dchi/dr)."""
    r = np.asarray(r, dtype=float)
    if radius is None:
        return np.ones_like(r), np.zeros_like(r)
    inner = 0.5 * radius
    chi, dchi = np.ones_like(r), np.zeros_like(r)
    outer = r > inner
    if outer.any():
        s, ds = _smooth_step((radius - r[outer]) / (radius - inner))
        chi[outer] = s
        dchi[outer] = -ds / (radius - inner)
    return chi, dchi


def _perp(x):
    return np.stack([-x[..., 1], x[..., 0]], axis=-1)


def _stream_cut(x, psi, b0, radius):
    """Field of curl(chi * psi) where b0 = (d2 psi, -d1 psi) is the uncut field."""
    if radius is None:
        return b0
    r = np.linalg.norm(x, axis=-1)
    if not (r > 0.5 * radius).any():
        return b0
    chi, dchi = radial_cutoff(r, radius)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(r > 0, dchi / r, 0.0)
    grad = x * g[..., None]
    out = chi[..., None] * b0
    out[..., 0] += psi * grad[..., 1]
    out[..., 1] -= psi * grad[..., 0]
    return out


# ---------------------------------------------------------------------------
# the field type


@dataclass(frozen=True, eq=False)
class DriftField:
    """A vector field b(t, x) on R^d with claimed LPS exponents.

    ``evaluate`` accepts points with arbitrary leading shape ``(..., d)``.
    """

    kind: str
    d: int
    params: dict = field(default_factory=dict)
    exponents: Optional[LpsExponents] = None
    divergence_free: bool = True
    singular_points: tuple = ()
    fn: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if self.exponents is None:
            object.__setattr__(self, "exponents", LpsExponents(self.d, 3.0 * self.d, 6.0))

    @property
    def cutoff_radius(self):
        return self.params.get("cutoff_radius")

    def singular_mask(self, x):
        x = np.asarray(x, dtype=float)
        mask = np.zeros(x.shape[:-1], dtype=bool)
        for p in self.singular_points:
            mask |= np.linalg.norm(x - np.asarray(p, dtype=float), axis=-1) <= SINGULAR_RADIUS
        return mask

    def evaluate(self, t, x, on_singular="raise"):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise ValueError(f"point dimension {x.shape[-1]} does not match drift dimension {self.d}")
        bad = self.singular_mask(x) if self.singular_points else None
        if bad is not None and bad.any():
            if on_singular == "raise":
                raise SingularityError(
                    f"{self.kind} drift evaluated at a singular point", points=x[bad], time=t
                )
            x = np.where(bad[..., None], 1.0, x)
        out = np.array(_EVALUATORS[self.kind](self, t, x), dtype=float)
        if out.shape != x.shape:
            out = np.broadcast_to(out, x.shape).copy()
        if bad is not None and bad.any():
            out[bad] = np.nan
        return out

    __call__ = evaluate

    @property
    def autonomous(self) -> bool:
        """True when b does not depend on t (all cataloged kinds)."""
        return self.kind != "custom_callable" or bool(self.params.get("autonomous", False))


def _eval_zero(b, t, x):
    return np.zeros_like(x)


def _eval_constant(b, t, x):
    c = np.asarray(b.params["c"], dtype=float)
    b0 = np.broadcast_to(c, x.shape).copy()
    if b.d != 2 or b.cutoff_radius is None:
        return b0
    psi = c[0] * x[..., 1] - c[1] * x[..., 0]
    return _stream_cut(x, psi, b0, b.cutoff_radius)


def _eval_linear_skew(b, t, x):
    A = np.asarray(b.params["A"], dtype=float)
    out = x @ A.T
    if b.cutoff_radius is not None:
        chi, _ = radial_cutoff(np.linalg.norm(x, axis=-1), b.cutoff_radius)
        out *= chi[..., None]
    return out


def _shear_profile(params, s):
    amp, k, mean = params["amplitude"], params["wavenumber"], params["mean"]
    g = mean + amp * np.sin(k * s)
    G = mean * s - (amp / k) * np.cos(k * s) if k != 0 else mean * s
    return g, G


def _eval_shear(b, t, x):
    g, G = _shear_profile(b.params, x[..., 1])
    b0 = np.zeros_like(x)
    b0[..., 0] = g
    return _stream_cut(x, G, b0, b.cutoff_radius)


def _radial_factor(b, r):
    chi, _ = radial_cutoff(r, b.cutoff_radius)
    return chi


def _eval_rotational_singular(b, t, x):
    r = np.linalg.norm(x, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = r ** (-b.params["alpha"]) * _radial_factor(b, r)
    return _perp(x) * w[..., None]


def _eval_holder_rotational(b, t, x):
    r = np.linalg.norm(x, axis=-1)
    w = np.abs(r - b.params["r0"]) ** b.params["beta"] * _radial_factor(b, r)
    return _perp(x) * w[..., None]


def _eval_custom(b, t, x):
    return b.fn(t, x)


_EVALUATORS = {
    "zero": _eval_zero,
    "constant": _eval_constant,
    "linear_skew": _eval_linear_skew,
    "shear": _eval_shear,
    "rotational_singular": _eval_rotational_singular,
    "holder_rotational": _eval_holder_rotational,
    "custom_callable": _eval_custom,
}


# ---------------------------------------------------------------------------
# catalog


def default_exponents(kind, d, **params):
    """Claimed LPS exponents used when none are given.

    Bounded, compactly cut fields belong to every L^p, so (p, q) = (3d, 6) is a
    valid claim. The singular rotation with alpha > 1 has |b| ~ |x|^(1 - alpha)
    near the origin and is only in L^p_loc for p (alpha - 1) < d.
    """
    if kind == "rotational_singular" and params.get("alpha", 0.5) > 1:
        excess = params["alpha"] - 1.0
        if excess >= 1:
            return LpsExponents(d, 2.0, 4.0)
        p = 0.5 * (2.0 + d / excess)
        return LpsExponents(d, p, 4.0 * p / (p - d))
    return LpsExponents(d, 3.0 * d, 6.0)


def exponent_warnings(b: DriftField) -> list:
    """Mislabeled-experiment checks; returns the list of messages (also emitted as warnings)."""
    msgs = []
    e = b.exponents
    if e.d != b.d:
        msgs.append(f"exponents claim d={e.d} but the field lives in d={b.d}")
    if b.kind == "rotational_singular":
        excess = max(b.params["alpha"] - 1.0, 0.0)
        if e.p * excess >= b.d:
            msgs.append(
                f"rotational_singular with alpha={b.params['alpha']} is not in L^p_loc for p={e.p}"
                f" (needs p*(alpha-1) < {b.d})"
            )
    for m in msgs:
        warnings.warn(m, stacklevel=2)
    return msgs


def make_drift(kind, d=2, cutoff_radius=10.0, exponents=None, fn=None, divergence_free=None, **params):
    """Build a cataloged drift field by string id."""
    if kind not in DRIFT_KINDS:
        raise ValueError(f"unknown drift kind {kind!r}; expected one of {DRIFT_KINDS}")
    if cutoff_radius is not None and cutoff_radius <= 0:
        cutoff_radius = None
    singular = ()
    if kind == "zero":
        params = {}
    elif kind == "constant":
        c = np.asarray(params.get("c", [1.0] + [0.0] * (d - 1)), dtype=float)
        if c.shape != (d,):
            raise ValueError(f"constant drift needs {d} components")
        params = {"c": tuple(float(v) for v in c)}
        if d != 2:
            cutoff_radius = None
    elif kind == "linear_skew":
        if "A" in params:
            A = np.asarray(params["A"], dtype=float)
        else:
            omega = float(params.get("omega", 1.0))
            A = np.zeros((d, d))
            if d >= 2:
                A[0, 1], A[1, 0] = -omega, omega
        if A.shape != (d, d) or not np.allclose(A, -A.T, atol=0):
            raise ValueError("linear_skew needs a skew-symmetric d x d matrix")
        params = {"A": tuple(tuple(float(v) for v in row) for row in A)}
    elif kind == "shear":
        _need_2d(kind, d)
        params = {
            "amplitude": float(params.get("amplitude", 0.5)),
            "wavenumber": float(params.get("wavenumber", 1.0)),
            "mean": float(params.get("mean", 0.0)),
        }
    elif kind == "rotational_singular":
        _need_2d(kind, d)
        params = {"alpha": float(params.get("alpha", 0.5))}
        singular = (np.zeros(2),)
    elif kind == "holder_rotational":
        _need_2d(kind, d)
        beta = float(params.get("beta", 0.5))
        if not 0 < beta <= 1:
            raise ValueError("holder_rotational needs beta in (0, 1]")
        params = {"beta": beta, "r0": float(params.get("r0", 0.5))}
    elif kind == "custom_callable":
        if fn is None:
            raise ValueError("custom_callable drift needs fn(t, x)")
        params = dict(params)
        cutoff_radius = None
    params["cutoff_radius"] = cutoff_radius
    if exponents is None:
        exponents = default_exponents(kind, d, **params)
    elif not isinstance(exponents, LpsExponents):
        exponents = LpsExponents(d, *exponents)
    if divergence_free is None:
        divergence_free = kind != "custom_callable"
    return DriftField(kind, d, params, exponents, bool(divergence_free), singular, fn)


def _need_2d(kind, d):
    if d != 2:
        raise ValueError(f"{kind} drift is only defined in d=2")


def evaluate_drift(b: DriftField, t, x, on_singular="raise"):
    return b.evaluate(t, x, on_singular=on_singular)


def divergence_numeric(b: DriftField, t, x, h=1e-5):
    """Central-difference divergence at x (shape (..., d))."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=float)
    div = np.zeros(x.shape[:-1])
    for i in range(b.d):
        e = np.zeros(b.d)
        e[i] = h
        div = div + (b.evaluate(t, x + e)[..., i] - b.evaluate(t, x - e)[..., i]) / (2 * h)
    return div


# ---------------------------------------------------------------------------
# mollification


def _bump(s2):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(s2 < 1, np.exp(-1.0 / np.maximum(1.0 - s2, 1e-300)), 0.0)


_NORMALIZERS = {}


def _bump_normalizer(d):
    """Integral of exp(-1/(1-|x|^2)) over the unit ball of R^d."""
    if d not in _NORMALIZERS:
        sphere = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
        val, _ = integrate.quad(
            lambda r: r ** (d - 1) * math.exp(-1.0 / (1.0 - r * r)) if r < 1 else 0.0,
            0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200,
        )
        _NORMALIZERS[d] = sphere * val
    return _NORMALIZERS[d]


@dataclass(frozen=True)
class MollifierKernel:
    """Scaled standard bump kappa_delta(y) = delta^-d kappa(y / delta) on a tensor grid.

    Quadrature weights are normalized on the grid, so the discrete mass is one
    and the symmetric grid gives a vanishing first moment.
    """

    delta: float
    quadrature_points: int = 33

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("mollifier radius delta must be positive")
        if self.quadrature_points < 3:
            raise ValueError("need at least 3 quadrature points per axis")

    def density(self, y):
        y = np.asarray(y, dtype=float)
        d = y.shape[-1]
        s2 = np.sum((y / self.delta) ** 2, axis=-1)
        return _bump(s2) / (_bump_normalizer(d) * self.delta**d)

    def _grid(self, d):
        s = np.linspace(-1.0, 1.0, self.quadrature_points)
        mesh = np.meshgrid(*([s] * d), indexing="ij")
        unit = np.stack([m.ravel() for m in mesh], axis=-1)
        return unit, s[1] - s[0]

    def nodes(self, d):
        """Offsets (k, d) inside the kernel support and weights (k,) summing to one."""
        unit, _ = self._grid(d)
        w = _bump(np.sum(unit**2, axis=-1))
        keep = w > 0
        w = w[keep]
        return unit[keep] * self.delta, w / w.sum()

    def mass(self, d):
        return float(self.nodes(d)[1].sum())

    def continuous_mass(self, d):
        """Trapezoid integral of the analytically normalized density (quadrature diagnostic)."""
        unit, h = self._grid(d)
        return float(self.density(unit * self.delta).sum() * (h * self.delta) ** d)


class MollifiedField:
    """Callable b^delta(t, x) = sum_j w_j b(t, x - y_j) over the kernel nodes.

    Singular nodes are skipped and the remaining weights renormalized. Fields with
    a symmetry get a tabulated fast path built from the same quadrature:
    rotation-equivariant fields through their tangential radial profile, the shear
    through its periodic one-dimensional profile inside the flat cutoff region.
    """

    def __init__(self, base: DriftField, kernel: MollifierKernel, table_points=4096):
        self.base = base
        self.kernel = kernel
        self.offsets, self.weights = kernel.nodes(base.d)
        self.table_points = int(table_points)
        self.skipped_nodes = 0
        self._table = None
        self._mode = _fast_mode(base)

    # generic route -----------------------------------------------------
    def direct(self, t, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape
        flat = x.reshape(-1, self.base.d)
        k = len(self.weights)
        chunk = max(1, 2_000_000 // k)
        out = np.empty_like(flat)
        for lo in range(0, len(flat), chunk):
            pts = flat[lo:lo + chunk, None, :] - self.offsets[None, :, :]
            vals = self.base.evaluate(t, pts, on_singular="nan")
            bad = np.isnan(vals[..., 0])
            w = np.where(bad, 0.0, self.weights[None, :])
            self.skipped_nodes += int(bad.sum())
            vals = np.where(bad[..., None], 0.0, vals)
            out[lo:lo + chunk] = np.einsum("mkd,mk->md", vals, w) / w.sum(axis=1)[:, None]
        return out.reshape(shape)

    # tabulated routes --------------------------------------------------
    def _build_table(self):
        b, delta = self.base, self.kernel.delta
        if self._mode == "radial":
            R = b.cutoff_radius
            rmax = (R + delta) if R is not None else 20.0
            r = np.linspace(0.0, rmax, self.table_points)
            self._table = (rmax, CubicSpline(r, self._radial_profile(r)))
        elif self._mode == "shear":
            uncut = make_drift("shear", 2, cutoff_radius=None, **{k: v for k, v in b.params.items() if k != "cutoff_radius"})
            k = b.params["wavenumber"]
            period = 2 * math.pi / abs(k)
            s = np.linspace(0.0, period, self.table_points)
            pts = np.zeros((len(s), 2))
            pts[:, 1] = s
            saved, self.base = self.base, uncut
            try:
                prof = self.direct(0.0, pts)[:, 0]
            finally:
                self.base = saved
            prof[-1] = prof[0]
            self._table = (period, CubicSpline(s, prof, bc_type="periodic"))

    def _radial_profile(self, r, n_rho=48, n_theta=48):
        """Tangential component of b^delta at (r, 0) for a field b(z) = z_perp w(|z|).

        Polar product quadrature centred on the origin: Gauss-Legendre in
        rho = a + (c - a) s^2 over the kernel's radial shadow and in theta over the
        angular window where the kernel is supported. The result is divided by the
        same quadrature of the kernel mass, mirroring the renormalized grid rule.
        """
        delta = self.kernel.delta
        s, ws = np.polynomial.legendre.leggauss(n_rho)
        s, ws = 0.5 * (s + 1), 0.5 * ws
        g, wg = np.polynomial.legendre.leggauss(n_theta)
        g, wg = 0.5 * (g + 1), 0.5 * wg
        out = np.empty_like(r)
        for lo in range(0, len(r), 256):
            rr = r[lo:lo + 256, None]
            a = np.maximum(rr - delta, 0.0)
            c = rr + delta
            rho = a + (c - a) * s**2
            wrho = (c - a) * 2 * s * ws
            pts = np.zeros(rho.shape + (2,))
            pts[..., 0] = rho
            w = self.base.evaluate(0.0, pts)[..., 1] / rho
            with np.errstate(divide="ignore", invalid="ignore"):
                c0 = (rr**2 + rho**2 - delta**2) / (2 * rr * rho)
            theta_max = np.arccos(np.clip(np.nan_to_num(c0, nan=-1.0), -1.0, 1.0))
            theta = theta_max[..., None] * g
            dist2 = rr[..., None] ** 2 + rho[..., None] ** 2 - 2 * rr[..., None] * rho[..., None] * np.cos(theta)
            kern = _bump(np.maximum(dist2, 0.0) / delta**2) * wg
            ang_mass = 2 * theta_max * kern.sum(axis=-1)
            ang_cos = 2 * theta_max * (kern * np.cos(theta)).sum(axis=-1)
            num = np.sum(wrho * rho**2 * w * ang_cos, axis=-1)
            den = np.sum(wrho * rho * ang_mass, axis=-1)
            out[lo:lo + 256] = num / den
        return out

    def _flat(self, x):
        R = self.base.cutoff_radius
        if R is None:
            return np.ones(x.shape[:-1], dtype=bool)
        return np.linalg.norm(x, axis=-1) + self.kernel.delta <= 0.5 * R

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        mode = self._mode
        if mode is None:
            return self.direct(t, x)
        if mode == "zero":
            return np.zeros_like(x)
        if mode == "constant":
            inside = self._flat(x)
            out = np.broadcast_to(np.asarray(self.base.params["c"]), x.shape).copy()
            if not inside.all():
                out[~inside] = self.direct(t, x[~inside])
            return out
        if self._table is None:
            self._build_table()
        if mode == "radial":
            rmax, spline = self._table
            r = np.linalg.norm(x, axis=-1)
            inside = r <= rmax
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(r > 0, spline(np.minimum(r, rmax)) / r, 0.0)
            out = _perp(x) * scale[..., None]
            if not inside.all():
                out[~inside] = self.direct(t, x[~inside])
            return out
        # shear
        period, spline = self._table
        inside = self._flat(x)
        out = np.zeros_like(x)
        out[..., 0] = spline(np.mod(x[..., 1], period))
        if not inside.all():
            out[~inside] = self.direct(t, x[~inside])
        return out


def _fast_mode(b: DriftField):
    if b.kind == "zero":
        return "zero"
    if b.kind == "constant":
        return "constant"
    if b.kind in ("rotational_singular", "holder_rotational"):
        return "radial"
    if b.kind == "linear_skew" and b.d == 2:
        A = np.asarray(b.params["A"])
        if A[0, 0] == 0 and A[1, 1] == 0:
            return "radial"
    if b.kind == "shear" and b.params["wavenumber"] != 0:
        return "shear"
    return None


def mollify_drift(b: DriftField, k: MollifierKernel, table_points=4096) -> DriftField:
    """Return the mollified field b^delta as a custom_callable drift (defined everywhere)."""
    m = MollifiedField(b, k, table_points=table_points)
    params = {"base_kind": b.kind, "delta": k.delta, "cutoff_radius": None, "autonomous": b.autonomous}
    return DriftField("custom_callable", b.d, params, b.exponents, b.divergence_free, (), m)


# ---------------------------------------------------------------------------
# norms


class NormEstimate(NamedTuple):
    value: float
    skipped_nodes: int


def _trapezoid_weights(lo, hi, n):
    x = np.linspace(lo, hi, n)
    w = np.full(n, (hi - lo) / (n - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return x, w


def lp_norm_estimate(b: DriftField, t, p, box: Sequence, n: int) -> NormEstimate:
    """Trapezoid estimate of (int_box |b(t,x)|^p dx)^(1/p); singular nodes are excluded."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if len(box) != b.d:
        raise ValueError("box must give one (lo, hi) pair per axis")
    axes = [_trapezoid_weights(lo, hi, n) for lo, hi in box]
    rest_x = np.meshgrid(*[a[0] for a in axes[1:]], indexing="ij")
    rest_w = np.ones(()) if b.d == 1 else np.prod(np.meshgrid(*[a[1] for a in axes[1:]], indexing="ij"), axis=0)
    total, skipped = 0.0, 0
    x0, w0 = axes[0]
    for i in range(n):
        pts = np.stack([np.full(rest_w.shape, x0[i])] + list(rest_x), axis=-1)
        vals = b.evaluate(t, pts, on_singular="nan")
        mag = np.linalg.norm(vals, axis=-1)
        bad = np.isnan(mag)
        skipped += int(bad.sum())
        total += w0[i] * float(np.sum(np.where(bad, 0.0, mag**p) * rest_w))
    return NormEstimate(total ** (1.0 / p), skipped)
