"""Forward and backward stochastic characteristics on a shared Brownian path.

Both schemes are explicit Euler-Maruyama, written in noise-subtracted form

    X_k = x + (B_k - B_s) + D_k,    D_{k+1} = D_k + b(t_k, X_k) dt

which is the same recursion as X_{k+1} = X_k + b dt + dB but reproduces the
translation x + B_t - B_s with a single rounding when b = 0. The backward scheme
is the exact time mirror: it evaluates b at the right endpoint of each step.

Every integrator broadcasts: knot values of shape (n + 1, *batch, d) against
start points of shape (..., d), so ensembles over paths and start points run as
one vectorized loop over time.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .brownian import BrownianPath, sample_path, stack_values
from .drift import DriftField, MollifierKernel, SingularityError, mollify_drift


class FlowIntegrationError(RuntimeError):
    """A trajectory hit a singular point of the drift."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True, eq=False)
class FlowTrajectory:
    direction: str
    start_point: np.ndarray
    start_time: float
    end_time: float
    times: np.ndarray
    positions: np.ndarray
    drift: DriftField = field(repr=False)
    path: BrownianPath = field(repr=False)

    @property
    def terminal(self) -> np.ndarray:
        return self.positions[-1]


# ---------------------------------------------------------------------------
# kernels


def _eval(b, t, x, strict):
    if strict:
        try:
            return b.evaluate(t, x)
        except SingularityError as exc:
            raise FlowIntegrationError(f"trajectory hit a singular point of the {b.kind} drift at t={t}", time=t) from exc
    return b.evaluate(t, x, on_singular="nan")


def integrate_forward(b: DriftField, B, dt, x, k0, k1, record=False, strict=False, displacement=False):
    """Forward Euler-Maruyama from knot k0 to k1.

    ``B`` holds knot values (n + 1, *batch, d). Returns the terminal points, or the
    stacked positions (k1 - k0 + 1, ...) when ``record`` is set. Trajectories that
    meet a singular point become NaN unless ``strict``. With ``displacement`` the
    accumulated drift displacement D is returned as well.
    """
    x = np.asarray(x, dtype=float)
    D = np.zeros(np.broadcast_shapes(x.shape, B[k0].shape))
    pos = x + (B[k0] - B[k0]) + D
    traj = [pos] if record else None
    for k in range(k0, k1):
        D = D + _eval(b, k * dt, pos, strict) * dt
        pos = x + (B[k + 1] - B[k0]) + D
        if record:
            traj.append(pos)
    out = np.stack(traj) if record else pos
    return (out, D) if displacement else out


def integrate_backward(b: DriftField, B, dt, y, k0, k1, record=False, strict=False, displacement=False):
    """Backward scheme Y_k = Y_{k+1} - b(t_{k+1}, Y_{k+1}) dt - (B_{k+1} - B_k), from k1 down to k0."""
    y = np.asarray(y, dtype=float)
    D = np.zeros(np.broadcast_shapes(y.shape, B[k1].shape))
    pos = y - (B[k1] - B[k1]) - D
    traj = [pos] if record else None
    for k in range(k1 - 1, k0 - 1, -1):
        D = D + _eval(b, (k + 1) * dt, pos, strict) * dt
        pos = y - (B[k1] - B[k]) - D
        if record:
            traj.append(pos)
    out = np.stack(traj) if record else pos
    return (out, D) if displacement else out


def backward_to_origin(b: DriftField, B, dt, y, knots: Sequence[int], strict=False):
    """Y_{0, t_j}(y) for several start knots j at once.

    All backward trajectories share the knot they currently sit on, so they are
    advanced together: a trajectory started at knot j joins the batch once the
    sweep reaches j. ``y`` has shape (m, d); ``B`` has shape (n + 1, d). Returns an
    array (len(knots), m, d) ordered like ``knots``.
    """
    y = np.asarray(y, dtype=float)
    order = np.argsort(knots, kind="stable")
    ks = np.asarray(knots)[order]
    kmax = int(ks[-1]) if len(ks) else 0
    D = np.zeros((len(ks),) + y.shape)
    Bk = B[ks][:, None, :]
    for k in range(kmax - 1, -1, -1):
        first = int(np.searchsorted(ks, k + 1))
        if first == len(ks):
            continue
        pos = y - (Bk[first:] - B[k + 1]) - D[first:]
        D[first:] += _eval(b, (k + 1) * dt, pos, strict) * dt
    out = y - (Bk - B[0]) - D
    result = np.empty_like(out)
    result[order] = out
    return result


# ---------------------------------------------------------------------------
# single-path operations


def _window(w: BrownianPath, s, t):
    if not 0 <= s <= t <= w.horizon * (1 + 1e-12):
        raise ValueError(f"need 0 <= s <= t <= T, got s={s}, t={t}")
    return w.knot(s), w.knot(t)


def forward_flow(b: DriftField, w: BrownianPath, x, s, t) -> FlowTrajectory:
    k0, k1 = _window(w, s, t)
    pos = integrate_forward(b, w.values, w.dt, x, k0, k1, record=True, strict=True)
    times = np.arange(k0, k1 + 1) * w.dt
    return FlowTrajectory("forward", np.asarray(x, dtype=float), s, t, times, pos, b, w)


def backward_flow(b: DriftField, w: BrownianPath, y, s, t) -> FlowTrajectory:
    k0, k1 = _window(w, s, t)
    pos = integrate_backward(b, w.values, w.dt, y, k0, k1, record=True, strict=True)
    times = np.arange(k1, k0 - 1, -1) * w.dt
    return FlowTrajectory("backward", np.asarray(y, dtype=float), s, t, times, pos, b, w)


def forward_map(b, w, x, s, t, strict=True):
    k0, k1 = _window(w, s, t)
    return integrate_forward(b, w.values, w.dt, x, k0, k1, strict=strict)


def backward_map(b, w, y, s, t, strict=True):
    k0, k1 = _window(w, s, t)
    return integrate_backward(b, w.values, w.dt, y, k0, k1, strict=strict)


def inverse_consistency(b: DriftField, w: BrownianPath, x, t):
    """|Y_{0,t}(X_{0,t}(x)) - x| on the shared path (vectorized over x).

    Since X = x + dB + D and Y(X) = X - dB - D', the defect is evaluated as
    |D - D'|, which avoids cancelling the noise in floating point.
    """
    x = np.asarray(x, dtype=float)
    k0, k1 = _window(w, 0.0, t)
    xt, D = integrate_forward(b, w.values, w.dt, x, k0, k1, strict=True, displacement=True)
    _, Db = integrate_backward(b, w.values, w.dt, xt, k0, k1, strict=True, displacement=True)
    err = np.linalg.norm(D - Db, axis=-1)
    return float(err) if err.ndim == 0 else err


class JacobianSample(NamedTuple):
    base_point: np.ndarray
    time: float
    matrix: np.ndarray
    determinant: np.ndarray


def _stencil(x, h):
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    E = np.eye(d) * h
    # (..., 2d, d): x + h e_0, ..., x + h e_{d-1}, x - h e_0, ...
    return np.concatenate([x[..., None, :] + E, x[..., None, :] - E], axis=-2)


def _fd_matrix(images, h, d):
    plus, minus = images[..., :d, :], images[..., d:, :]
    # column j holds the derivative along e_j
    return np.swapaxes((plus - minus) / (2 * h), -1, -2)


def jacobian(b: DriftField, w: BrownianPath, x, t, h=1e-4, direction="forward") -> JacobianSample:
    """Central-difference Jacobian of X_{0,t} (or Y_{0,t}) at x on the path w."""
    x = np.asarray(x, dtype=float)
    pts = _stencil(x, h)
    mapper = forward_map if direction == "forward" else backward_map
    images = mapper(b, w, pts, 0.0, t)
    M = _fd_matrix(images, h, x.shape[-1])
    return JacobianSample(x, t, M, np.linalg.det(M))


def jacobian_batch(b: DriftField, paths, x, t, h=1e-4, direction="forward"):
    """Jacobians over an ensemble of equally gridded paths; returns (matrices, failed mask).

    ``x`` is a single point (d,) or one point per path (R, d). Failed replicates
    (singular encounters) have NaN matrices.
    """
    w0 = paths[0]
    k = w0.knot(t)
    B = stack_values(paths)[:, :, None, :]
    x = np.broadcast_to(np.asarray(x, dtype=float), (len(paths), w0.dimension))
    pts = _stencil(x, h)
    if direction == "forward":
        images = integrate_forward(b, B, w0.dt, pts, 0, k)
    else:
        images = integrate_backward(b, B, w0.dt, pts, 0, k)
    M = _fd_matrix(images, h, w0.dimension)
    failed = ~np.isfinite(M).all(axis=(-1, -2))
    return M, failed


class MomentEstimate(NamedTuple):
    value: float
    replicates: int
    failed: int


def gradient_moment_estimate(
    b: DriftField,
    seeds,
    x,
    t,
    pmom=2.0,
    delta=None,
    T=1.0,
    n_steps=1024,
    h=1e-4,
    kernel_points=33,
) -> MomentEstimate:
    """Monte Carlo mean over seeds of |grad Y^delta_{0,t}(x)|_F^pmom.

    Each seed gives one path; the drift is mollified at ``delta`` when given.
    Replicates meeting a singular point are dropped and counted.
    """
    if pmom < 1:
        raise ValueError("moment order must be >= 1")
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("need at least two replicates")
    field_ = mollify_drift(b, MollifierKernel(delta, kernel_points)) if delta else b
    d = b.d
    paths = [sample_path(s, d, T, n_steps) for s in seeds]
    M, failed = jacobian_batch(field_, paths, x, t, h=h, direction="backward")
    norms = np.sqrt(np.sum(M[~failed] ** 2, axis=(-1, -2))) ** pmom
    if len(norms) == 0:
        raise FlowIntegrationError("every replicate failed")
    return MomentEstimate(float(np.mean(norms)), len(norms), int(failed.sum()))


def holder_quotient(b: DriftField, w: BrownianPath, points, t, alpha, direction="forward"):
    """max over pairs of |F(x) - F(x')| / |x - x'|^alpha for F = X_{0,t} or Y_{0,t}."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        raise ValueError("need at least two points")
    mapper = forward_map if direction == "forward" else backward_map
    images = mapper(b, w, points, 0.0, t)
    i, j = np.triu_indices(len(points), k=1)
    gaps = np.linalg.norm(points[i] - points[j], axis=-1)
    moved = np.linalg.norm(images[i] - images[j], axis=-1)
    keep = gaps > 0
    return float(np.max(moved[keep] / gaps[keep] ** alpha))


def semigroup_defect(b: DriftField, w: BrownianPath, x, s, u):
    """|X_{s,u}(X_{0,s}(x)) - X_{0,u}(x)| on the shared grid."""
    mid = forward_map(b, w, x, 0.0, s)
    return np.linalg.norm(forward_map(b, w, mid, s, u) - forward_map(b, w, x, 0.0, u), axis=-1)


def dump_trajectory_csv(traj: FlowTrajectory, filename) -> None:
    from .io import write_csv

    d = traj.positions.shape[-1]
    header = ["t"] + [f"x{i + 1}" for i in range(d)]
    pos = traj.positions.reshape(len(traj.times), -1, d)
    if pos.shape[1] != 1:
        raise ValueError("trajectory dump expects a single start point")
    rows = [[t, *p[0]] for t, p in zip(traj.times, pos)]
    write_csv(header, rows, filename)
