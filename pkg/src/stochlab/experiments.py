"""Desk-scale studies built on the flow and transport layers.

Every study takes an :class:`ExperimentConfig` and returns a
:class:`StudyResult` with metric tables and a pass flag. Table rows carry the
master seed and the resolution they were measured at. Replicates are keyed by
(master seed, replicate index), so results do not depend on the worker count.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import io as sio
from .brownian import BrownianPath, refine, sample_path, stack_values
from .config import RunConfig
from .drift import (
    DriftField,
    LpsExponents,
    MollifierKernel,
    exponent_warnings,
    lps_index,
    lps_satisfied,
    make_drift,
    mollify_drift,
)
from .flow import backward_map, forward_map, integrate_forward
from .plotting import write_svg_plot
from .runner import run_chunks, run_items
from .transport import (
    QuadratureSpec,
    TestFunction,
    auxiliary_solution,
    enclosing_box,
    foot_points,
    frozen_candidate,
    lagrangian_pairing,
    make_datum,
    phi_battery,
    representation_solution,
    residual_battery,
    sequence_member,
)

EXPERIMENTS = (
    "converge",
    "residual",
    "uniqueness",
    "stability_weak",
    "stability_strong",
    "persistence",
    "noise_compare",
    "sharpness",
)


class StudyError(RuntimeError):
    """A study could not produce any usable measurement."""


@dataclass
class ExperimentConfig:
    experiment: str
    run: RunConfig = field(default_factory=RunConfig)
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.experiment in ("converge", "residual") and self.levels() < 2:
            raise ValueError("convergence-based experiments need at least two levels")

    def __getattr__(self, key):
        run = self.__dict__.get("run")
        if run is None:
            raise AttributeError(key)
        return getattr(run, key)

    def levels(self) -> int:
        if self.experiment == "converge":
            return self.run["level_max"] - self.run["level_min"] + 1
        return self.run["levels"]


@dataclass
class StudyResult:
    experiment: str
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    slopes: dict = field(default_factory=dict)
    passed: Optional[bool] = None
    flags: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    figures: list = field(default_factory=list)  # (filename, series, plot kwargs)

    def column(self, table, name):
        header, rows = self.tables[table]
        i = header.index(name)
        return [r[i] for r in rows]

    def summary(self) -> dict:
        return {
            "experiment": self.experiment,
            "passed": self.passed,
            "slopes": self.slopes,
            "flags": self.flags,
            "failures": self.failures,
        }

    def write(self, out_dir, cfg: Optional[RunConfig] = None) -> list:
        """Write study.json, one CSV per table and the figures; returns the file names."""
        sio.ensure_dir(out_dir)
        written = []
        for name, (header, rows) in sorted(self.tables.items()):
            sio.write_csv(header, rows, os.path.join(out_dir, f"{name}.csv"))
            written.append(f"{name}.csv")
        for filename, series, kwargs in self.figures:
            write_svg_plot(series, os.path.join(out_dir, filename), **kwargs)
            written.append(filename)
        payload = self.summary()
        if cfg is not None:
            payload["config"] = dict(sorted(cfg.values.items()))
            write_config_echo(cfg, out_dir)
            written.append("config.resolved")
        sio.write_json(payload, os.path.join(out_dir, "study.json"))
        written.append("study.json")
        return sorted(written)


def write_config_echo(cfg: RunConfig, out_dir) -> None:
    with open(os.path.join(out_dir, "config.resolved"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cfg.echo())


# ---------------------------------------------------------------------------
# builders


def build_drift(cfg: RunConfig, **overrides) -> DriftField:
    v = dict(cfg.values, **overrides)
    kind = v["drift"]
    params = {}
    if kind == "constant":
        params["c"] = v["c"]
    elif kind == "linear_skew":
        params["omega"] = v["omega"]
    elif kind == "shear":
        params.update(amplitude=v["shear_amplitude"], wavenumber=v["shear_wavenumber"], mean=v["shear_mean"])
    elif kind == "rotational_singular":
        params["alpha"] = v["alpha"]
    elif kind == "holder_rotational":
        params.update(beta=v["beta"], r0=v["r0"])
    exps = None
    if v["p"] > 0 and v["q"] > 0:
        exps = LpsExponents(v["d"], v["p"], v["q"])
    return make_drift(kind, d=v["d"], cutoff_radius=v["cutoff_radius"], exponents=exps, **params)


def build_datum(cfg: RunConfig):
    kind = cfg["datum"]
    if kind == "constant":
        return make_datum(kind, level=cfg["datum_level"])
    if kind == "indicator_halfspace":
        return make_datum(kind, normal=cfg["datum_normal"], offset=cfg["datum_offset"], level=cfg["datum_level"])
    return make_datum(kind, center=cfg["datum_center"], radius=cfg["datum_radius"], amplitude=cfg["datum_amplitude"])


def build_phis(cfg: RunConfig):
    return phi_battery(cfg["phi_count"], cfg["phi_ring"], cfg["phi_radius"], tuple(cfg["phi_center"]))


def build_quadrature(cfg: RunConfig, phis, nodes=None):
    return QuadratureSpec(enclosing_box(phis), nodes or cfg["nodes"])


def _path(cfg: RunConfig, replicate, n=None):
    return sample_path(cfg["seed"], cfg["d"], cfg["T"], n or cfg["n_steps"], replicate=replicate)


def _mollified(b, delta, cfg):
    field_ = mollify_drift(b, MollifierKernel(delta, cfg["kernel_points"]))
    field_.evaluate(0.0, np.zeros((1, b.d)) + 0.5)  # build lookup tables before threads share the field
    return field_


def _fit_slope(x, y):
    return float(np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)[0])


def _non_increasing(seq, tol=0.0):
    return all(b <= a + tol for a, b in zip(seq, seq[1:]))


# ---------------------------------------------------------------------------
# convergence of the flow discretization


def convergence_study(ec: ExperimentConfig, workers=1) -> StudyResult:
    """Strong error of the terminal forward flow against a finer level on bridge-refined paths."""
    cfg = ec.run
    b = build_drift(cfg)
    lo, hi, extra = cfg["level_min"], cfg["level_max"], cfg["reference_levels"]
    if hi - lo + 1 < 2:
        raise ValueError("need at least two levels")
    x0 = np.asarray(cfg["x"], dtype=float)
    ref_level = hi + extra

    def chunk(reps):
        base = [sample_path(cfg["seed"], cfg["d"], cfg["T"], 2**lo, replicate=r) for r in reps]
        levels = {lo: base}
        cur = base
        for lev in range(lo + 1, ref_level + 1):
            cur = [refine(p) for p in cur]
            levels[lev] = cur
        ends = {}
        for lev in list(range(lo, hi + 1)) + [ref_level]:
            paths = levels[lev]
            B = stack_values(paths)
            ends[lev] = integrate_forward(b, B, paths[0].dt, x0, 0, paths[0].n_steps)
        errs = np.stack([np.linalg.norm(ends[lev] - ends[ref_level], axis=-1) for lev in range(lo, hi + 1)], axis=1)
        return list(errs)

    errs = np.array(run_chunks(chunk, range(cfg["replicates"]), workers))
    ok = np.isfinite(errs).all(axis=1)
    if not ok.any():
        raise StudyError("every replicate failed")
    errs = errs[ok]
    mean = errs.mean(axis=0)
    levels = np.arange(lo, hi + 1)
    dts = cfg["T"] / 2.0**levels
    res = StudyResult("converge")
    rows = [[int(lev), 2**int(lev), float(dt), float(m), int(ok.sum()), int((~ok).sum()), cfg["seed"]]
            for lev, dt, m in zip(levels, dts, mean)]
    res.tables["convergence"] = (["level", "n_steps", "dt", "mean_error", "replicates", "failed", "seed"], rows)
    res.failures["replicates"] = int((~ok).sum())
    if np.all(mean == 0):
        res.flags["exact"] = True
        res.slopes["strong_order"] = None
        res.passed = True
    elif np.any(mean <= 0):
        res.flags["exact"] = False
        res.slopes["strong_order"] = None
        res.passed = bool(np.max(mean) < 1e-12)
    else:
        slope = _fit_slope(np.log2(dts), np.log2(mean))
        res.slopes["strong_order"] = slope
        res.flags["exact"] = False
        res.passed = cfg["slope_min"] <= slope <= cfg["slope_max"]
        res.figures.append(("convergence.svg", [("mean |X - X_ref|", dts, mean)],
                            dict(logx=True, logy=True, xlabel="dt", ylabel="strong error")))
    res.flags["reference_level"] = int(ref_level)
    return res


# ---------------------------------------------------------------------------
# weak residual


RESIDUAL_HEADER = ["phi_id", "t", "pairing_t", "pairing_0", "drift_term", "strat_term", "residual", "nodes", "steps", "seed"]


def residual_study(ec: ExperimentConfig, workers=1) -> StudyResult:
    """Weak residuals of the representation solution and of the frozen control under joint refinement.

    Level l uses (nodes - 1) 2^l + 1 quadrature nodes per axis and the l-fold
    bridge refinement of each base path.
    """
    cfg = ec.run
    b = build_drift(cfg)
    u0 = build_datum(cfg)
    phis = build_phis(cfg)
    t = cfg["t"]

    def one(rep):
        path = _path(cfg, rep)
        out = []
        for lev in range(cfg["levels"]):
            quad = build_quadrature(cfg, phis, (cfg["nodes"] - 1) * 2**lev + 1)
            genuine = residual_battery(representation_solution(b, path, u0), phis, t, quad)
            frozen = residual_battery(frozen_candidate(b, path, u0), phis, t, quad)
            out.append((lev, path.n_steps, quad.nodes_per_axis, genuine, frozen))
            path = refine(path)
        return out

    per_rep = run_items(one, range(cfg["paths"]), workers)
    detail, summary = [], []
    rms_g, rms_f = [], []
    for lev in range(cfg["levels"]):
        g_all, f_all = [], []
        for rep, levels in enumerate(per_rep):
            _, steps, nodes, genuine, frozen = levels[lev]
            for i, r in enumerate(genuine):
                detail.append([i, t, r.pairing_t, r.pairing_0, r.drift_term, r.strat_term, r.residual,
                               nodes, steps, cfg["seed"]])
            g_all += [r.residual for r in genuine]
            f_all += [r.residual for r in frozen]
        rg = math.sqrt(float(np.mean(np.square(g_all))))
        rf = math.sqrt(float(np.mean(np.square(f_all))))
        rms_g.append(rg)
        rms_f.append(rf)
        summary.append([lev, steps, nodes, rg, rf, cfg["paths"], cfg["seed"]])
    res = StudyResult("residual")
    res.tables["residuals"] = (RESIDUAL_HEADER, detail)
    res.tables["residual_levels"] = (["level", "steps", "nodes", "rms_residual", "rms_frozen", "paths", "seed"], summary)
    monotone = all(b_ < a for a, b_ in zip(rms_g, rms_g[1:]))
    separated = rms_g[-1] <= cfg["residual_ratio"] * rms_f[-1]
    res.flags.update(monotone=monotone, separated=separated)
    res.passed = bool(monotone and separated)
    dts = [cfg["T"] / s[1] for s in summary]
    res.figures.append(("residuals.svg", [("representation", dts, rms_g), ("frozen control", dts, rms_f)],
                        dict(logx=True, logy=True, xlabel="dt", ylabel="rms weak residual")))
    return res


# ---------------------------------------------------------------------------
# uniqueness: mollified representation against the auxiliary construction


def _discrepancy_table(cfg, b, label, workers):
    """Per-seed max pairing discrepancy (normalized) between the two constructions, per delta."""
    if not b.divergence_free:
        raise ValueError("uniqueness probe needs a divergence-free drift")
    u0 = build_datum(cfg)
    phis = build_phis(cfg)
    quad = build_quadrature(cfg, phis)
    nodes, wq = quad.nodes()
    weights = np.stack([wq * phi(nodes) for phi in phis], axis=1)  # (m, n_phi)
    scale = u0.sup_norm * max(phi.abs_integral() for phi in phis)
    deltas = cfg["deltas"]
    fields = [_mollified(b, dl, cfg) for dl in deltas]
    times = cfg["times"]

    def one(rep):
        path = _path(cfg, rep)
        ks = [path.knot(t) for t in times]
        aux = auxiliary_solution(b, path, u0)
        Pa = u0(foot_points(aux, ks, nodes)) @ weights  # (times, n_phi)
        out = []
        for bd in fields:
            Pr = u0(foot_points(representation_solution(bd, path, u0), ks, nodes)) @ weights
            out.append(float(np.max(np.abs(Pr - Pa))) / scale)
        return out, aux.fallback_steps

    per_rep = run_items(one, range(cfg["paths"]), workers)
    rows, agg = [], []
    for j, dl in enumerate(deltas):
        vals = [r[0][j] for r in per_rep]
        for rep, v in enumerate(vals):
            rows.append([dl, rep, v, cfg["n_steps"], quad.nodes_per_axis, cfg["seed"]])
        agg.append([dl, float(np.mean(vals)), float(np.max(vals)), cfg["paths"], cfg["n_steps"],
                    quad.nodes_per_axis, cfg["seed"]])
    res = StudyResult(label)
    res.tables["discrepancy"] = (["delta", "replicate", "discrepancy", "n_steps", "nodes", "seed"], rows)
    res.tables["discrepancy_mean"] = (["delta", "mean", "max", "paths", "n_steps", "nodes", "seed"], agg)
    res.failures["fixed_point_fallbacks"] = int(sum(r[1] for r in per_rep))
    res.figures.append(("discrepancy.svg", [("mean over paths", deltas, [a[1] for a in agg]),
                                            ("max over paths", deltas, [a[2] for a in agg])],
                        dict(logx=True, logy=True, xlabel="delta", ylabel="normalized pairing discrepancy")))
    return res, [a[1] for a in agg]


def uniqueness_probe(ec: ExperimentConfig, workers=1) -> StudyResult:
    cfg = ec.run
    b = build_drift(cfg)
    res, means = _discrepancy_table(cfg, b, "uniqueness", workers)
    for msg in exponent_warnings(b):
        res.flags.setdefault("warnings", []).append(msg)
    res.flags["lps_index"] = lps_index(b.exponents)
    res.flags["lps_satisfied"] = lps_satisfied(b.exponents)
    res.flags["non_increasing"] = _non_increasing(means, cfg["noise_tol"])
    res.flags["final"] = means[-1]
    res.passed = bool(res.flags["non_increasing"] and means[-1] <= cfg["final_tol"])
    return res


def sharpness_probe(ec: ExperimentConfig, workers=1) -> StudyResult:
    """The uniqueness protocol at exponents on the boundary d/p + 2/q = 1; measurement only."""
    cfg = ec.run
    b = build_drift(cfg)
    res, means = _discrepancy_table(cfg, b, "sharpness", workers)
    res.flags.update(EXPLORATORY=True, lps_index=lps_index(b.exponents), lps_satisfied=lps_satisfied(b.exponents),
                     p=b.exponents.p, q=b.exponents.q)
    res.passed = None
    return res


# ---------------------------------------------------------------------------
# stability in the initial data


def _sequence(cfg, mode, n):
    base = build_datum(cfg)
    return sequence_member(base, n, mode)


def stability_weak(ec: ExperimentConfig, workers=1) -> StudyResult:
    """|<u^n(t) - u(t), phi>| along a datum sequence, evaluated on the initial-data side.

    With a unit-Jacobian flow, <u(t), phi> = int u0(x) phi(X_{0,t}(x)) dx, so one
    forward map per path serves every member of the sequence.
    """
    cfg = ec.run
    b = build_drift(cfg)
    phis = build_phis(cfg)
    ns = cfg["ns"]
    mode = cfg["sequence"]
    t = cfg["t"]
    support = TestFunction(tuple(cfg["datum_center"]), cfg["datum_radius"])

    def quadrature(path):
        # the integrand lives where the datum and the preimage of supp(phi) meet;
        # shifted balls cover that preimage for bounded drift displacement
        shift = path.values[path.knot(t)]
        moved = [TestFunction(tuple(np.asarray(p.center) - shift), p.radius) for p in phis]
        return QuadratureSpec(enclosing_box([support] + moved, margin=0.5), 2 * cfg["nodes"] - 1)

    def one(rep):
        path = _path(cfg, rep)
        quad = quadrature(path)
        nodes, _ = quad.nodes()
        images = forward_map(b, path, nodes, 0.0, t, strict=False)
        out = []
        for n in ns:
            member = _sequence(cfg, mode, n)
            limit = member.limit()
            diffs = [abs(lagrangian_pairing(b, path, member, phi, t, quad, images)
                         - lagrangian_pairing(b, path, limit, phi, t, quad, images)) for phi in phis]
            out.append(max(diffs))
        return out

    per_rep = run_items(one, range(cfg["paths"]), workers)
    rows, agg = [], []
    for j, n in enumerate(ns):
        for rep, vals in enumerate(per_rep):
            rows.append([n, rep, t, vals[j], 2 * cfg["nodes"] - 1, cfg["n_steps"], cfg["seed"]])
        agg.append(float(np.mean([vals[j] for vals in per_rep])))
    res = StudyResult("stability_weak")
    res.tables["weak_pairing"] = (["n", "replicate", "t", "abs_difference", "nodes", "n_steps", "seed"], rows)
    res.tables["weak_pairing_mean"] = (["n", "mean_abs_difference", "paths", "seed"],
                                       [[n, a, cfg["paths"], cfg["seed"]] for n, a in zip(ns, agg)])
    if agg[0] == 0:
        res.flags["exact"] = True
        res.passed = all(a == 0 for a in agg)
    else:
        res.flags["decreasing"] = all(b_ < a for a, b_ in zip(agg, agg[1:]))
        res.flags["final_ratio"] = agg[-1] / agg[0]
        res.passed = bool(res.flags["decreasing"] and agg[-1] <= cfg["decay_factor"] * agg[0])
        res.figures.append(("weak_pairing.svg", [("mean |pairing difference|", ns, agg)],
                            dict(logx=True, logy=True, xlabel="n", ylabel="|<u^n - u, phi>|")))
    return res


def stability_strong(ec: ExperimentConfig, workers=1) -> StudyResult:
    """Sampled sup |u^n(t) - u(t)| against sup |u0^n - u0| at every sampled time.

    Both solutions share the backward characteristics, so the sampled difference is
    (u0^n - u0) composed with Y_{0,t}; the bound is checked with zero tolerance.
    """
    cfg = ec.run
    b = build_drift(cfg)
    ns = cfg["ns"]
    mode = cfg["strong_sequence"]
    rng = np.random.default_rng(np.random.SeedSequence([cfg["seed"], 0x5AB]))
    c = np.asarray(cfg["datum_center"])
    pts = c + rng.uniform(-1.5, 1.5, (cfg["points"], cfg["d"])) * cfg["datum_radius"]
    times = cfg["times"]

    def one(rep):
        path = _path(cfg, rep)
        ks = [path.knot(t) for t in times]
        feet = foot_points(representation_solution(b, path, build_datum(cfg)), ks, pts)
        out = []
        for n in ns:
            member = _sequence(cfg, mode, n)
            lim = member.limit()
            for t, f in zip(times, feet):
                ok = np.isfinite(f).all(axis=-1)
                linear = float(np.max(np.abs(member.difference(f[ok]))))
                direct = float(np.max(np.abs(member(f[ok]) - lim(f[ok]))))
                out.append((n, t, linear, direct, member.sup_distance(), int((~ok).sum())))
        return out

    per_rep = run_items(one, range(cfg["paths"]), workers)
    rows = []
    holds = True
    for rep, recs in enumerate(per_rep):
        for n, t, linear, direct, bound, failed in recs:
            holds &= linear <= bound
            rows.append([n, t, rep, linear, direct, bound, linear == bound, failed, cfg["points"], cfg["n_steps"], cfg["seed"]])
    res = StudyResult("stability_strong")
    res.tables["strong_sup"] = (["n", "t", "replicate", "sampled_sup", "direct_sup", "bound", "equality", "failed",
                                 "points", "n_steps", "seed"], rows)
    res.flags["mode"] = mode
    res.flags["max_direct_excess"] = max(r[4] - r[5] for r in rows)
    res.failures["points"] = sum(r[7] for r in rows)
    res.passed = bool(holds)
    return res


# ---------------------------------------------------------------------------
# persistence of continuity


def persistence_probe(ec: ExperimentConfig, workers=1) -> StudyResult:
    """Binned modulus of x -> u(t, x) against Lip(u0) * H * gap^alpha.

    H is the Holder quotient of the backward map Y_{0,t} measured on the same
    cloud, so the bound holds pair by pair up to rounding.
    """
    cfg = ec.run
    b = build_drift(cfg)
    u0 = build_datum(cfg)
    lip = u0.lipschitz
    if lip is None:
        raise ValueError("persistence probe needs a continuous datum")
    alpha = cfg["holder_alpha"]
    if not 0 < alpha < 1:
        raise ValueError("holder_alpha must lie in (0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([cfg["seed"], 0x9E5]))
    c = np.asarray(cfg["datum_center"])
    pts = c + rng.uniform(-1.0, 1.0, (cfg["points"], cfg["d"])) * cfg["datum_radius"]
    t = cfg["t"]
    edges = np.geomspace(1e-3, 4.0 * cfg["datum_radius"], 13)

    def one(rep):
        path = _path(cfg, rep)
        img = backward_map(b, path, pts, 0.0, t, strict=False)
        ok = np.isfinite(img).all(axis=-1)
        p, y = pts[ok], img[ok]
        i, j = np.triu_indices(len(p), k=1)
        gaps = np.linalg.norm(p[i] - p[j], axis=-1)
        moved = np.linalg.norm(y[i] - y[j], axis=-1)
        H = float(np.max(moved / gaps**alpha))
        u = u0(y)
        du = np.abs(u[i] - u[j])
        d0 = np.abs(u0(p)[i] - u0(p)[j])
        out = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            sel = (gaps >= lo) & (gaps < hi)
            if not sel.any():
                continue
            mod = float(du[sel].max())
            bound = lip * H * float(gaps[sel].max()) ** alpha
            out.append((float(lo), float(hi), int(sel.sum()), mod, float(d0[sel].max()), bound))
        return H, int((~ok).sum()), out

    per_rep = run_items(one, range(cfg["paths"]), workers)
    rows, holds = [], True
    for rep, (H, failed, bins) in enumerate(per_rep):
        for lo, hi, count, mod, mod0, bound in bins:
            ok = mod <= bound * (1 + 1e-9)
            holds &= ok
            rows.append([rep, t, lo, hi, count, mod, mod0, H, bound, ok, cfg["n_steps"], cfg["seed"]])
    res = StudyResult("persistence")
    res.tables["modulus"] = (["replicate", "t", "gap_lo", "gap_hi", "pairs", "modulus", "datum_modulus",
                              "holder_quotient", "bound", "within_bound", "n_steps", "seed"], rows)
    res.failures["points"] = sum(r[1] for r in per_rep)
    res.flags["lipschitz"] = lip
    res.flags["alpha"] = alpha
    res.passed = bool(holds)
    first = [r for r in rows if r[0] == 0]
    if len(first) >= 2:
        mids = [math.sqrt(r[2] * r[3]) for r in first]
        res.figures.append(("modulus.svg", [("u(t)", mids, [r[5] for r in first]), ("u0", mids, [r[6] for r in first]),
                                            ("bound", mids, [r[8] for r in first])],
                            dict(logx=True, logy=True, xlabel="gap", ylabel="modulus of continuity")))
    return res


# ---------------------------------------------------------------------------
# deterministic against stochastic flows


def noise_compare(ec: ExperimentConfig, workers=1) -> StudyResult:
    """Terminal sensitivity of the forward flow to the mollification level, with and without noise.

    Start points sit on a small circle around the singular point. For each regime the
    discrepancy between consecutive delta levels is the median over start points
    (and over paths in the stochastic regime).
    """
    cfg = ec.run
    b = build_drift(cfg)
    deltas = cfg["deltas"]
    fields = [_mollified(b, dl, cfg) for dl in deltas]
    center = np.asarray(b.singular_points[0]) if b.singular_points else np.zeros(cfg["d"])
    ang = 2 * np.pi * np.arange(8) / 8
    starts = center + cfg["start_radius"] * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    T, n = cfg["T"], cfg["n_steps"]

    def terminal(paths):
        B = stack_values(paths)[:, :, None, :]
        return [integrate_forward(f, B, paths[0].dt, starts, 0, n) for f in fields]

    det = terminal([BrownianPath.zeros(cfg["d"], T, n)])
    det_gap = [float(np.nanmedian(np.linalg.norm(a - c, axis=-1))) for a, c in zip(det, det[1:])]

    def chunk(reps):
        ends = terminal([_path(cfg, r) for r in reps])
        return list(np.stack([np.linalg.norm(a - c, axis=-1) for a, c in zip(ends, ends[1:])], axis=1))

    gaps = np.array(run_chunks(chunk, range(cfg["replicates"]), workers))  # (R, levels - 1, starts)
    sto_gap = [float(np.nanmedian(gaps[:, j])) for j in range(len(deltas) - 1)]
    rows = [[deltas[j], deltas[j + 1], det_gap[j], sto_gap[j], cfg["replicates"], n, cfg["seed"]]
            for j in range(len(deltas) - 1)]
    res = StudyResult("noise_compare")
    res.tables["delta_sensitivity"] = (["delta_a", "delta_b", "deterministic", "stochastic_median", "replicates",
                                        "n_steps", "seed"], rows)
    res.failures["replicates"] = int(np.isnan(gaps).any(axis=(1, 2)).sum())
    res.flags["deterministic_floor"] = min(det_gap) if det_gap else None
    res.passed = all(b_ <= a for a, b_ in zip(sto_gap, sto_gap[1:]))
    res.figures.append(("delta_sensitivity.svg", [("deterministic", deltas[1:], det_gap),
                                                  ("stochastic median", deltas[1:], sto_gap)],
                        dict(logx=True, logy=True, xlabel="finer delta", ylabel="terminal discrepancy")))
    return res


STUDIES = {
    "converge": convergence_study,
    "residual": residual_study,
    "uniqueness": uniqueness_probe,
    "stability_weak": stability_weak,
    "stability_strong": stability_strong,
    "persistence": persistence_probe,
    "noise_compare": noise_compare,
    "sharpness": sharpness_probe,
}


def run_study(ec: ExperimentConfig, workers=1, write=True) -> StudyResult:
    res = STUDIES[ec.experiment](ec, workers=workers)
    if write and ec.out_dir:
        res.write(ec.out_dir, ec.run)
    return res
