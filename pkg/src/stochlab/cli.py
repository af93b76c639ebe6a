"""Command-line front end.

Exit codes: 0 when a study passes (or only reports), 1 when its assertion
fails, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io as sio
from .brownian import dump_path_csv, sample_path
from .config import SCHEMA, ConfigError, RunConfig, load_config
from .drift import LpsExponents, lps_index, lps_satisfied
from .experiments import ExperimentConfig, StudyResult, build_datum, build_drift, run_study, write_config_echo
from .flow import backward_flow, dump_trajectory_csv, forward_flow, inverse_consistency, jacobian
from .plotting import write_svg_plot
from .transport import evaluate_solution, representation_solution

STUDY_COMMANDS = {
    "residual": "residual",
    "converge": "converge",
    "uniqueness": "uniqueness",
    "persistence": "persistence",
    "noise-compare": "noise_compare",
    "sharpness": "sharpness",
}
COMMANDS = ("lps-check", "flow", "solve", "stability", *STUDY_COMMANDS)


def _add_common(sp):
    sp.add_argument("--config", metavar="PATH", help="key = value configuration file")
    sp.add_argument("--out", metavar="DIR", help="output directory (default $STOCHLAB_OUT/<command>)")
    for key in SCHEMA:
        flag = "--" + key.replace("_", "-")
        sp.add_argument(flag, dest=f"set_{key}", metavar="VALUE", default=None, help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochlab", description="Stochastic transport laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)
    lps = sub.add_parser("lps-check", help="evaluate d/p + 2/q and the LPS condition")
    lps.add_argument("--d", type=int, required=True)
    lps.add_argument("--p", type=float, required=True)
    lps.add_argument("--q", type=float, required=True)
    helps = {
        "flow": "integrate one forward or backward characteristic",
        "solve": "evaluate the representation solution on a grid",
        "stability": "weak-star and strong stability in the initial data",
        "residual": "weak-form residuals under joint refinement",
        "converge": "strong convergence order of the flow scheme",
        "uniqueness": "mollified representation against the auxiliary construction",
        "persistence": "modulus of continuity of the solution",
        "noise-compare": "mollification sensitivity with and without noise",
        "sharpness": "uniqueness protocol at boundary exponents (exploratory)",
    }
    for name, text in helps.items():
        _add_common(sub.add_parser(name, help=text))
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for key in SCHEMA:
        value = getattr(args, f"set_{key}")
        if value is not None:
            cfg = cfg.override(key, value)
    if cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1", key="workers")
    return cfg


def _out_dir(args, command):
    if args.out:
        return args.out
    return os.path.join(os.environ.get("STOCHLAB_OUT", "stochlab-out"), command)


def _status(res: StudyResult):
    if res.passed is None:
        return "EXPLORATORY" if res.flags.get("EXPLORATORY") else "REPORT"
    return "PASS" if res.passed else "FAIL"


def _cmd_lps(args):
    e = LpsExponents(args.d, args.p, args.q)
    print(f"index={lps_index(e):.6f} satisfied={'true' if lps_satisfied(e) else 'false'}")
    return 0


def _cmd_flow(cfg, out):
    b = build_drift(cfg)
    w = sample_path(cfg["seed"], cfg["d"], cfg["T"], cfg["n_steps"])
    x = np.asarray(cfg["x"], dtype=float)
    direction = cfg["direction"]
    if direction not in ("forward", "backward"):
        raise ConfigError("direction must be forward or backward", key="direction")
    traj = (forward_flow if direction == "forward" else backward_flow)(b, w, x, 0.0, cfg["t"])
    J = jacobian(b, w, x, cfg["t"], h=cfg["h"], direction=direction)
    sio.ensure_dir(out)
    dump_trajectory_csv(traj, os.path.join(out, "trajectory.csv"))
    dump_path_csv(w, os.path.join(out, "path.csv"))
    write_svg_plot([("trajectory", traj.positions[:, 0], traj.positions[:, 1])], os.path.join(out, "trajectory.svg"),
                   xlabel="x1", ylabel="x2")
    summary = {
        "direction": direction,
        "start": x,
        "terminal": traj.terminal,
        "jacobian": J.matrix,
        "determinant": float(J.determinant),
        "inverse_consistency": inverse_consistency(b, w, x, cfg["t"]),
        "config": dict(sorted(cfg.values.items())),
    }
    sio.write_json(summary, os.path.join(out, "flow.json"))
    write_config_echo(cfg, out)
    print(f"flow: terminal={traj.terminal.tolist()} det={float(J.determinant):.6f} (out={out})")
    return 0


def _cmd_solve(cfg, out):
    b = build_drift(cfg)
    u0 = build_datum(cfg)
    w = sample_path(cfg["seed"], cfg["d"], cfg["T"], cfg["n_steps"])
    ws = representation_solution(b, w, u0)
    c = np.asarray(cfg["datum_center"])
    r = 2.0 * cfg["datum_radius"]
    g = np.linspace(-r, r, cfg["nodes"])
    X = np.stack(np.meshgrid(c[0] + g, c[1] + g, indexing="ij"), axis=-1).reshape(-1, 2)
    u = evaluate_solution(ws, cfg["t"], X)
    sio.ensure_dir(out)
    sio.write_csv(["x1", "x2", "u"], [[p[0], p[1], v] for p, v in zip(X, u)], os.path.join(out, "solution.csv"))
    mid = cfg["nodes"] // 2
    line = u.reshape(cfg["nodes"], cfg["nodes"])[:, mid]
    write_svg_plot([(f"u(t={cfg['t']}) along x2={c[1] + g[mid]:.3g}", c[0] + g, line)], os.path.join(out, "solution.svg"),
                   xlabel="x1", ylabel="u")
    sio.write_json({"t": cfg["t"], "max": float(np.nanmax(u)), "min": float(np.nanmin(u)),
                    "sup_norm": u0.sup_norm, "config": dict(sorted(cfg.values.items()))},
                   os.path.join(out, "solve.json"))
    write_config_echo(cfg, out)
    print(f"solve: {len(u)} points, max={float(np.nanmax(u)):.6f} (out={out})")
    return 0


def _cmd_stability(cfg, out):
    weak = run_study(ExperimentConfig("stability_weak", cfg), workers=cfg["workers"], write=False)
    strong = run_study(ExperimentConfig("stability_strong", cfg), workers=cfg["workers"], write=False)
    merged = StudyResult("stability")
    merged.tables = {**weak.tables, **strong.tables}
    merged.figures = weak.figures + strong.figures
    merged.flags = {"weak": weak.summary(), "strong": strong.summary()}
    merged.passed = bool(weak.passed and strong.passed)
    merged.write(out, cfg)
    print(f"stability: {_status(merged)} (weak={_status(weak)}, strong={_status(strong)}, out={out})")
    return 0 if merged.passed else 1


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "lps-check":
        try:
            return _cmd_lps(args)
        except ValueError as exc:
            print(f"stochlab: {exc}", file=sys.stderr)
            return 2
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"stochlab: config error: {exc}", file=sys.stderr)
        return 2
    out = _out_dir(args, args.command)
    try:
        if args.command == "flow":
            return _cmd_flow(cfg, out)
        if args.command == "solve":
            return _cmd_solve(cfg, out)
        if args.command == "stability":
            return _cmd_stability(cfg, out)
        ec = ExperimentConfig(STUDY_COMMANDS[args.command], cfg, out)
        res = run_study(ec, workers=cfg["workers"])
    except (ConfigError, ValueError) as exc:
        print(f"stochlab: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"stochlab: {exc}", file=sys.stderr)
        return 2
    print(f"{ec.experiment}: {_status(res)} (out={out})")
    return 1 if res.passed is False else 0


def main(argv=None):
    sys.exit(run_command(argv))


if __name__ == "__main__":
    main()
