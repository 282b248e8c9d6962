"""Command-line front end.

    fuzzy-backstepping sim SCENARIO [--stride N] [--out DIR]
    fuzzy-backstepping feas SCENARIO --grid GRID [--out DIR]
    fuzzy-backstepping validate SCENARIO

Exit codes: 0 success, 2 configuration error, 3 barrier violation,
4 divergence, 5 empty feasible set.
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .errors import BarrierViolation, ConfigError, EmptyFeasibleSet, SimulationDiverged
from .feasibility import candidate_table, feasibility_search, verify_prerequisites
from .scenario import load_grid, load_scenario
from .sim import PositivityLost, check_constraints, lyapunov_surrogate, simulate

EXIT_OK, EXIT_CONFIG, EXIT_BARRIER, EXIT_DIVERGED, EXIT_EMPTY = 0, 2, 3, 4, 5

log = logging.getLogger("fuzzy_backstepping")


def csv_header(n):
    cols = ["t"] + [f"x{i}" for i in range(1, n + 1)] + [f"z{i}" for i in range(1, n + 2)]
    cols += ["u", "u_delayed", "chi", "v"] + [f"alpha{i}" for i in range(1, n + 1)]
    cols += [f"delta_hat{i}" for i in range(1, n + 1)] + [f"theta_hat{i}" for i in range(1, n + 1)] + ["Vs"]
    return cols


def trajectory_table(traj):
    """Rows matching :func:`csv_header`."""
    return np.column_stack([traj.t, traj.x, traj.z, traj.u, traj.u_delayed, traj.chi, traj.v, traj.alpha,
                            traj.delta_hat, traj.theta_hat, lyapunov_surrogate(traj)])


def write_csv(path, traj):
    np.savetxt(path, trajectory_table(traj), fmt="%.15g", delimiter=",", header=",".join(csv_header(traj.n)),
               comments="")


PLOT_TEMPLATE = '''"""Figures for {csv_name}; run with python after installing matplotlib."""
import sys

import matplotlib.pyplot as plt
import numpy as np

KC = {kc}
KB = {kb}
N = {n}

path = sys.argv[1] if len(sys.argv) > 1 else {csv_name!r}
d = np.genfromtxt(path, delimiter=",", names=True)
t = d["t"]


def band(ax, bound, label):
    ax.axhline(bound, color="r", ls="--", lw=0.8, label=label)
    ax.axhline(-bound, color="r", ls="--", lw=0.8)


fig, ax = plt.subplots()
ax.plot(t, d["x1"], label="y")
ax.plot(t, d["x1"] - d["z1"], "--", label="y_d")
band(ax, KC[0], "k_c1")
ax.set(xlabel="t [s]", title="output and reference")
ax.legend()
fig.savefig("fig1_tracking.png", dpi=150)

if N > 1:
    fig, ax = plt.subplots()
    ax.plot(t, d["x2"], label="x2")
    band(ax, KC[1], "k_c2")
    ax.set(xlabel="t [s]", title="state x2")
    ax.legend()
    fig.savefig("fig2_x2.png", dpi=150)

fig, axes = plt.subplots(N, 1, sharex=True, squeeze=False)
axes = axes[:, 0]
for i, ax in enumerate(axes):
    ax.plot(t, d[f"z{{i + 1}}"], label=f"z{{i + 1}}")
    band(ax, KB[i], f"k_b{{i + 1}}")
    ax.legend()
axes[-1].set_xlabel("t [s]")
fig.suptitle("tracking errors")
fig.savefig("fig3_errors.png", dpi=150)

fig, ax = plt.subplots()
ax.plot(t, d["v"])
ax.set(xlabel="t [s]", title="filter drive v")
fig.savefig("fig4_v.png", dpi=150)

fig, ax = plt.subplots()
ax.plot(t, d["u"], label="u(t)")
ax.plot(t, d["u_delayed"], "--", label="u(t - tau)")
ax.set(xlabel="t [s]", title="control input")
ax.legend()
fig.savefig("fig5_input.png", dpi=150)

fig, ax = plt.subplots()
for i in range(1, N + 1):
    ax.plot(t, d[f"delta_hat{{i}}"], label=f"delta_hat{{i}}")
    ax.plot(t, d[f"theta_hat{{i}}"], label=f"theta_hat{{i}}")
ax.set(xlabel="t [s]", title="adaptation states")
ax.legend()
fig.savefig("fig6_adaptation.png", dpi=150)

plt.show()
'''


def plot_script(csv_name, kc, kb):
    return PLOT_TEMPLATE.format(csv_name=csv_name, kc=[float(v) for v in kc], kb=[float(v) for v in kb],
                                n=len(kb))


def boundedness(traj, first=0.25, last=0.25):
    """Sup of ``|z_1|`` and ``V_s`` over the first and last fraction of the horizon."""
    T = traj.t[-1]
    early = traj.t <= first * T
    late = traj.t >= (1 - last) * T
    vs = lyapunov_surrogate(traj)
    e = np.abs(traj.z[:, 0])
    return {"sup_err_early": float(e[early].max()), "sup_err_late": float(e[late].max()),
            "sup_Vs_early": float(vs[early].max()), "sup_Vs_late": float(vs[late].max()),
            "Vs_finite": bool(np.all(np.isfinite(vs)))}


def _fail(code, message):
    print(message, file=sys.stderr)
    return code


def _config_error(exc):
    lines = [str(exc)] + [f"  - {p}" for p in exc.problems if p != str(exc)]
    return _fail(EXIT_CONFIG, "configuration error:\n" + "\n".join(lines) if len(lines) > 1
                 else f"configuration error: {exc}")


def cmd_sim(args):
    try:
        scen = load_scenario(args.scenario)
        if args.stride is not None:
            if args.stride < 1:
                raise ConfigError("--stride must be >= 1")
            scen.cfg.record_stride = args.stride
        start = time.perf_counter()
        traj = simulate(scen.cfg)
        elapsed = time.perf_counter() - start
    except ConfigError as exc:
        return _config_error(exc)
    except BarrierViolation as exc:
        return _fail(EXIT_BARRIER, f"barrier violation: index {exc.index} at t={exc.time:.6g} "
                                   f"(|z|={abs(exc.z):.6g}, k_b={exc.kb:.6g})")
    except (SimulationDiverged, PositivityLost) as exc:
        where = f" at t={exc.time:.6g}" if getattr(exc, "time", None) is not None else ""
        return _fail(EXIT_DIVERGED, f"divergence{where}: {exc}")

    out = Path(args.out) if args.out else scen.out_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg = scen.cfg
    csv_path = out / f"{scen.name}.csv"
    write_csv(csv_path, traj)
    report = check_constraints(traj, cfg.plant.constraint_bounds, cfg.gains.kb)
    prereq = verify_prerequisites(cfg, rho=report.rho[1:])
    bound = boundedness(traj)
    text = [f"scenario {scen.name}: T={cfg.T:g} s, h={cfg.h:g} s, tau={cfg.tau:g} s, runtime {elapsed:.2f} s",
            report.summary(), "prerequisites:"] + [f"  {line}" for line in prereq.lines()]
    text.append(f"|z1| sup first quarter {bound['sup_err_early']:.6g}, last quarter {bound['sup_err_late']:.6g}")
    text.append(f"Vs sup first quarter {bound['sup_Vs_early']:.6g}, last quarter {bound['sup_Vs_late']:.6g}")
    (out / f"{scen.name}_report.txt").write_text("\n".join(text) + "\n")
    payload = {"scenario": scen.name, "runtime_s": elapsed, "constraints": report.to_dict(),
               "prerequisites": prereq.to_dict(), "boundedness": bound}
    (out / f"{scen.name}_report.json").write_text(json.dumps(payload, indent=2) + "\n")
    (out / f"{scen.name}_plot.py").write_text(plot_script(csv_path.name, cfg.plant.constraint_bounds, cfg.gains.kb))
    print("\n".join(text))
    return EXIT_OK


def cmd_feas(args):
    try:
        scen = load_scenario(args.scenario)
        problem = load_grid(args.grid, scen)
    except ConfigError as exc:
        return _config_error(exc)
    out = Path(args.out) if args.out else scen.out_dir
    out.mkdir(parents=True, exist_ok=True)
    base_prereq = verify_prerequisites(scen.cfg)
    kb1_lines = base_prereq.lines()[:2]
    try:
        result = feasibility_search(problem)
    except ConfigError as exc:
        return _config_error(exc)
    except EmptyFeasibleSet as exc:
        (out / f"{scen.name}_feas.csv").write_text(candidate_table(problem.names, exc.log) + "\n")
        print("\n".join(kb1_lines))
        return _fail(EXIT_EMPTY, f"empty feasible set: tightest violated constraint {exc.tightest}")
    (out / f"{scen.name}_feas.csv").write_text(result.table() + "\n")
    (out / f"{scen.name}_feas.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    text = [result.table(), "", result.summary()]
    (out / f"{scen.name}_feas.txt").write_text("\n".join(text) + "\n")
    print("\n".join(text))
    return EXIT_OK


def cmd_validate(args):
    try:
        scen = load_scenario(args.scenario)
    except ConfigError as exc:
        return _config_error(exc)
    cfg = scen.cfg
    lam_default = 2.0 / cfg.tau
    lines = [f"scenario {scen.name}: ok",
             f"order n = {cfg.plant.n}, plant {cfg.plant.name}, k_c = {cfg.plant.constraint_bounds.tolist()}",
             f"lambda = {cfg.gains.lam:g} ({'given' if scen.lam_given else 'default'}), 2/tau = {lam_default:g}",
             f"A0 = {cfg.reference.A0:.6g}, sup|dy_d/dt| = {cfg.reference.A1:.6g}, C0 = {cfg.reference.C0:.6g}",
             f"m = tau/h = {cfg.m}, steps = {cfg.steps}",
             "FLS rules per level: " + ", ".join(str(b.N) for b in cfg.bases)]
    lines += verify_prerequisites(cfg).lines()
    print("\n".join(lines))
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", metavar="DIR", help="output directory (default: scenario out_dir)")
    common.add_argument("--stride", type=int, metavar="N", help="record every N-th step")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fuzzy-backstepping",
                                     description="Adaptive fuzzy backstepping simulation and gain search.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("sim", parents=[common], help="simulate a scenario and write CSV, reports and plot script")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_sim)
    p = sub.add_parser("feas", parents=[common], help="grid search for feasible design constants")
    p.add_argument("scenario")
    p.add_argument("--grid", required=True, help="grid file with candidate values")
    p.set_defaults(func=cmd_feas)
    p = sub.add_parser("validate", parents=[common], help="check a scenario without simulating")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
