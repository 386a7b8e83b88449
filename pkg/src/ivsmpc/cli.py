"""Command-line entry point: ``ivsmpc {synth,solve,simulate,report}``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .controller import ControllerState, step_icsmpc, step_ivsmpc
from .errors import InfeasibleAtStart, ProblemFileError, SMPCError, SolverFailure
from .mcsim import SCHEMES, build_report, read_traces, simulate, write_traces
from .model import TIGHTENINGS, kappa
from .problem import (bundled_problem_path, load_artifact, load_problem, riccati_residual,
                      synthesis_artifact, write_artifact)
from .svgplot import PALETTE, Figure

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 2, 3, 4


def _load(args):
    problem = load_problem(args.config or bundled_problem_path())
    gains = terminal_sets = None
    if getattr(args, "synth", None):
        gains, terminal_sets = load_artifact(args.synth)
    return problem, gains, terminal_sets


def _vector(text, n, name):
    try:
        v = np.array([float(s) for s in text.replace(" ", "").split(",") if s], dtype=float)
    except ValueError as exc:
        raise ProblemFileError(f"--{name}: {exc}") from exc
    if v.size != n:
        raise ProblemFileError(f"--{name}: expected {n} comma-separated numbers, got {v.size}")
    return v


def cmd_synth(args):
    problem, _, _ = _load(args)
    gains = problem.synthesize()
    sets = {s: problem.terminal_set(gains, s) for s in ("ivsmpc", "icsmpc")}
    record = synthesis_artifact(problem, gains, sets)
    record["residuals"]["riccati"] = riccati_residual(problem.sys, gains)
    out = Path(args.out or "synth.json")
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "synth.json"
    write_artifact(out, record)
    np.set_printoptions(precision=6, suppress=False)
    print(f"K = {gains.k.tolist()}")
    print(f"ell_ss = {gains.ell_ss:.10g}")
    for name, value in record["residuals"].items():
        print(f"residual {name}: {value:.3e}")
    for name, p in sets.items():
        print(f"terminal set ({name}): {p.n_rows} rows")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_solve(args):
    problem, gains, sets = _load(args)
    if args.scheme == "lqr":
        raise ProblemFileError("solve needs an MPC scheme (ivsmpc or icsmpc)")
    setup = problem.setup(args.scheme, args.tightening, gains, sets)
    n = problem.sys.n_x
    x = _vector(args.x, n, "x") if args.x else np.asarray(problem.sim.get("x0", np.zeros(n)))
    state = ControllerState.initial(x, setup.gains)
    if args.z1_prev:
        state.z1_prev = _vector(args.z1_prev, n, "z1-prev")
        state.t = 1
    stepper = step_ivsmpc if args.scheme == "ivsmpc" else step_icsmpc
    u, _, sol = stepper(setup.ocp, state, x)
    out = {
        "scheme": args.scheme,
        "tightening": setup.ocp.tightening,
        "kappa": [kappa(c.rho, setup.ocp.tightening) for c in problem.constraints],
        "x": x.tolist(),
        "u": u.tolist(),
        "xi": sol.xi,
        "cost": sol.cost,
        "v": sol.v.tolist(),
        "z": sol.z.tolist(),
        "ve_diag": [np.diag(v).tolist() for v in sol.ve],
        "slacks": [[None if math.isnan(s) else s for s in row] for row in sol.slacks],
        "status": sol.solver_stats["status"],
        "outer_iterations": sol.solver_stats["outer_iterations"],
    }
    text = json.dumps(out, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _summary_line(rep):
    med = rep.xi_quantiles["values"][1] if rep.xi_quantiles["values"] else []
    med_txt = " ".join("-" if m is None or math.isnan(m) else f"{m:.2f}" for m in med[:10])
    return (f"{rep.scheme:7s} avg_cost={rep.avg_cost:10.3f} ratio={rep.cost_ratio:.4f} "
            f"max_violation={max(rep.max_violation, default=0.0):.4f} "
            f"active_streak={rep.active_streak['length']}@{rep.active_streak['start']} "
            f"longrun={rep.longrun_stage_avg:.4f} (ell_ss={rep.ell_ss:.4f}) "
            f"median_xi[:10]={med_txt}")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


def _clean(obj):
    # JSON has no NaN; write null instead
    if isinstance(obj, float):
        return None if math.isnan(obj) or math.isinf(obj) else obj
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def cmd_simulate(args):
    problem, gains, sets = _load(args)
    setup = problem.setup(args.scheme, args.tightening, gains, sets)
    config = problem.sim_config(args.scheme, args.steps, args.runs, args.seed)
    out = Path(args.out or f"out_{args.scheme}")
    out.mkdir(parents=True, exist_ok=True)
    try:
        traces = simulate(setup, config, args.workers)
    except SolverFailure as exc:
        if exc.dump:
            (out / "failure_dump.json").write_text(exc.dump)
        raise
    lqr_traces = traces
    if args.scheme != "lqr":
        lqr_setup = problem.setup("lqr", gains=setup.gains)
        lqr_cfg = problem.sim_config("lqr", config.steps, config.runs, config.seed)
        lqr_traces = simulate(lqr_setup, lqr_cfg, 1)
    report = build_report(traces, config, setup.gains, problem.constraints, lqr_traces)
    with open(out / "traces.csv", "w", newline="") as fh:
        write_traces(traces, fh)
    (out / "report.json").write_text(json.dumps(_clean(report.to_dict()), indent=1,
                                                default=_json_default) + "\n")
    print(_summary_line(report))
    print(f"wrote {out / 'traces.csv'} and {out / 'report.json'}")
    return EXIT_OK


def _phase_plot(runs, d_lines):
    xs = np.concatenate([np.array(r["report"]["mean_trajectory"])[:, 0] for r in runs])
    ys = np.concatenate([np.array(r["report"]["mean_trajectory"])[:, 1] for r in runs])
    xlim = (min(xs.min(), 0.0) - 0.5, max(xs.max(), *d_lines, 0.0) + 0.5)
    ylim = (min(ys.min(), 0.0) - 1.0, ys.max() + 1.0)
    fig = Figure(xlim, ylim, title="Mean closed-loop response, 90% ellipses",
                 xlabel="x1", ylabel="x2")
    for d in d_lines:
        fig.rect(d, ylim[0], xlim[1], ylim[1])
    for i, r in enumerate(runs):
        rep = r["report"]
        color = PALETTE[i % len(PALETTE)]
        mean = np.array(rep["mean_trajectory"])
        fig.line(mean[:, 0], mean[:, 1], color=color, label=rep["scheme"])
        fig.scatter(mean[:, 0], mean[:, 1], color=color, r=1.5)
        for e in rep["ellipses"][::5]:
            if e is not None:
                fig.ellipse(e["mean"], e["cov"], e["radius"], color=color, width=0.7)
    return fig


def _ecdf_plot(rep, d):
    fig = Figure((0.0, 3.0), (0.0, 1.0), reverse_x=True, xlabel="x1(t+1)", ylabel="eCDF",
                 title=f"{rep['scheme']}: P(x1(t+1) | xi(t) < xi_bar, t < {rep['t_condition']})")
    fig.rect(d, 0.1, 3.0, 1.0)
    for i, e in enumerate(rep["ecdf"]):
        label = f"xi_bar={e['xi_bar']:.3g} (n={e['samples']})"
        if not e["samples"]:
            fig.notice(f"xi_bar={e['xi_bar']:.3g}: no samples, omitted")
            continue
        fig.line(e["grid"], e["values"], color=PALETTE[i % len(PALETTE)], label=label)
    return fig


def _xi_plot(runs):
    steps = max(r["report"]["steps"] for r in runs)
    fig = Figure((0, steps), (0.0, 1.0), title="Distribution of xi (10/50/90%)",
                 xlabel="t", ylabel="xi")
    for i, r in enumerate(runs):
        rep = r["report"]
        vals = np.array(rep["xi_quantiles"]["values"], dtype=float)
        if vals.size == 0 or np.all(np.isnan(vals)):
            continue
        t = np.arange(vals.shape[1])
        color = PALETTE[i % len(PALETTE)]
        fig.band(t, vals[0], vals[-1], color=color)
        fig.line(t, vals[1], color=color, label=f"{rep['scheme']} median")
    return fig


def cmd_report(args):
    runs = []
    for d in args.dirs:
        d = Path(d)
        try:
            rep = json.loads((d / "report.json").read_text(),
                             parse_constant=lambda c: math.nan)
        except (OSError, ValueError) as exc:
            raise ProblemFileError(f"{d}: cannot read report.json: {exc}") from exc
        # NaN was serialized as null
        rep["xi_quantiles"]["values"] = [[math.nan if v is None else v for v in row]
                                         for row in rep["xi_quantiles"]["values"]]
        runs.append({"dir": str(d), "report": rep})
        if (d / "traces.csv").exists() and args.check_traces:
            with open(d / "traces.csv") as fh:
                read_traces(fh)
    out = Path(args.out or "figures")
    out.mkdir(parents=True, exist_ok=True)
    problem = load_problem(args.config or bundled_problem_path())
    d_lines = [c.d for c in problem.constraints if c.kind == "state" and c.c[0] > 0]
    _phase_plot(runs, d_lines).save(out / "phase.svg")
    for r in runs:
        rep = r["report"]
        if rep["ecdf"]:
            fig = _ecdf_plot(rep, d_lines[0] if d_lines else 2.0)
            for label, color in fig.legend:
                if color is None:
                    print(f"notice: {rep['scheme']}: {label}")
            fig.save(out / f"ecdf_{rep['scheme']}.svg")
    _xi_plot(runs).save(out / "xi.svg")
    metrics = {r["report"]["scheme"]: {
        "dir": r["dir"],
        "avg_cost": r["report"]["avg_cost"],
        "avg_cost_lqr": r["report"]["avg_cost_lqr"],
        "cost_ratio": r["report"]["cost_ratio"],
        "max_violation": r["report"]["max_violation"],
        "active_streak": {k: r["report"]["active_streak"][k] for k in ("start", "length")},
        "longrun_stage_avg": r["report"]["longrun_stage_avg"],
        "ell_ss": r["report"]["ell_ss"],
    } for r in runs}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1) + "\n")
    for name, m in metrics.items():
        print(f"{name:7s} ratio={m['cost_ratio']} max_violation={m['max_violation']}")
    print(f"wrote figures to {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="ivsmpc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scheme=True):
        p.add_argument("--config", help="problem file (YAML); defaults to the bundled DC-DC benchmark")
        if scheme:
            p.add_argument("--scheme", choices=SCHEMES, default="ivsmpc")
            p.add_argument("--tightening", choices=TIGHTENINGS, default=None,
                           help="override the scheme's tightening from the problem file")
            p.add_argument("--synth", help="synthesis artifact from 'ivsmpc synth' to reuse")
        p.add_argument("--out")

    p = sub.add_parser("synth", help="offline synthesis: K, P, Ve_inf, ell_ss, terminal sets")
    common(p, scheme=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("solve", help="solve a single OCP")
    common(p)
    p.add_argument("--x", help="measured state, comma separated (default: sim.x0)")
    p.add_argument("--z1-prev", help="previous one-step prediction; omitted means t=0")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="Monte Carlo closed-loop batch")
    common(p)
    p.add_argument("--runs", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="figures and metrics from simulate output directories")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--check-traces", action="store_true", help="also parse each traces.csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleAtStart as exc:
        print(f"error: infeasible at start: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverFailure as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except np.linalg.LinAlgError as exc:
        # a ValueError subclass, but a numerical breakdown rather than bad input
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ProblemFileError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SMPCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
