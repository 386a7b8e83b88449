"""Seeded closed-loop Monte Carlo and the statistics computed from it.

Every run draws its disturbances from its own Philox stream keyed by
``(seed, run)``, so a batch is reproducible bit for bit no matter how the
runs are distributed over worker processes.
"""

from __future__ import annotations

import csv
import io
import math
import multiprocessing as mp
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numkernel as nk
from .controller import ControllerState, step_icsmpc, step_ivsmpc, step_lqr
from .errors import EmptyCondition, SingularCovariance

SCHEMES = ("ivsmpc", "icsmpc", "lqr")
ACTIVE_TOL = 1e-6


@dataclass(frozen=True)
class SimConfig:
    steps: int
    runs: int
    seed: int
    scheme: str
    x0: tuple

    def __post_init__(self):
        if self.steps < 1 or self.runs < 1:
            raise ValueError(f"steps and runs must be >= 1, got {self.steps}, {self.runs}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "x0", tuple(float(v) for v in np.ravel(self.x0)))


@dataclass(frozen=True)
class SimSetup:
    """Everything a worker needs to run one closed loop."""

    sys: object
    gains: object
    constraints: tuple
    ocp: object = None  # OcpSpec; None for LQR


@dataclass
class SimTrace:
    run: int
    x: np.ndarray           # (T+1, n_x), includes the final state
    u: np.ndarray           # (T, n_u)
    z0: np.ndarray          # (T, n_x)
    xi: np.ndarray          # (T,), NaN for LQR
    stage_cost: np.ndarray  # (T,)
    feasible: np.ndarray    # (T,) bool
    cvals: np.ndarray       # (T+1, n_con) constraint values c'x(t) (c'u(t) for input rows)
    ocp_slack: np.ndarray   # (T, n_con) smallest tightened-row slack of the OCP, NaN for LQR

    @property
    def steps(self):
        return self.u.shape[0]


def make_rng(seed, run):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(run),))))


def standard_normals(rng, n):
    """``n`` i.i.d. N(0, 1) draws by Box-Muller on the generator's uniforms."""
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1]
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(2.0 * np.pi * u2)
    z[1::2] = r * np.sin(2.0 * np.pi * u2)
    return z[:n]


def sample_disturbance(rng, vw_chol):
    vw_chol = np.atleast_2d(vw_chol)
    return vw_chol @ standard_normals(rng, vw_chol.shape[1])


def _constraint_values(constraints, x, u):
    return np.array([c.c @ (x if c.kind == "state" else u) for c in constraints])


def run_closed_loop(setup, config, run):
    """Simulate one disturbance realization for ``config.steps`` steps."""
    sys, gains, cons = setup.sys, setup.gains, setup.constraints
    steps, nx, nu = config.steps, sys.n_x, sys.n_u
    rng = make_rng(config.seed, run)
    chol = nk.psd_factor(sys.vw)
    x = np.empty((steps + 1, nx))
    u = np.empty((steps, nu))
    z0 = np.empty((steps, nx))
    xi = np.full(steps, np.nan)
    cost = np.empty(steps)
    feasible = np.ones(steps, dtype=bool)
    ncon = len(cons)
    cvals = np.full((steps + 1, ncon), np.nan)
    slack = np.full((steps, ncon), np.nan)
    x[0] = config.x0
    if config.scheme != "lqr":
        stepper = step_ivsmpc if config.scheme == "ivsmpc" else step_icsmpc
        state = ControllerState.initial(x[0], gains)
    for t in range(steps):
        if config.scheme == "lqr":
            u[t] = step_lqr(gains, x[t])
            z0[t] = x[t]
        else:
            u[t], state, sol = stepper(setup.ocp, state, x[t])
            z0[t] = sol.z[0]
            xi[t] = sol.xi
            s = np.where(np.isnan(sol.slacks), np.inf, sol.slacks).min(axis=1)
            slack[t] = np.where(np.isinf(s), np.nan, s)
        cost[t] = x[t] @ gains.q @ x[t] + u[t] @ gains.r @ u[t]
        cvals[t] = _constraint_values(cons, x[t], u[t])
        x[t + 1] = sys.a @ x[t] + sys.b @ u[t] + sample_disturbance(rng, chol)
    # the final row only has a state
    cvals[steps] = [c.c @ x[steps] if c.kind == "state" else np.nan for c in cons]
    return SimTrace(run=run, x=x, u=u, z0=z0, xi=xi, stage_cost=cost, feasible=feasible,
                    cvals=cvals, ocp_slack=slack)


def _worker(args):
    setup, config, runs = args
    return [run_closed_loop(setup, config, r) for r in runs]


def simulate(setup, config, workers=1):
    """All ``config.runs`` traces, ordered by run index."""
    runs = list(range(config.runs))
    if workers <= 1 or config.runs == 1:
        return _worker((setup, config, runs))
    workers = min(workers, config.runs)
    chunks = [runs[i::workers] for i in range(workers)]
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    with ctx.Pool(workers) as pool:
        parts = pool.map(_worker, [(setup, config, c) for c in chunks])
    traces = [tr for part in parts for tr in part]
    traces.sort(key=lambda tr: tr.run)
    return traces


# ---------------------------------------------------------------- statistics

def violation_rate(traces, constraint_index, d):
    """Per-step fraction of runs with ``c'x(t) > d`` (length T+1)."""
    vals = np.array([tr.cvals[:, constraint_index] for tr in traces])
    return np.mean(vals > d, axis=0)


def cost_metrics(traces, traces_lqr=None, window=20):
    """``(avg_cost, ratio, longrun_stage_avg)``; ``ratio`` is NaN without LQR traces."""
    costs = np.array([tr.stage_cost for tr in traces])
    avg = float(np.mean(costs.sum(axis=1)))
    ratio = math.nan
    if traces_lqr is not None:
        ratio = avg / float(np.mean([tr.stage_cost.sum() for tr in traces_lqr]))
    window = min(window, costs.shape[1])
    longrun = float(np.mean(costs[:, -window:]))
    return avg, ratio, longrun


def confidence_ellipse(traces, t, level=0.9):
    """Sample mean and covariance at step ``t`` plus the chi-square radius for ``level``."""
    pts = np.array([tr.x[t] for tr in traces])
    n = pts.shape[1]
    if pts.shape[0] < n + 1:
        raise SingularCovariance(f"need at least {n + 1} samples, got {pts.shape[0]}")
    mean = pts.mean(axis=0)
    cov = np.cov(pts, rowvar=False).reshape(n, n)
    if not nk.is_psd(cov, 0.0) or np.linalg.matrix_rank(cov) < n:
        raise SingularCovariance(f"sample covariance at t={t} is singular")
    return mean, cov, math.sqrt(chi2_quantile(level, n))


def chi2_quantile(level, dof):
    if dof == 2:
        return -2.0 * math.log(1.0 - level)
    from scipy.stats import chi2
    return float(chi2.ppf(level, dof))


def nearest_rank(sorted_vals, q):
    n = len(sorted_vals)
    return sorted_vals[max(0, min(n - 1, math.ceil(q * n) - 1))]


def xi_distribution(traces, quantiles=(0.1, 0.5, 0.9), bins=10):
    """Per-step nearest-rank quantiles of ``xi`` and a histogram on ``[0, 1]``."""
    xi = np.array([tr.xi for tr in traces])
    steps = xi.shape[1]
    qs = np.full((len(quantiles), steps), np.nan)
    hist = np.zeros((steps, bins), dtype=int)
    for t in range(steps):
        col = np.sort(xi[:, t][~np.isnan(xi[:, t])])
        if col.size:
            qs[:, t] = [nearest_rank(col, q) for q in quantiles]
            hist[t] = np.histogram(col, bins=bins, range=(0.0, 1.0))[0]
    return {"quantiles": list(quantiles), "values": qs, "histogram": hist}


def ecdf_conditioned(traces, xi_bar, t_max, constraint_index=0, grid=None):
    """eCDF of ``c'x(t+1)`` over all ``(run, t)`` with ``xi(t) < xi_bar`` and ``t < t_max``.

    Returns ``(grid, values, n_samples)``.
    """
    samples = []
    for tr in traces:
        ts = np.arange(min(t_max, tr.steps))
        sel = ts[tr.xi[ts] < xi_bar]
        samples.append(tr.cvals[sel + 1, constraint_index])
    samples = np.sort(np.concatenate(samples)) if samples else np.empty(0)
    if samples.size == 0:
        raise EmptyCondition(f"no samples with xi < {xi_bar} and t < {t_max}")
    if grid is None:
        grid = np.linspace(0.0, 3.0, 301)
    grid = np.asarray(grid, dtype=float)
    values = np.searchsorted(samples, grid, side="right") / samples.size
    return grid, values, int(samples.size)


def ecdf_per_step(traces, xi_bar, t_max, constraint_index=0, grid=None):
    """Same as :func:`ecdf_conditioned` but one curve per ``t``; empty steps are omitted."""
    out = {}
    for t in range(t_max):
        try:
            out[t] = ecdf_conditioned(
                [_slice_step(tr, t) for tr in traces], xi_bar, 1, constraint_index, grid)
        except EmptyCondition:
            continue
    return out


def _slice_step(tr, t):
    return SimTrace(run=tr.run, x=tr.x[t:t + 2], u=tr.u[t:t + 1], z0=tr.z0[t:t + 1],
                    xi=tr.xi[t:t + 1], stage_cost=tr.stage_cost[t:t + 1],
                    feasible=tr.feasible[t:t + 1], cvals=tr.cvals[t:t + 2],
                    ocp_slack=tr.ocp_slack[t:t + 1])


def typical_ocp_slack(traces, constraint_index=0):
    """Per-step median over runs of the smallest tightened-row slack.

    The median rather than the mean: a handful of runs that have already left
    the constraint would otherwise dominate the average.
    """
    return np.median([tr.ocp_slack[:, constraint_index] for tr in traces], axis=0)


def activity_fraction(traces, constraint_index=0, tol=ACTIVE_TOL):
    return np.mean([tr.ocp_slack[:, constraint_index] < tol for tr in traces], axis=0)


def active_streak(slack, tol=ACTIVE_TOL, start_within=5):
    """Longest run of consecutive steps with ``slack < tol`` starting at ``t <= start_within``.

    Returns ``(start, length)``; ``(-1, 0)`` when no such run exists.
    """
    active = np.asarray(slack) < tol
    best = (-1, 0)
    t = 0
    while t < active.size:
        if active[t]:
            s = t
            while t < active.size and active[t]:
                t += 1
            if s <= start_within and t - s > best[1]:
                best = (s, t - s)
        else:
            t += 1
    return best


@dataclass
class McReport:
    scheme: str
    runs: int
    steps: int
    seed: int
    violation_rate: list            # per constraint, per step (T+1)
    max_violation: list             # per constraint
    mean_trajectory: list           # (T+1, n_x)
    ellipses: list                  # per step: {"mean", "cov", "radius"} or None
    avg_cost: float
    avg_cost_lqr: float
    cost_ratio: float
    longrun_stage_avg: float
    ell_ss: float
    xi_quantiles: dict
    ecdf: list                      # pooled tables over the xi_bar grid
    active_streak: dict
    feasible_fraction: float
    xi_bar_grid: list = field(default_factory=list)
    t_condition: int = 25

    def to_dict(self):
        return asdict(self)


def build_report(traces, config, gains, constraints, traces_lqr=None,
                 xi_bar_grid=(1e-9, 0.1, 0.25, 0.5, 0.75, 1.0 + 1e-9), t_condition=25,
                 ellipse_level=0.9):
    """Aggregate traces in run order into a :class:`McReport`."""
    rates = [violation_rate(traces, i, c.d) for i, c in enumerate(constraints)]
    avg, ratio, longrun = cost_metrics(traces, traces_lqr)
    avg_lqr = math.nan
    if traces_lqr is not None:
        avg_lqr = float(np.mean([tr.stage_cost.sum() for tr in traces_lqr]))
    ellipses = []
    for t in range(config.steps + 1):
        try:
            mean, cov, radius = confidence_ellipse(traces, t, ellipse_level)
            ellipses.append({"t": t, "mean": mean.tolist(), "cov": cov.tolist(), "radius": radius})
        except SingularCovariance:
            ellipses.append(None)
    xd = xi_distribution(traces)
    ecdf = []
    streak = {"start": -1, "length": 0, "median_slack": [], "active_fraction": []}
    if config.scheme != "lqr" and constraints:
        t_max = min(t_condition, config.steps)
        for xb in xi_bar_grid:
            try:
                grid, values, count = ecdf_conditioned(traces, xb, t_max, 0)
            except EmptyCondition:
                ecdf.append({"xi_bar": xb, "samples": 0, "grid": [], "values": []})
                continue
            ecdf.append({"xi_bar": xb, "samples": count, "grid": grid.tolist(),
                         "values": values.tolist()})
        ms = typical_ocp_slack(traces, 0)
        s, n = active_streak(ms)
        streak = {"start": s, "length": n, "median_slack": ms.tolist(),
                  "active_fraction": activity_fraction(traces, 0).tolist()}
    return McReport(
        scheme=config.scheme, runs=config.runs, steps=config.steps, seed=int(config.seed),
        violation_rate=[r.tolist() for r in rates],
        max_violation=[float(r.max()) for r in rates],
        mean_trajectory=np.mean([tr.x for tr in traces], axis=0).tolist(),
        ellipses=ellipses, avg_cost=avg, avg_cost_lqr=avg_lqr, cost_ratio=ratio,
        longrun_stage_avg=longrun, ell_ss=float(gains.ell_ss),
        xi_quantiles={"quantiles": xd["quantiles"], "values": xd["values"].tolist()},
        ecdf=ecdf, active_streak=streak,
        feasible_fraction=float(np.mean([tr.feasible.mean() for tr in traces])),
        xi_bar_grid=list(xi_bar_grid), t_condition=t_condition)


def monte_carlo(setup, config, workers=1, traces_lqr=None):
    """Run the batch and aggregate; returns ``(report, traces)``."""
    traces = simulate(setup, config, workers)
    return build_report(traces, config, setup.gains, setup.constraints, traces_lqr), traces


# ---------------------------------------------------------------- trace files

def trace_header(nx, nu, ncon):
    return (["run", "t"] + [f"x{i + 1}" for i in range(nx)] + [f"u{i + 1}" for i in range(nu)]
            + [f"z0_{i + 1}" for i in range(nx)] + ["xi", "stage_cost", "feasible"]
            + [f"c{i + 1}" for i in range(ncon)] + [f"ocp_slack{i + 1}" for i in range(ncon)])


def _fmt(v):
    return "%.17g" % v


def write_traces(traces, fh):
    """CSV with one row per ``(run, t)``, ``t = 0..T``; the last row only carries the state."""
    if not traces:
        return
    tr0 = traces[0]
    nx, nu, ncon = tr0.x.shape[1], tr0.u.shape[1], tr0.cvals.shape[1]
    fh.write(",".join(trace_header(nx, nu, ncon)) + "\n")
    nan_u, nan_x, nan_c = [math.nan] * nu, [math.nan] * nx, [math.nan] * ncon
    for tr in traces:
        for t in range(tr.steps + 1):
            last = t == tr.steps
            row = [tr.run, t] + list(tr.x[t])
            row += nan_u if last else list(tr.u[t])
            row += nan_x if last else list(tr.z0[t])
            row += [math.nan, math.nan, 1] if last else [tr.xi[t], tr.stage_cost[t],
                                                          int(tr.feasible[t])]
            row += list(tr.cvals[t])
            row += nan_c if last else list(tr.ocp_slack[t])
            fh.write(",".join(str(v) if isinstance(v, int) else _fmt(v) for v in row) + "\n")


def traces_to_csv(traces):
    buf = io.StringIO()
    write_traces(traces, buf)
    return buf.getvalue()


def read_traces(fh):
    """Inverse of :func:`write_traces`."""
    reader = csv.reader(fh)
    header = next(reader)
    nx = sum(1 for h in header if re.fullmatch(r"x\d+", h))
    nu = sum(1 for h in header if re.fullmatch(r"u\d+", h))
    ncon = sum(1 for h in header if re.fullmatch(r"ocp_slack\d+", h))
    rows = {}
    for rec in reader:
        rows.setdefault(int(rec[0]), []).append([float(v) for v in rec[1:]])
    traces = []
    for run in sorted(rows):
        m = np.array(rows[run])
        m = m[np.argsort(m[:, 0])]
        c = 1
        x = m[:, c:c + nx]; c += nx
        u = m[:-1, c:c + nu]; c += nu
        z0 = m[:-1, c:c + nx]; c += nx
        xi, cost, feas = m[:-1, c], m[:-1, c + 1], m[:-1, c + 2].astype(bool); c += 3
        cvals = m[:, c:c + ncon]; c += ncon
        slack = m[:-1, c:c + ncon]
        traces.append(SimTrace(run=run, x=x, u=u, z0=z0, xi=xi, stage_cost=cost,
                               feasible=feas, cvals=cvals, ocp_slack=slack))
    return traces
