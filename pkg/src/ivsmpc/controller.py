"""Surrogate optimal control problem, receding-horizon stepping and baselines.

The decision vector is ``y = (xi, v_0, ..., v_{N-1})``. Nominal states are
eliminated through the interpolated initial condition and the nominal
dynamics, and error covariances through :class:`~ivsmpc.model.VarianceProfile`,
so each step solves a small convex program whose only nonlinear rows are the
second-order-cone back-offs ``kappa * sqrt(h'(xi^2 G_k + H_k)h)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .convexsolver import OPTIMAL, ConvexProgram, ScpOptions, SocConstraint, solve_scp
from .errors import InfeasibleAtStart, SolverFailure
from .model import constraint_variance, kappa, variance_profile
from .terminalset import Polytope

VARIANCE_MODES = ("interpolated", "fixed")


@dataclass(frozen=True)
class OcpSpec:
    sys: object
    gains: object
    constraints: tuple
    n: int
    z_f: Polytope
    tightening: str = "gaussian"
    variance_mode: str = "interpolated"
    scp: ScpOptions = field(default_factory=ScpOptions)
    # row k is backed off by k * shift_margin so the shifted previous solution
    # stays strictly feasible despite solver tolerances
    shift_margin: float = 1e-7

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"horizon must be >= 1, got {self.n}")
        if self.variance_mode not in VARIANCE_MODES:
            raise ValueError(f"variance_mode must be one of {VARIANCE_MODES}")
        for con in self.constraints:
            if con.rho < 0.5:
                raise ValueError(
                    f"rho={con.rho} < 0.5 makes the back-off concave; only rho >= 0.5 is supported")
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "_cond", _Condensed(self))

    @property
    def kappas(self):
        return [kappa(c.rho, self.tightening) for c in self.constraints]


class _Condensed:
    """Horizon matrices that do not change between time steps."""

    def __init__(self, spec):
        a, b = spec.sys.a, spec.sys.b
        g = spec.gains
        n, nx, nu = spec.n, spec.sys.n_x, spec.sys.n_u
        self.nv = n * nu
        self.apow = np.empty((n + 1, nx, nx))
        self.apow[0] = np.eye(nx)
        for k in range(n):
            self.apow[k + 1] = a @ self.apow[k]
        # z_k = A^k z_0 + gamma[k] @ v
        self.gamma = np.zeros((n + 1, nx, self.nv))
        for k in range(1, n + 1):
            for i in range(k):
                self.gamma[k][:, i * nu:(i + 1) * nu] = self.apow[k - 1 - i] @ b
        weights = [g.q] * n + [g.p]
        self.w = sum(self.apow[k].T @ weights[k] @ self.apow[k] for k in range(n + 1))
        self.l = sum(self.gamma[k].T @ weights[k] @ self.apow[k] for k in range(n + 1))
        r_blk = np.kron(np.eye(n), g.r)
        self.hvv = sum(self.gamma[k].T @ weights[k] @ self.gamma[k] for k in range(n + 1)) + r_blk
        self.kappas = spec.kappas
        self.dirs = [c.state_direction(g.k) for c in spec.constraints]


@dataclass
class ControllerState:
    z1_prev: np.ndarray
    ve1_prev: np.ndarray
    last_solution: object = None
    t: int = 0

    @classmethod
    def initial(cls, x0, gains):
        """Initialization under which the first solve returns ``xi = 0``."""
        return cls(z1_prev=np.array(x0, dtype=float), ve1_prev=gains.ve_inf.copy())


@dataclass
class OcpSolution:
    v: np.ndarray        # (N, n_u)
    z: np.ndarray        # (N+1, n_x)
    ve: np.ndarray       # (N+1, n_x, n_x)
    xi: float
    sigma_n: np.ndarray
    cost: float
    slacks: np.ndarray   # (n_constraints, N) tightened-row slack, NaN where not imposed
    solver_stats: dict = field(default_factory=dict)


def initial_cost_beta(x_t, z1_prev, p, xi):
    """Expected cost of the initial mismatch, ``xi^2 ||x_t - z1_prev||_P^2``."""
    d = np.asarray(x_t, dtype=float) - np.asarray(z1_prev, dtype=float)
    return float(xi * xi * (d @ np.asarray(p) @ d))


def terminal_cost(z_n, ve_n, gains):
    """``||z_N||_P^2 + tr((Q + K'RK) dlyap(A_K, Ve_N))``."""
    z_n = np.asarray(z_n, dtype=float)
    sigma = nk.dlyap(gains.a_k, ve_n)
    return float(z_n @ gains.p @ z_n + np.trace(gains.qk @ sigma))


@dataclass
class _Ocp:
    """A built program plus the per-step data needed to decode its solution."""

    program: ConvexProgram
    x_t: np.ndarray
    delta: np.ndarray
    profile: object
    xi_fixed: bool
    rows: list  # (constraint index, k) for every tightened row


def build_ocp(spec, x_t, state):
    """Assemble the convex program for one receding-horizon step."""
    cond = spec._cond
    g = spec.gains
    x_t = np.asarray(x_t, dtype=float).ravel()
    nx, nu, n = spec.sys.n_x, spec.sys.n_u, spec.n
    if x_t.size != nx:
        raise ValueError(f"state has dimension {x_t.size}, expected {nx}")
    delta = np.asarray(state.z1_prev, dtype=float) - x_t
    dim = 1 + cond.nv
    interpolated = spec.variance_mode == "interpolated"

    # cost: sum_k ||z_k||^2 + ||v||_R^2 + variance traces + beta + terminal
    hess = np.empty((dim, dim))
    hess[1:, 1:] = cond.hvv
    lxd = cond.l @ delta
    hess[1:, 0] = hess[0, 1:] = lxd
    beta_coeff = float(delta @ g.p @ delta)
    if interpolated:
        profile = variance_profile(g, state.ve1_prev, n)
        # sum_{k<N} tr(QK G_k) + tr(QK dlyap(A_K, G_N)) and the same for H
        var_xi = sum(np.trace(g.qk @ profile.g[k]) for k in range(n))
        var_xi += np.trace(g.qk @ nk.dlyap(g.a_k, profile.g[n]))
        var_const = sum(np.trace(g.qk @ profile.h[k]) for k in range(n))
        var_const += np.trace(g.qk @ nk.dlyap(g.a_k, profile.h[n]))
    else:
        profile = None
        var_xi = var_const = 0.0
    hess[0, 0] = delta @ cond.w @ delta + beta_coeff + var_xi
    hess *= 2.0
    grad = np.empty(dim)
    grad[0] = 2.0 * (delta @ cond.w @ x_t)
    grad[1:] = 2.0 * (cond.l @ x_t)
    const = float(x_t @ cond.w @ x_t + var_const)

    # z_k = apow[k] x + (apow[k] delta) xi + gamma[k] v  ==  s_k + M_k y
    rows_a, rows_b, socs, tags = [], [], [], []
    for ci, con in enumerate(spec.constraints):
        kap, h = cond.kappas[ci], cond.dirs[ci]
        for k in range(n):
            if con.kind == "state":
                if not interpolated and k == 0:
                    # fixed-tube baseline: z_0 is pinned to x(0) at t=0, no back-off possible
                    continue
                lin = np.concatenate([[con.c @ cond.apow[k] @ delta], con.c @ cond.gamma[k]])
                rhs = con.d - con.c @ cond.apow[k] @ x_t - k * spec.shift_margin
            else:
                lin = np.zeros(dim)
                lin[1 + k * nu:1 + (k + 1) * nu] = con.c
                rhs = con.d - k * spec.shift_margin
            if interpolated:
                sg = kap * math.sqrt(max(h @ profile.g[k] @ h, 0.0))
                sh = kap * math.sqrt(max(h @ profile.h[k] @ h, 0.0))
            else:
                sg, sh = 0.0, kap * math.sqrt(constraint_variance(con, g.ve_inf, g.k))
            tags.append((ci, k))
            if sg == 0.0 or sh == 0.0:
                # back-off is affine in xi >= 0
                row = lin.copy()
                row[0] += sg
                rows_a.append(row)
                rows_b.append(rhs - sh)
                socs.append(None)
            else:
                f_mat = np.zeros((2, dim))
                f_mat[0, 0] = sg
                socs.append(SocConstraint(f_mat=f_mat, f_vec=np.array([0.0, sh]),
                                          g_vec=-lin, h=rhs))
    lin_tags = [t for t, s in zip(tags, socs) if s is None]
    soc_tags = [t for t, s in zip(tags, socs) if s is not None]
    socs = [s for s in socs if s is not None]

    if spec.z_f.n_rows:
        m_n = np.hstack([(cond.apow[n] @ delta)[:, None], cond.gamma[n]])
        rows_a.extend(spec.z_f.c_mat @ m_n)
        rows_b.extend(spec.z_f.d_vec - spec.z_f.c_mat @ cond.apow[n] @ x_t)

    xi_fixed = bool(np.abs(delta).max(initial=0.0) <= 1e-12 * (1.0 + np.abs(x_t).max()))
    lb = np.full(dim, -np.inf)
    ub = np.full(dim, np.inf)
    lb[0], ub[0] = 0.0, (0.0 if xi_fixed else 1.0)
    program = ConvexProgram(hessian=hess, gradient=grad, constant=const,
                            a_in=np.array(rows_a) if rows_a else None,
                            b_in=np.array(rows_b) if rows_b else None,
                            soc=socs, lb=lb, ub=ub)
    return _Ocp(program=program, x_t=x_t, delta=delta, profile=profile,
                xi_fixed=xi_fixed, rows=lin_tags + soc_tags)


def _drop_xi(program):
    """Substitute ``xi = 0`` and remove it from the decision vector."""
    socs = [SocConstraint(s.f_mat[:, 1:], s.f_vec, s.g_vec[1:], s.h) for s in program.soc]
    return ConvexProgram(hessian=program.hessian[1:, 1:], gradient=program.gradient[1:],
                         constant=program.constant, a_in=program.a_in[:, 1:], b_in=program.b_in,
                         soc=socs, lb=program.lb[1:], ub=program.ub[1:])


def shifted_candidate(spec, state):
    """``xi = 1`` with the previous input sequence shifted and ``K z_N`` appended."""
    prev = state.last_solution
    if prev is None:
        return None
    v = np.vstack([prev.v[1:], (spec.gains.k @ prev.z[-1])[None, :]])
    return np.concatenate([[1.0], v.ravel()])


def _initial_guess(spec, x_t):
    # LQR rollout from the measurement
    nu = spec.sys.n_u
    v = np.empty(spec.n * nu)
    z = np.asarray(x_t, dtype=float)
    for k in range(spec.n):
        vk = spec.gains.k @ z
        v[k * nu:(k + 1) * nu] = vk
        z = spec.sys.a @ z + spec.sys.b @ vk
    return np.concatenate([[0.0], v])


def decode(spec, ocp, y, cost):
    """Turn an optimal decision vector into trajectories and tightened-row slacks."""
    cond = spec._cond
    g = spec.gains
    n, nu = spec.n, spec.sys.n_u
    xi = float(min(max(y[0], 0.0), 1.0))
    v = y[1:].reshape(n, nu)
    z0 = ocp.x_t + xi * ocp.delta
    z = np.array([cond.apow[k] @ z0 + cond.gamma[k] @ y[1:] for k in range(n + 1)])
    if ocp.profile is not None:
        ve = ocp.profile.at(xi)
    else:
        ve = np.broadcast_to(g.ve_inf, (n + 1,) + g.ve_inf.shape).copy()
    slacks = np.full((len(spec.constraints), n), np.nan)
    for ci, con in enumerate(spec.constraints):
        for k in range(n):
            if (ci, k) not in ocp.rows:
                continue
            value = con.c @ (z[k] if con.kind == "state" else v[k])
            std = math.sqrt(max(cond.dirs[ci] @ ve[k] @ cond.dirs[ci], 0.0))
            slacks[ci, k] = con.d - value - cond.kappas[ci] * std
    return OcpSolution(v=v, z=z, ve=ve, xi=xi, sigma_n=nk.dlyap(g.a_k, ve[n]),
                       cost=float(cost), slacks=slacks)


def problem_dump(spec, ocp, state, result=None, candidate=None):
    """Structured-text (JSON) record of a failed or requested solve."""
    prog = ocp.program

    def arr(x):
        return None if x is None else np.asarray(x).tolist()

    record = {
        "t": state.t,
        "x_t": arr(ocp.x_t),
        "z1_prev": arr(state.z1_prev),
        "ve1_prev": arr(state.ve1_prev),
        "variance_mode": spec.variance_mode,
        "tightening": spec.tightening,
        "hessian": arr(prog.hessian),
        "gradient": arr(prog.gradient),
        "constant": prog.constant,
        "a_in": arr(prog.a_in),
        "b_in": arr(prog.b_in),
        "lb": arr(prog.lb),
        "ub": arr(prog.ub),
        "soc": [{"f_mat": arr(s.f_mat), "f_vec": arr(s.f_vec), "g_vec": arr(s.g_vec), "h": s.h}
                for s in prog.soc],
        "candidate": arr(candidate),
        "candidate_violation": None if candidate is None else prog.max_violation(candidate),
    }
    if result is not None:
        record.update(status=result.status, iterations=result.iterations,
                      kkt_residual=result.kkt_residual, y=arr(result.y),
                      history=list(result.history))
    return json.dumps(record, indent=1, default=float)


def _step(spec, state, x_t):
    ocp = build_ocp(spec, x_t, state)
    prog = ocp.program
    cand = shifted_candidate(spec, state)
    y0 = cand if cand is not None else _initial_guess(spec, x_t)
    if ocp.xi_fixed:
        res = solve_scp(_drop_xi(prog), y0[1:], spec.scp)
        res.y = np.concatenate([[0.0], res.y])
    else:
        res = solve_scp(prog, y0, spec.scp)
    if res.status != OPTIMAL:
        dump = problem_dump(spec, ocp, state, res, cand)
        if state.t == 0:
            raise InfeasibleAtStart(f"OCP not solvable at t=0 from x={ocp.x_t.tolist()} "
                                    f"(status {res.status})")
        raise SolverFailure(f"OCP failed at t={state.t} with status {res.status}", dump)
    sol = decode(spec, ocp, res.y, res.objective_value)
    sol.solver_stats = {
        "status": res.status,
        "outer_iterations": res.iterations,
        "kkt_residual": res.kkt_residual,
        "history": list(res.history),
        "violation": prog.max_violation(res.y),
        "candidate_cost": None if cand is None else prog.objective(cand),
        "candidate_violation": None if cand is None else prog.max_violation(cand),
    }
    u = sol.v[0] + spec.gains.k @ (ocp.x_t - sol.z[0])
    if spec.variance_mode == "interpolated":
        ve1 = sol.ve[1]
    else:
        ve1 = spec.gains.ve_inf
    new_state = ControllerState(z1_prev=sol.z[1].copy(), ve1_prev=ve1.copy(),
                                last_solution=sol, t=state.t + 1)
    return u, new_state, sol


def step_ivsmpc(spec, state, x_t):
    """One step of the variance-interpolating scheme; returns ``(u, new_state, solution)``."""
    if spec.variance_mode != "interpolated":
        raise ValueError("step_ivsmpc needs variance_mode='interpolated'")
    return _step(spec, state, x_t)


def step_icsmpc(spec, state, x_t):
    """Fixed-tube baseline: covariance frozen at the stationary value."""
    if spec.variance_mode != "fixed":
        raise ValueError("step_icsmpc needs variance_mode='fixed'")
    return _step(spec, state, x_t)


def step_lqr(gains, x_t):
    return gains.k @ np.asarray(x_t, dtype=float)
