"""Small dense convex solvers: LP, interior-point QP and a successive-linearization loop for SOC rows."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration_limit"
UNBOUNDED = "unbounded"


@dataclass
class SocConstraint:
    """``||f_mat y + f_vec||_2 <= g_vec^T y + h``."""

    f_mat: np.ndarray
    f_vec: np.ndarray
    g_vec: np.ndarray
    h: float

    def value(self, y):
        """Constraint function; ``<= 0`` means satisfied."""
        return float(np.linalg.norm(self.f_mat @ y + self.f_vec) - self.g_vec @ y - self.h)


@dataclass
class ConvexProgram:
    """``min 1/2 y'Hy + g'y + const`` subject to linear, bound and SOC constraints."""

    hessian: np.ndarray
    gradient: np.ndarray
    constant: float = 0.0
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    a_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    soc: list = field(default_factory=list)
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.gradient = np.asarray(self.gradient, dtype=float).ravel()
        n = self.gradient.size
        self.hessian = np.asarray(self.hessian, dtype=float).reshape(n, n)
        self.a_eq, self.b_eq = _rows(self.a_eq, self.b_eq, n, "equality")
        self.a_in, self.b_in = _rows(self.a_in, self.b_in, n, "inequality")
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bounds must have one entry per variable")

    @property
    def n(self):
        return self.gradient.size

    def objective(self, y):
        return float(0.5 * y @ self.hessian @ y + self.gradient @ y + self.constant)

    def linear_inequalities(self):
        """Inequality rows with finite bounds appended, as ``(C, c)`` with ``C y <= c``."""
        eye = np.eye(self.n)
        lo = np.isfinite(self.lb)
        hi = np.isfinite(self.ub)
        C = np.vstack([self.a_in, eye[hi], -eye[lo]])
        c = np.concatenate([self.b_in, self.ub[hi], -self.lb[lo]])
        return C, c

    def max_violation(self, y):
        """Largest violation over every constraint, SOC rows evaluated exactly."""
        C, c = self.linear_inequalities()
        v = [0.0]
        if c.size:
            v.append(float(np.max(C @ y - c)))
        if self.b_eq.size:
            v.append(float(np.max(np.abs(self.a_eq @ y - self.b_eq))))
        v.extend(s.value(y) for s in self.soc)
        return max(v)


def _rows(a, b, n, what):
    if a is None or np.size(a) == 0:
        return np.zeros((0, n)), np.zeros(0)
    a = np.asarray(a, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float).ravel()
    if b.size != a.shape[0]:
        raise ValueError(f"{what} rows and right-hand side disagree: {a.shape[0]} vs {b.size}")
    return a, b


@dataclass
class SolveResult:
    y: np.ndarray
    objective_value: float
    status: str
    iterations: int
    kkt_residual: float
    lam: np.ndarray | None = None
    history: list = field(default_factory=list)

    @property
    def ok(self):
        return self.status == OPTIMAL


def solve_lp(program):
    """Minimize ``g'y`` over the linear constraints (HiGHS dual simplex)."""
    C, c = program.a_in, program.b_in
    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
              for lo, hi in zip(program.lb, program.ub)]
    res = linprog(program.gradient,
                  A_ub=C if c.size else None, b_ub=c if c.size else None,
                  A_eq=program.a_eq if program.b_eq.size else None,
                  b_eq=program.b_eq if program.b_eq.size else None,
                  bounds=bounds, method="highs-ds")
    if res.status == 0:
        y = np.asarray(res.x, dtype=float)
        return SolveResult(y=y, objective_value=program.objective(y), status=OPTIMAL,
                           iterations=int(res.nit), kkt_residual=0.0)
    status = {2: INFEASIBLE, 3: UNBOUNDED, 1: ITERATION_LIMIT}.get(res.status, ITERATION_LIMIT)
    return SolveResult(y=np.full(program.n, np.nan), objective_value=np.nan, status=status,
                       iterations=int(getattr(res, "nit", 0)), kkt_residual=np.inf)


def _is_feasible(program):
    probe = ConvexProgram(hessian=np.zeros((program.n, program.n)), gradient=np.zeros(program.n),
                          a_eq=program.a_eq, b_eq=program.b_eq, a_in=program.a_in,
                          b_in=program.b_in, lb=program.lb, ub=program.ub)
    return solve_lp(probe).status == OPTIMAL


def solve_qp(program, y0=None, tol=1e-10, max_iter=200, accept_tol=1e-8):
    """Primal-dual interior point with Mehrotra predictor-corrector.

    SOC rows of ``program`` are ignored; only linear constraints and bounds
    are handled. ``kkt_residual`` is the largest of the scaled stationarity,
    primal-feasibility and complementarity residuals. The loop aims for
    ``tol``; when rounding stalls it first (complementarity gone but
    stationarity stuck), the best iterate is still accepted if its residual
    is within ``accept_tol``.
    """
    n = program.n
    H = program.hessian
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        H = H + 1e-9 * np.eye(n)
    g = program.gradient
    E, e = program.a_eq, program.b_eq
    C, c = program.linear_inequalities()
    m, p = c.size, e.size

    if m == 0:
        kkt = np.block([[H, E.T], [E, np.zeros((p, p))]])
        sol = np.linalg.solve(kkt, np.concatenate([-g, e]))
        y = sol[:n]
        return SolveResult(y=y, objective_value=program.objective(y), status=OPTIMAL,
                           iterations=1, kkt_residual=0.0, lam=np.zeros(0))

    scale_d = 1.0 + max(np.abs(g).max(initial=0.0), np.abs(H).max(initial=0.0))
    scale_p = 1.0 + max(np.abs(c).max(initial=0.0), np.abs(e).max(initial=0.0))
    y = np.zeros(n) if y0 is None else np.array(y0, dtype=float)
    s = np.maximum(c - C @ y, 1.0)
    lam = np.ones(m)
    nu = np.zeros(p)
    zeros_pp = np.zeros((p, p))
    kkt_res = np.inf
    best = (np.inf, y, lam, 0)

    for it in range(1, max_iter + 1):
        rd = H @ y + g + C.T @ lam
        if p:
            rd += E.T @ nu
        re = E @ y - e
        rp = C @ y + s - c
        comp = s * lam
        mu = comp.sum() / m
        kkt_res = max(np.abs(rd).max() / scale_d,
                      np.abs(rp).max() / scale_p,
                      np.abs(re).max(initial=0.0) / scale_p,
                      comp.max() / scale_d)
        if kkt_res <= tol:
            return SolveResult(y=y, objective_value=program.objective(y), status=OPTIMAL,
                               iterations=it - 1, kkt_residual=kkt_res, lam=lam)
        if kkt_res < best[0]:
            best = (kkt_res, y, lam, it - 1)
        if lam.max() > 1e14 or not np.isfinite(kkt_res) or mu < 1e-6 * tol * scale_d:
            break

        w = lam / s
        M = H + C.T @ (w[:, None] * C)
        try:
            if p:
                lu = sla.lu_factor(np.block([[M, E.T], [E, zeros_pp]]), check_finite=False)
            else:
                lu = sla.cho_factor(M, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            break

        def direction(rc):
            rhs = -rd + C.T @ ((rc - lam * rp) / s)
            if p:
                sol = sla.lu_solve(lu, np.concatenate([rhs, -re]), check_finite=False)
                dy, dnu = sol[:n], sol[n:]
            else:
                dy, dnu = sla.cho_solve(lu, rhs, check_finite=False), nu[:0]
            ds = -rp - C @ dy
            dlam = (-rc - lam * ds) / s
            return dy, dnu, ds, dlam

        dy, dnu, ds, dlam = direction(comp)
        alpha = min(_max_step(s, ds), _max_step(lam, dlam))
        mu_aff = (s + alpha * ds) @ (lam + alpha * dlam) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dy, dnu, ds, dlam = direction(comp + ds * dlam - sigma * mu)
        alpha = min(1.0, 0.995 * min(_max_step(s, ds), _max_step(lam, dlam)))
        if (s + alpha * ds) @ (lam + alpha * dlam) / m > mu:
            # second-order term overshot (can cycle on strongly coupled variables):
            # fall back to a plain centered step
            sigma = max(sigma, 0.1)
            dy, dnu, ds, dlam = direction(comp - sigma * mu)
            alpha = min(1.0, 0.995 * min(_max_step(s, ds), _max_step(lam, dlam)))
        y = y + alpha * dy
        nu = nu + alpha * dnu
        s = np.maximum(s + alpha * ds, 1e-300)
        lam = np.maximum(lam + alpha * dlam, 1e-300)

    if best[0] <= accept_tol:
        kkt_res, y, lam, it = best
        return SolveResult(y=y, objective_value=program.objective(y), status=OPTIMAL,
                           iterations=it, kkt_residual=kkt_res, lam=lam)
    status = ITERATION_LIMIT if _is_feasible(program) else INFEASIBLE
    return SolveResult(y=y, objective_value=program.objective(y), status=status,
                       iterations=max_iter, kkt_residual=kkt_res, lam=lam)


def _max_step(v, dv):
    neg = dv < 0.0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


@dataclass
class ScpOptions:
    step_tol: float = 1e-8
    objective_tol: float = 1e-9
    feasibility_tol: float = 1e-8
    max_outer: int = 50
    qp_tol: float = 1e-10
    # coordinate nudged when a norm term vanishes at the linearization point
    perturb_index: int = 0
    perturb: float = 1e-9


def _linearize(soc, y, opts):
    """Tangent row ``(a, b)`` with ``a @ y' <= b`` and the curvature of the norm at ``y``.

    For a unit ``u``, ``u'(F y + f) <= ||F y + f||``, so the tangent row is a
    valid outer approximation of the SOC row.
    """
    r = soc.f_mat @ y + soc.f_vec
    nr = np.linalg.norm(r)
    if nr < 1e-12:
        y2 = y.copy()
        y2[opts.perturb_index] += opts.perturb
        r = soc.f_mat @ y2 + soc.f_vec
        nr = np.linalg.norm(r)
    if nr == 0.0:
        return -soc.g_vec, soc.h, None
    u = r / nr
    fu = u @ soc.f_mat
    curv = (soc.f_mat.T @ soc.f_mat - np.outer(fu, fu)) / nr
    return fu - soc.g_vec, soc.h - u @ soc.f_vec, curv


def solve_scp(program, y_init, opts=None):
    """Sequential convex programming for SOC rows via first-order expansions.

    Every outer iteration replaces each SOC row by its tangent at the current
    iterate and solves the resulting QP. The QP Hessian is augmented with the
    curvature of each norm term weighted by its multiplier from the previous
    QP, which makes the iteration a Newton (SQP) method and converges
    quadratically near the solution. The loop stops when the step, the change
    in objective and the exact SOC violation are all below tolerance.
    """
    opts = opts or ScpOptions()
    if not program.soc:
        return solve_qp(program, tol=opts.qp_tol)

    y = np.array(y_init, dtype=float)
    n_lin = program.b_in.size
    n_soc = len(program.soc)
    weights = np.zeros(n_soc)
    history = []
    res = None
    for outer in range(1, opts.max_outer + 1):
        cuts = [_linearize(s, y, opts) for s in program.soc]
        hess = program.hessian.copy()
        for w, (_, _, curv) in zip(weights, cuts):
            if w > 0.0 and curv is not None:
                hess += w * curv
        qp = ConvexProgram(hessian=hess, gradient=program.gradient - hess @ y + program.hessian @ y,
                           constant=program.constant, a_eq=program.a_eq, b_eq=program.b_eq,
                           a_in=np.vstack([program.a_in] + [a[None, :] for a, _, _ in cuts]),
                           b_in=np.concatenate([program.b_in, [b for _, b, _ in cuts]]),
                           lb=program.lb, ub=program.ub)
        res = solve_qp(qp, tol=opts.qp_tol)
        if res.status != OPTIMAL:
            res.history = history
            res.iterations = outer
            return res
        weights = res.lam[n_lin:n_lin + n_soc]
        step = np.abs(res.y - y).max()
        y = res.y
        history.append(program.objective(y))
        soc_viol = max(s.value(y) for s in program.soc)
        d_obj = abs(history[-1] - history[-2]) if len(history) > 1 else np.inf
        if soc_viol <= opts.feasibility_tol and step <= opts.step_tol and \
                d_obj <= opts.objective_tol * (1.0 + abs(history[-1])):
            return SolveResult(y=y, objective_value=history[-1], status=OPTIMAL,
                               iterations=outer, kkt_residual=res.kkt_residual,
                               lam=res.lam, history=history)
    return SolveResult(y=y, objective_value=program.objective(y), status=ITERATION_LIMIT,
                       iterations=opts.max_outer, kkt_residual=res.kkt_residual,
                       lam=res.lam, history=history)
