"""Halfspace polytopes and the maximal positively invariant terminal set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convexsolver import OPTIMAL, UNBOUNDED, ConvexProgram, solve_lp
from .errors import EmptyTightening, IterationLimit, Unstable
from .model import tighten
from .numkernel import spectral_radius


@dataclass(frozen=True)
class Polytope:
    """``{x : c_mat @ x <= d_vec}``."""

    c_mat: np.ndarray
    d_vec: np.ndarray

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.d_vec, dtype=float)).ravel()
        c = np.asarray(self.c_mat, dtype=float)
        c = c.reshape(d.size, c.shape[-1] if c.ndim == 2 else -1)
        if d.size and np.any(np.all(c == 0.0, axis=1)):
            raise ValueError("polytope has an all-zero row")
        object.__setattr__(self, "c_mat", c)
        object.__setattr__(self, "d_vec", d)

    @classmethod
    def whole_space(cls, n):
        return cls(np.zeros((0, n)), np.zeros(0))

    @property
    def n_rows(self):
        return self.d_vec.size

    @property
    def dim(self):
        return self.c_mat.shape[1]

    def normalized(self):
        norms = np.linalg.norm(self.c_mat, axis=1)
        return Polytope(self.c_mat / norms[:, None], self.d_vec / norms)

    def intersect(self, other):
        return Polytope(np.vstack([self.c_mat, other.c_mat]),
                        np.concatenate([self.d_vec, other.d_vec]))

    def support(self, direction):
        """``max direction @ x`` over the polytope; ``inf`` when unbounded, ``-inf`` when empty."""
        direction = np.asarray(direction, dtype=float)
        prog = ConvexProgram(hessian=np.zeros((self.dim, self.dim)), gradient=-direction,
                             a_in=self.c_mat, b_in=self.d_vec)
        res = solve_lp(prog)
        if res.status == OPTIMAL:
            return float(direction @ res.y)
        return np.inf if res.status == UNBOUNDED else -np.inf


def contains(p, x, tol=1e-9):
    x = np.asarray(x, dtype=float).ravel()
    if x.size != p.dim:
        raise ValueError(f"point has dimension {x.size}, polytope {p.dim}")
    return bool(np.all(p.c_mat @ x <= p.d_vec + tol))


def box(n, half_width):
    eye = np.eye(n)
    return Polytope(np.vstack([eye, -eye]), np.full(2 * n, float(half_width)))


def tightened_base_constraints(constraints, gains, tightening="gaussian"):
    """Constraint rows backed off with the stationary covariance.

    Input rows are mapped into state space through the terminal controller
    ``u = K x``.
    """
    n = gains.a_k.shape[0]
    rows, rhs = [], []
    for con in constraints:
        margin = tighten(con, gains.ve_inf, gains.k, tightening)
        bound = con.d - margin
        if bound <= 0.0:
            raise EmptyTightening(
                f"d - margin = {bound:.6g} <= 0: risk level {con.rho} unattainable at steady state")
        rows.append(con.state_direction(gains.k))
        rhs.append(bound)
    if not rows:
        return Polytope.whole_space(n)
    return Polytope(np.array(rows), np.array(rhs))


def reduce(p, tol=1e-9):
    """Drop rows implied by the others (LP test), keeping the first of duplicates."""
    if p.n_rows == 0:
        return p
    q = p.normalized()
    keep = np.ones(q.n_rows, dtype=bool)
    for i in range(q.n_rows):
        keep[i] = False
        others = Polytope(q.c_mat[keep], q.d_vec[keep])
        if others.n_rows == 0 or others.support(q.c_mat[i]) > q.d_vec[i] + tol:
            keep[i] = True
    return Polytope(p.c_mat[keep], p.d_vec[keep])


def max_invariant_set(a_k, base, max_iter=500, tol=1e-9):
    """Largest subset of ``base`` that ``x -> a_k x`` maps into itself.

    Rows of ``base`` pulled back through ``a_k**j`` are added until every new
    row is redundant (slack >= -tol); ``base`` should be bounded and contain
    the origin in its interior for the iteration to terminate.
    """
    a_k = np.atleast_2d(np.asarray(a_k, dtype=float))
    rho = spectral_radius(a_k)
    if rho >= 1.0:
        raise Unstable(rho)
    if base.n_rows == 0:
        return base
    if np.any(base.d_vec <= 0.0):
        raise ValueError("base polytope must contain the origin strictly")
    base = base.normalized()
    omega = base
    power = np.eye(a_k.shape[0])
    for _ in range(max_iter):
        power = power @ a_k
        mapped = base.c_mat @ power
        new = []
        for row, d in zip(mapped, base.d_vec):
            if not np.any(row):
                continue
            if omega.support(row) > d + tol:
                new.append((row, d))
        if not new:
            return reduce(omega, tol)
        rows, rhs = zip(*new)
        norms = np.linalg.norm(rows, axis=1)
        omega = omega.intersect(Polytope(np.array(rows) / norms[:, None], np.array(rhs) / norms))
    raise IterationLimit(f"invariant set not finitely determined within {max_iter} steps")


def invariance_slack(a_k, p):
    """Smallest ``d_i - max_{x in p} c_i a_k x`` over the rows of ``p``."""
    a_k = np.atleast_2d(np.asarray(a_k, dtype=float))
    if p.n_rows == 0:
        return np.inf
    return min(d - p.support(row @ a_k) for row, d in zip(p.c_mat, p.d_vec))


def containment_slack(inner, outer):
    """Smallest ``d_i - max_{x in inner} c_i x`` over the rows of ``outer``."""
    if outer.n_rows == 0:
        return np.inf
    return min(d - inner.support(row) for row, d in zip(outer.c_mat, outer.d_vec))
