"""Problem data: plant, chance constraints, gains, variance propagation and tightening."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .errors import NegativeVariance, OutOfDomain, OutOfRange

TIGHTENINGS = ("gaussian", "cantelli", "unimodal")


def _as_matrix(x, name):
    m = np.atleast_2d(np.asarray(x, dtype=float))
    if m.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


@dataclass(frozen=True)
class LinearSystem:
    """``x+ = a x + b u + w`` with ``w ~ N(0, vw)``."""

    a: np.ndarray
    b: np.ndarray
    vw: np.ndarray

    def __post_init__(self):
        a = _as_matrix(self.a, "a")
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValueError(f"a must be square, got {a.shape}")
        b = np.asarray(self.b, dtype=float)
        b = b.reshape(n, -1) if b.ndim < 2 else b
        if b.shape[0] != n:
            raise ValueError(f"b must have {n} rows, got {b.shape}")
        vw = _as_matrix(self.vw, "vw")
        if vw.shape != (n, n):
            raise ValueError(f"vw must be {n}x{n}, got {vw.shape}")
        if not np.allclose(vw, vw.T, rtol=1e-12, atol=1e-14):
            raise ValueError("vw must be symmetric")
        if not nk.is_psd(vw, 1e-12):
            raise ValueError("vw must be positive semidefinite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "vw", nk.symmetrize(vw))

    @property
    def n_x(self):
        return self.a.shape[0]

    @property
    def n_u(self):
        return self.b.shape[1]


@dataclass(frozen=True)
class ChanceConstraint:
    """``P(c^T x <= d) >= rho`` on the state (or on the input for ``kind='input'``)."""

    c: np.ndarray
    d: float
    rho: float
    kind: str = "state"

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float)).ravel()
        if not np.any(c != 0.0):
            raise ValueError("constraint direction c must be nonzero")
        if self.kind not in ("state", "input"):
            raise ValueError(f"kind must be 'state' or 'input', got {self.kind!r}")
        if not 0.0 < float(self.rho) < 1.0:
            raise OutOfDomain(f"rho must lie in (0, 1), got {self.rho!r}")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", float(self.d))
        object.__setattr__(self, "rho", float(self.rho))

    def state_direction(self, k):
        """Direction ``h`` in state space with ``h^T V h`` the variance of the constrained quantity."""
        if self.kind == "state":
            return self.c
        return np.asarray(k, dtype=float).T @ self.c


@dataclass(frozen=True)
class GainSet:
    k: np.ndarray
    a_k: np.ndarray
    p: np.ndarray
    ve_inf: np.ndarray
    ell_ss: float
    q: np.ndarray
    r: np.ndarray
    vw: np.ndarray
    qk: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.qk is None:
            object.__setattr__(self, "qk", nk.symmetrize(self.q + self.k.T @ self.r @ self.k))


def synthesize(sys, q, r):
    """LQR prestabilization plus the stationary error statistics it induces.

    ``p`` is the closed-loop cost-to-go (``a_k^T p a_k + Q + K^T R K = p``),
    ``ve_inf`` the stationary error covariance and ``ell_ss`` the expected
    steady-state stage cost.
    """
    q = nk.symmetrize(np.atleast_2d(q))
    r = nk.symmetrize(np.atleast_2d(r))
    if q.shape != (sys.n_x, sys.n_x) or r.shape != (sys.n_u, sys.n_u):
        raise ValueError(f"cost weights must be {sys.n_x}x{sys.n_x} and {sys.n_u}x{sys.n_u}")
    k, _ = nk.dare_lqr(sys.a, sys.b, q, r)
    a_k = sys.a + sys.b @ k
    qk = nk.symmetrize(q + k.T @ r @ k)
    p = nk.dlyap(a_k.T, qk)
    ve_inf = nk.dlyap(a_k, sys.vw)
    ell_ss = float(np.trace(qk @ ve_inf))
    return GainSet(k=k, a_k=a_k, p=p, ve_inf=ve_inf, ell_ss=ell_ss, q=q, r=r, vw=sys.vw, qk=qk)


def interpolate_initial(x_t, z1_prev, ve1_prev, xi):
    """Blend measurement and previous prediction: mean linearly, covariance by ``xi**2``."""
    xi = float(xi)
    if not 0.0 <= xi <= 1.0:
        raise OutOfRange(f"xi must lie in [0, 1], got {xi!r}")
    x_t = np.asarray(x_t, dtype=float)
    z1_prev = np.asarray(z1_prev, dtype=float)
    if x_t.shape != z1_prev.shape:
        raise ValueError("x_t and z1_prev must have the same shape")
    z0 = (1.0 - xi) * x_t + xi * z1_prev
    return z0, xi * xi * np.asarray(ve1_prev, dtype=float)


@dataclass(frozen=True)
class VarianceProfile:
    """``Ve_k(xi) = xi**2 * g[k] + h[k]`` along the prediction horizon."""

    g: np.ndarray  # (N+1, n_x, n_x)
    h: np.ndarray  # (N+1, n_x, n_x)

    @property
    def horizon(self):
        return self.g.shape[0] - 1

    def at(self, xi):
        return xi * xi * self.g + self.h


def variance_profile(gains, ve1_prev, n):
    """Split the predicted error covariance into its ``xi**2`` coefficient and offset."""
    a_k, vw = gains.a_k, gains.vw
    nx = a_k.shape[0]
    g = np.empty((n + 1, nx, nx))
    h = np.empty((n + 1, nx, nx))
    g[0] = nk.symmetrize(ve1_prev)
    h[0] = 0.0
    for j in range(n):
        g[j + 1] = nk.symmetrize(a_k @ g[j] @ a_k.T)
        h[j + 1] = nk.symmetrize(a_k @ h[j] @ a_k.T + vw)
    return VarianceProfile(g=g, h=h)


def kappa(rho, tightening="gaussian"):
    """Back-off coefficient multiplying the standard deviation."""
    rho = float(rho)
    if tightening == "gaussian":
        return nk.std_normal_quantile(rho)
    if tightening == "cantelli":
        if not 0.5 < rho < 1.0:
            raise OutOfDomain(f"Cantelli bound needs rho in (0.5, 1), got {rho}")
        return math.sqrt(rho / (1.0 - rho))
    if tightening == "unimodal":
        if not 5.0 / 6.0 <= rho < 1.0:
            raise OutOfDomain(f"unimodal bound needs rho in [5/6, 1), got {rho}")
        return math.sqrt(2.0 / (9.0 * (1.0 - rho)))
    raise ValueError(f"unknown tightening {tightening!r}; expected one of {TIGHTENINGS}")


def constraint_variance(con, ve, k=None):
    """Variance of ``c^T e`` (state) or ``c^T K e`` (input), clamped at tiny negatives."""
    if con.kind == "input" and k is None:
        raise ValueError("input constraints need the feedback gain k")
    h = con.state_direction(k)
    var = float(h @ np.asarray(ve, dtype=float) @ h)
    if var < -1e-12:
        raise NegativeVariance(f"c^T V c = {var:.3e} < 0")
    return max(var, 0.0)


def tighten_gaussian(con, ve, k=None):
    """Exact Gaussian back-off ``sqrt(c^T V c) * Phi^-1(rho)``."""
    return math.sqrt(constraint_variance(con, ve, k)) * kappa(con.rho, "gaussian")


def tighten_concentration(con, ve, k=None, coeff_kind="cantelli"):
    if coeff_kind not in ("cantelli", "unimodal"):
        raise ValueError(f"coeff_kind must be 'cantelli' or 'unimodal', got {coeff_kind!r}")
    return math.sqrt(constraint_variance(con, ve, k)) * kappa(con.rho, coeff_kind)


def tighten(con, ve, k=None, tightening="gaussian"):
    return math.sqrt(constraint_variance(con, ve, k)) * kappa(con.rho, tightening)
