"""Dense linear-algebra and scalar special-function kernels.

Everything here is a pure function of small dense arrays (n_x of order ten).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NoConvergence, NotPositiveDefinite, OutOfDomain, SolveFailed, Unstable

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def symmetrize(m):
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def spectral_radius(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def cholesky(m):
    """Lower-triangular factor ``L`` with ``L @ L.T == m``.

    Raises :class:`NotPositiveDefinite` carrying the index of the first
    non-positive pivot.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    n = m.shape[0]
    if m.shape != (n, n):
        raise ValueError(f"cholesky needs a square matrix, got shape {m.shape}")
    L = np.zeros_like(m)
    for j in range(n):
        pivot = m[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > 0.0:
            raise NotPositiveDefinite(j)
        L[j, j] = math.sqrt(pivot)
        if j + 1 < n:
            L[j + 1:, j] = (m[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def psd_factor(m):
    """Square factor ``F`` with ``F @ F.T == m`` for PSD ``m``; Cholesky when possible."""
    m = symmetrize(m)
    try:
        return cholesky(m)
    except NotPositiveDefinite:
        w, v = np.linalg.eigh(m)
        if w.min() < -1e-12 * max(1.0, abs(w).max()):
            raise
        return v * np.sqrt(np.clip(w, 0.0, None))


def is_psd(m, tol=1e-10):
    """Numerical PSD test: Cholesky of ``m + tol*I`` succeeds."""
    m = symmetrize(m)
    try:
        cholesky(m + tol * np.eye(m.shape[0]))
    except NotPositiveDefinite:
        return False
    return True


def psd_leq(a, b, tol=1e-10):
    """``a <= b`` in the Loewner order, tested as Cholesky of ``b - a + tol*I``."""
    return is_psd(np.asarray(b, dtype=float) - np.asarray(a, dtype=float), tol)


def dlyap(a_cl, q):
    """Solve ``a_cl P a_cl^T + q = P`` through the Kronecker system.

    ``(I - a_cl (x) a_cl) vec(P) = vec(q)`` is solved by dense LU, so this is
    only meant for small state dimensions.
    """
    a = np.atleast_2d(np.asarray(a_cl, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    n = a.shape[0]
    rho = spectral_radius(a)
    if rho >= 1.0 - 1e-9:
        raise Unstable(rho)
    lhs = np.eye(n * n) - np.kron(a, a)
    try:
        p = np.linalg.solve(lhs, q.reshape(-1)).reshape(n, n)
    except np.linalg.LinAlgError as exc:
        raise SolveFailed(f"Kronecker Lyapunov system is singular: {exc}") from exc
    return symmetrize(p)


def dare_lqr(a, b, q, r, tol=1e-12, max_iter=100_000):
    """Infinite-horizon LQR by Riccati value iteration.

    Returns ``(k, p)`` with ``u = k @ x`` the optimal feedback and ``p`` the
    stabilizing solution of the discrete algebraic Riccati equation.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float).reshape(a.shape[0], -1)
    q = symmetrize(np.atleast_2d(q))
    r = symmetrize(np.atleast_2d(r))
    p = q.copy()
    for it in range(1, max_iter + 1):
        bp = b.T @ p
        k = -np.linalg.solve(r + bp @ b, bp @ a)
        with np.errstate(over="ignore", invalid="ignore"):
            p_next = symmetrize(q + a.T @ p @ (a + b @ k))
            change = np.linalg.norm(p_next - p) / max(np.linalg.norm(p_next), 1e-300)
        if not np.isfinite(change):
            # diverging: (a, b) is not stabilizable
            raise NoConvergence(it)
        p = p_next
        if change <= tol:
            break
    else:
        raise NoConvergence(max_iter)
    bp = b.T @ p
    k = -np.linalg.solve(r + bp @ b, bp @ a)
    rho = spectral_radius(a + b @ k)
    if rho >= 1.0:
        raise Unstable(rho)
    return k, p


def std_normal_cdf(x):
    """Standard normal CDF, accurate to a few ulp in both tails."""
    x = float(x)
    return 0.5 * math.erfc(-x / SQRT2)


def std_normal_pdf(x):
    return INV_SQRT_2PI * math.exp(-0.5 * x * x)


# Acklam's rational approximation, ~1e-9 relative; used only as the Newton start.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _quantile_guess(p):
    if p < _P_LOW:
        s = math.sqrt(-2.0 * math.log(p))
        num = ((((_C[0] * s + _C[1]) * s + _C[2]) * s + _C[3]) * s + _C[4]) * s + _C[5]
        den = (((_D[0] * s + _D[1]) * s + _D[2]) * s + _D[3]) * s + 1.0
        return num / den
    s = p - 0.5
    t = s * s
    num = (((((_A[0] * t + _A[1]) * t + _A[2]) * t + _A[3]) * t + _A[4]) * t + _A[5]) * s
    den = ((((_B[0] * t + _B[1]) * t + _B[2]) * t + _B[3]) * t + _B[4]) * t + 1.0
    return num / den


def std_normal_quantile(rho):
    """Inverse of :func:`std_normal_cdf` on the open unit interval."""
    rho = float(rho)
    if not 0.0 < rho < 1.0:
        raise OutOfDomain(f"quantile needs rho in (0, 1), got {rho!r}")
    if rho == 0.5:
        return 0.0
    # work in the lower tail; 1 - rho is exact for rho >= 0.5
    p = rho if rho < 0.5 else 1.0 - rho
    x = _quantile_guess(p)
    for _ in range(2):
        x -= (std_normal_cdf(x) - p) / std_normal_pdf(x)
    return x if rho < 0.5 else -x
