"""Independent reference computations shared by several test modules."""

import itertools
import math

import numpy as np
from scipy.special import ndtri


def scalar_ocp_cost(xi, v0, v1, *, x, z1p, ve1p, a, b, k, p, qk, vw, q, r, d, rho, zf_bound):
    """Two-step scalar surrogate OCP written out by hand; ``inf`` when infeasible.

    Arguments broadcast, so whole grids are evaluated at once.
    """
    ak = a + b * k
    kap = ndtri(rho)
    z0 = x + xi * (z1p - x)
    ve0 = xi * xi * ve1p
    z1 = a * z0 + b * v0
    ve1 = ak * ak * ve0 + vw
    z2 = a * z1 + b * v1
    ve2 = ak * ak * ve1 + vw
    cost = (q * z0 ** 2 + r * v0 ** 2 + qk * ve0
            + q * z1 ** 2 + r * v1 ** 2 + qk * ve1
            + p * z2 ** 2 + qk * ve2 / (1.0 - ak * ak)
            + xi * xi * p * (x - z1p) ** 2)
    ok = (z0 + kap * np.sqrt(ve0) <= d) & (z1 + kap * np.sqrt(ve1) <= d) & (z2 <= zf_bound)
    return np.where(ok, cost, np.inf)


def grid_minimize(fun, center, half_widths, pitch, bounds):
    """Exhaustive search on a regular grid clipped to ``bounds``; returns (value, point)."""
    axes = []
    for c, h, (lo, hi) in zip(center, half_widths, bounds):
        start = max(lo, c - h)
        stop = min(hi, c + h)
        n = int(round((stop - start) / pitch)) + 1
        axes.append(np.linspace(start, stop, n))
    g1, g2 = np.meshgrid(axes[1], axes[2], indexing="ij")
    best, arg = np.inf, None
    # one slab per first coordinate keeps memory bounded
    for a0 in axes[0]:
        vals = fun(a0, g1, g2)
        i = np.unravel_index(np.argmin(vals), vals.shape)
        if vals[i] < best:
            best, arg = float(vals[i]), np.array([a0, g1[i], g2[i]])
    return best, arg


def refine_grid(fun, bounds, pitches=(1e-2, 1e-3, 1e-4, 1e-5)):
    """Coarse full grid followed by local grids of decreasing pitch."""
    center = [0.5 * (lo + hi) for lo, hi in bounds]
    half = [0.5 * (hi - lo) for lo, hi in bounds]
    best = None
    for pitch in pitches:
        best = grid_minimize(fun, center, half, pitch, bounds)
        center = best[1]
        half = [20 * pitch] * 3
    return best


def scalar_dlyap(a, v):
    return v / (1.0 - a * a)


def kron_dlyap(a, v):
    n = a.shape[0]
    vec = np.linalg.solve(np.eye(n * n) - np.kron(a, a), v.reshape(-1))
    return vec.reshape(n, n)


def cantelli_over_gaussian(rho):
    return math.sqrt(rho / (1 - rho)) / ndtri(rho)


def active_set_oracle(H, g, A, b):
    """Minimum of ``1/2 y'Hy + g'y`` s.t. ``A y <= b`` over all active sets."""
    n, m = g.size, b.size
    best, best_y = np.inf, None
    for k in range(0, min(n, m) + 1):
        for rows in itertools.combinations(range(m), k):
            Ak = A[list(rows)].reshape(k, n)
            kkt = np.block([[H, Ak.T], [Ak, np.zeros((k, k))]])
            try:
                sol = np.linalg.solve(kkt, np.concatenate([-g, b[list(rows)]]))
            except np.linalg.LinAlgError:
                continue
            y, lam = sol[:n], sol[n:]
            if np.all(lam >= -1e-10) and np.all(A @ y <= b + 1e-10):
                val = 0.5 * y @ H @ y + g @ y
                if val < best:
                    best, best_y = val, y
    return best, best_y
