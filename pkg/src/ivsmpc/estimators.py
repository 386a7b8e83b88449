"""Estimator-style wrappers around the receding-horizon controllers.

``fit`` takes a :class:`~ivsmpc.model.LinearSystem` and performs the offline
synthesis (LQR gain, stationary covariance, terminal set). ``step`` advances
the closed loop by one measurement; ``predict`` evaluates the first-step
policy for a batch of states without touching the running state.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .controller import ControllerState, OcpSpec, step_icsmpc, step_ivsmpc, step_lqr
from .convexsolver import ScpOptions
from .model import LinearSystem, synthesize
from .terminalset import Polytope, box, max_invariant_set, tightened_base_constraints

TERMINALS = ("mpis", "none")


def terminal_region(gains, constraints, tightening="gaussian", terminal="mpis",
                    terminal_box=100.0, max_iter=500):
    """Terminal set for the nominal state.

    ``"mpis"`` is the maximal invariant subset of the stationary-tightened
    constraints intersected with a box of half-width ``terminal_box`` (the box
    keeps the set bounded when the constraints alone are not). ``"none"``
    returns the whole space.
    """
    n = gains.a_k.shape[0]
    if terminal == "none":
        return Polytope.whole_space(n)
    if terminal != "mpis":
        raise ValueError(f"terminal must be one of {TERMINALS}, got {terminal!r}")
    base = tightened_base_constraints(constraints, gains, tightening)
    if terminal_box is not None and np.isfinite(terminal_box):
        base = base.intersect(box(n, terminal_box))
    return max_invariant_set(gains.a_k, base, max_iter=max_iter)


class _RecedingHorizon(BaseEstimator):
    _variance_mode = "interpolated"
    _stepper = staticmethod(step_ivsmpc)

    def __init__(self, q=None, r=None, constraints=(), horizon=8, tightening="gaussian",
                 terminal="mpis", terminal_box=100.0, max_invariant_iter=500):
        self.q = q
        self.r = r
        self.constraints = constraints
        self.horizon = horizon
        self.tightening = tightening
        self.terminal = terminal
        self.terminal_box = terminal_box
        self.max_invariant_iter = max_invariant_iter

    def fit(self, system, y=None, gains=None, terminal_set=None):
        """Offline synthesis. ``gains`` / ``terminal_set`` skip the respective step."""
        if not isinstance(system, LinearSystem):
            raise TypeError("fit expects a LinearSystem")
        q = np.eye(system.n_x) if self.q is None else self.q
        r = np.eye(system.n_u) if self.r is None else self.r
        self.system_ = system
        self.gains_ = gains if gains is not None else synthesize(system, q, r)
        if terminal_set is None:
            terminal_set = terminal_region(self.gains_, self.constraints, self.tightening,
                                           self.terminal, self.terminal_box,
                                           self.max_invariant_iter)
        self.terminal_set_ = terminal_set
        self.spec_ = OcpSpec(sys=system, gains=self.gains_, constraints=tuple(self.constraints),
                             n=int(self.horizon), z_f=terminal_set, tightening=self.tightening,
                             variance_mode=self._variance_mode, scp=ScpOptions())
        self.state_ = None
        return self

    def _check_fitted(self):
        if not hasattr(self, "spec_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def reset(self, x0):
        """Start a new closed loop at ``x0`` (the first solve then returns ``xi = 0``)."""
        self._check_fitted()
        self.state_ = ControllerState.initial(x0, self.gains_)
        return self

    def step(self, x):
        """Input for measurement ``x``; advances the internal controller state."""
        self._check_fitted()
        x = np.asarray(x, dtype=float).ravel()
        if self.state_ is None:
            self.reset(x)
        u, self.state_, self.solution_ = self._stepper(self.spec_, self.state_, x)
        return u

    def predict(self, X):
        """First input of a fresh closed loop started at each row of ``X``."""
        self._check_fitted()
        X = check_array(X, ensure_min_features=self.system_.n_x)
        out = np.empty((X.shape[0], self.system_.n_u))
        for i, x in enumerate(X):
            u, _, _ = self._stepper(self.spec_, ControllerState.initial(x, self.gains_), x)
            out[i] = u
        return out


class IVSMPC(_RecedingHorizon):
    """Interpolated initial state and interpolated error covariance."""


class ICSMPC(_RecedingHorizon):
    """Interpolated initial state with the covariance frozen at its stationary value."""

    _variance_mode = "fixed"
    _stepper = staticmethod(step_icsmpc)

    def __init__(self, q=None, r=None, constraints=(), horizon=8, tightening="unimodal",
                 terminal="mpis", terminal_box=100.0, max_invariant_iter=500):
        super().__init__(q=q, r=r, constraints=constraints, horizon=horizon,
                         tightening=tightening, terminal=terminal, terminal_box=terminal_box,
                         max_invariant_iter=max_invariant_iter)


class LQRController(BaseEstimator):
    """Unconstrained infinite-horizon LQR, ``u = K x``."""

    def __init__(self, q=None, r=None):
        self.q = q
        self.r = r

    def fit(self, system, y=None, gains=None):
        q = np.eye(system.n_x) if self.q is None else self.q
        r = np.eye(system.n_u) if self.r is None else self.r
        self.system_ = system
        self.gains_ = gains if gains is not None else synthesize(system, q, r)
        return self

    def reset(self, x0=None):
        return self

    def step(self, x):
        if not hasattr(self, "gains_"):
            raise NotFittedError("LQRController is not fitted yet; call fit first")
        return step_lqr(self.gains_, x)

    def predict(self, X):
        if not hasattr(self, "gains_"):
            raise NotFittedError("LQRController is not fitted yet; call fit first")
        X = check_array(X, ensure_min_features=self.system_.n_x)
        return X @ self.gains_.k.T
