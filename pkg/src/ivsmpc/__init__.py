"""Stochastic MPC with interpolated initial state and error covariance."""

from .controller import (ControllerState, OcpSolution, OcpSpec, build_ocp, step_icsmpc,
                         step_ivsmpc, step_lqr)
from .estimators import ICSMPC, IVSMPC, LQRController
from .model import ChanceConstraint, GainSet, LinearSystem, synthesize
from .terminalset import Polytope

__all__ = [
    "ChanceConstraint", "ControllerState", "GainSet", "ICSMPC", "IVSMPC", "LQRController",
    "LinearSystem", "OcpSolution", "OcpSpec", "Polytope", "build_ocp", "step_icsmpc",
    "step_ivsmpc", "step_lqr", "synthesize",
]
__version__ = "0.1.0"
