"""Exception hierarchy shared by all modules."""


class SMPCError(Exception):
    """Base class for every error raised by the package."""


class NotPositiveDefinite(SMPCError, ValueError):
    def __init__(self, pivot):
        super().__init__(f"matrix is not positive definite (pivot {pivot} <= 0)")
        self.pivot = pivot


class Unstable(SMPCError, ValueError):
    def __init__(self, radius):
        super().__init__(f"closed-loop matrix is not Schur stable (spectral radius {radius:.6g})")
        self.radius = radius


class SolveFailed(SMPCError, RuntimeError):
    pass


class NoConvergence(SMPCError, RuntimeError):
    def __init__(self, iterations):
        super().__init__(f"fixed-point iteration did not converge in {iterations} iterations")
        self.iterations = iterations


class OutOfDomain(SMPCError, ValueError):
    pass


class OutOfRange(SMPCError, ValueError):
    pass


class NegativeVariance(SMPCError, ValueError):
    pass


class EmptyTightening(SMPCError, ValueError):
    pass


class IterationLimit(SMPCError, RuntimeError):
    pass


class InfeasibleAtStart(SMPCError, RuntimeError):
    pass


class SolverFailure(SMPCError, RuntimeError):
    """Raised when the OCP fails after t=0. Carries a structured dump for debugging."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump


class EmptyCondition(SMPCError, ValueError):
    pass


class SingularCovariance(SMPCError, ValueError):
    pass


class ProblemFileError(SMPCError, ValueError):
    pass
