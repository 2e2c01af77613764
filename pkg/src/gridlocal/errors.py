"""Exception hierarchy shared by all modules."""


class GridLocalError(Exception):
    """Base class for all package errors."""


class ValidationError(GridLocalError, ValueError):
    """Malformed input data or violated precondition."""


class TopologyError(ValidationError):
    """Network is not a connected radial tree."""


class ReductionError(ValidationError):
    """Kron reduction impossible (singular neutral block)."""


class PowerFlowError(GridLocalError):
    """Power flow failed to converge or collapsed."""

    def __init__(self, message, mismatch=float("nan"), iterations=0):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


class InfeasibleError(GridLocalError):
    """A physical or optimization constraint cannot be satisfied."""


class ConvergenceError(GridLocalError):
    """An iterative algorithm did not converge."""


class StageDependencyError(GridLocalError):
    """A pipeline stage was run before the stage producing its inputs."""
