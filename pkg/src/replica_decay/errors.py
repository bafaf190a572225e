"""Exception types shared across the package."""


class ReplicaDecayError(Exception):
    """Base class for all package errors."""


class InvalidState(ReplicaDecayError):
    """Occupancy vector violates conservation or non-negativity."""


class InvalidEvent(ReplicaDecayError):
    """Transition event is not enabled in the given state."""


class EventCapExceeded(ReplicaDecayError):
    """Per-replication event budget was exhausted."""


class EmptyWindow(ReplicaDecayError):
    """Occupancy window is degenerate or outside the simulated horizon."""


class NoConvergence(ReplicaDecayError):
    """Iterative solver exhausted its budget."""

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class UnsupportedDimension(ReplicaDecayError):
    """Operation requires a larger copy-level dimension d."""


class RegimeRejected(ReplicaDecayError):
    """Parameters fall in a regime the theory excludes."""


class RootBracketFailure(ReplicaDecayError):
    """A threshold equation could not be bracketed."""


class DomainError(ReplicaDecayError, ValueError):
    """Argument outside the mathematical domain of the operation."""


class GridMismatch(ReplicaDecayError):
    """Two grids that must coincide do not."""
