"""Exception types shared across the package."""


class ProblemFormatError(ValueError):
    """Invalid problem data: bad shapes, malformed blocks, singular metric."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap.

    Carries the best iterate found so far in ``best`` (solver-specific
    payload: the (value, point) pair for projected-gradient solves, or a
    path record for the regularized sweeps).
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InfSupDegenerateError(RuntimeError):
    """All cone directions are unreachable; a discrete stability constant
    cannot be estimated.  Supply a continuum constant instead."""
