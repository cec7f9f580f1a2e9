"""Exception and warning types raised by robinopt."""


class RobinOptError(Exception):
    """Base class for all errors raised by this package."""


class NonConformingResult(RobinOptError):
    """A bisection sweep left hanging nodes behind."""


class NotNested(RobinOptError):
    """Two meshes are not related by repeated refinement."""


class SolverBreakdown(RobinOptError):
    """A linear solve missed its residual tolerance."""


class EvaluationError(RobinOptError):
    """A user supplied field could not be evaluated at quadrature points."""


class Stagnation(RobinOptError):
    """The semismooth Newton residual stopped decreasing."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NonConvergence(RobinOptError):
    """The fixed-point iteration hit its iteration cap."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NegativeControlWarning(UserWarning):
    """Assembly with u < 0 somewhere; the Robin form may lose coercivity."""
