"""Exception types raised by the solver pipeline."""


class NlrbfError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(NlrbfError, ValueError):
    """Invalid domain, polygon or center configuration."""


class UnisolvencyError(NlrbfError):
    """A neighbor set cannot determine the polynomial part of an interpolant."""


class LocalSystemError(NlrbfError):
    """A local Lagrange system is singular or too ill-conditioned to trust."""


class SingularSystemError(NlrbfError):
    """The global saddle-point matrix could not be factorized.

    Attributes
    ----------
    pivot : int or None
        Zero-based index of the zero pivot, when the factorization reports it.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class SolverResidualError(NlrbfError):
    """The global solve finished but its residual exceeds the tolerance."""


class ConstraintRankError(NlrbfError):
    """The constraint block does not have full column rank."""
