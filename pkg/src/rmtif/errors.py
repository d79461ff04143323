"""Exception hierarchy shared across the package."""


class RmtifError(Exception):
    """Base class for all package errors."""


class SchemaError(RmtifError):
    """A required column or field is missing from an input file."""


class ParseError(RmtifError):
    """A cell could not be parsed; carries the offending row number."""


class ValidationError(RmtifError):
    """A record violates a structural invariant."""


class FormatError(RmtifError):
    """A long-format file violates the per-subject row rules."""


class EstimationError(RmtifError):
    """The estimator cannot be computed on the given data (degenerate arm,
    missing events, and similar)."""


class NumericalError(EstimationError):
    """A numerical failure inside a solver (singular Hessian, divergence)."""


class ConvergenceError(NumericalError):
    """Newton-Raphson failed to converge; carries the last iterate."""

    def __init__(self, message, beta=None, n_iterations=None):
        super().__init__(message)
        self.beta = beta
        self.n_iterations = n_iterations


class ReplicationError(RmtifError):
    """Too many jackknife or simulation replicates failed."""
