"""Exception types.

The CLI maps :class:`NumericalError` subclasses to exit code 2 and every
other :class:`QWitnessError` to exit code 1.
"""


class QWitnessError(Exception):
    """Base class for all package errors."""


class SpaceMismatchError(QWitnessError, ValueError):
    """Operator and state live on different spaces, or on the wrong subsystem."""


class EmptyBranchError(QWitnessError, ValueError):
    """A measurement outcome has (numerically) zero probability."""


class MissingStatisticError(QWitnessError, KeyError):
    """A sampled criterion lacks one of the records it needs."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class NumericalError(QWitnessError):
    """Truncation, convergence or estimator preconditions failed."""


class TruncationError(NumericalError, ValueError):
    """The Fock cutoff discards more probability mass than allowed."""


class ConvergenceError(NumericalError):
    """A result is not stable under refinement (cutoff, grid, restarts)."""


class EstimationError(NumericalError, ValueError):
    """Too few samples to form the requested estimate."""
