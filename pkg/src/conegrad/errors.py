"""Exception types shared across the package.

The split mirrors how callers need to react: `ValidationError` means the
inputs were malformed (wrong shapes, broken CSC structure, cones out of
order), `DomainError` means structurally valid data sat outside a
mathematical precondition (e.g. a nonpositive homogenization variable),
`NumericalError` means an iteration failed to deliver the accuracy it
promised, and `NotDifferentiableError` marks points where a projection
derivative genuinely does not exist.
"""


class ConegradError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ConegradError, ValueError):
    """Structurally invalid input: shapes, sparsity layout, cone order."""


class DomainError(ConegradError, ValueError):
    """Valid structure, but a value outside the mathematical domain."""


class NumericalError(ConegradError, RuntimeError):
    """An iterative computation broke down or ran out of iterations.

    Attributes:
        iteration: index of the failing iteration, when meaningful.
    """

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class NotDifferentiableError(NumericalError):
    """The requested derivative does not exist at the given point."""
