"""Exception types shared across the package."""


class MfreeError(Exception):
    """Base class for all errors raised by this package."""


class WidthError(MfreeError, ValueError):
    """Bit-string widths of two objects do not match."""


class ValidationError(MfreeError, ValueError):
    """Input data violates a numerical invariant (stochasticity, range, ...)."""


class SchemaError(MfreeError, ValueError):
    """A document parses but does not match the expected schema."""


class ParseError(MfreeError, ValueError):
    """A document cannot be parsed at all."""


class ResourceLimitError(MfreeError, ValueError):
    """A brute-force or dense construction exceeds its configured size limit."""


class SolverError(MfreeError, RuntimeError):
    """A linear solve failed outright (singular matrix, breakdown)."""


class ConvergenceError(SolverError):
    """Iterative solve did not reach tolerance within the iteration cap.

    Carries the best iterate so callers can inspect or retry with a
    different algorithm.
    """

    def __init__(self, message, best_x=None, residual_norm=None, iterations=None):
        super().__init__(message)
        self.best_x = best_x
        self.residual_norm = residual_norm
        self.iterations = iterations
