"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: validation problems exit with 1,
numerical non-convergence with 2. I/O failures surface as ``OSError`` and
exit with 3.
"""


class RabiError(Exception):
    """Base class for all errors raised by coldrabi."""


class ValidationError(RabiError, ValueError):
    """Invalid input: bad parameter domain, inconsistent configuration, etc."""


class CoverageError(ValidationError):
    """A position grid is too small to represent the requested states."""

    def __init__(self, message, required_extent):
        super().__init__(message)
        self.required_extent = required_extent


class ExtractionError(ValidationError):
    """No interior potential minimum exists for the requested configuration."""


class RangeError(ValidationError):
    """A target value cannot be reached; ``max_attainable`` says how far one can go."""

    def __init__(self, message, max_attainable):
        super().__init__(message)
        self.max_attainable = max_attainable


class ConvergenceError(RabiError, RuntimeError):
    """A numerical procedure failed to converge."""

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations
