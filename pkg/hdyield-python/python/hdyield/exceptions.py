"""
Custom exceptions for hdyield.
"""

from typing import Optional


class HdyieldError(Exception):
    """Base exception for all hdyield errors."""
    pass


class ConfigurationError(HdyieldError):
    """
    Raised when a configuration value is missing, unknown or invalid.

    ``key_path`` is the dotted location inside the config document
    (e.g. ``batch.gamma``) and ``expected`` describes what was wanted.
    """

    def __init__(self, message: str, key_path: Optional[str] = None, expected: Optional[str] = None):
        self.key_path = key_path
        self.expected = expected
        if key_path:
            message = f"{key_path}: {message}"
        if expected:
            message += f" (expected {expected})"
        super().__init__(message)


class ShapeMismatchError(HdyieldError, ValueError):
    """Raised when an array does not have the dimensions an operation needs."""

    def __init__(self, what: str, expected: object, actual: object):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


class UnsupportedDimensionError(HdyieldError):
    """Raised when a Sobol sequence is requested beyond the direction-number table."""

    def __init__(self, dimension: int, max_dimension: int):
        self.dimension = dimension
        self.max_dimension = max_dimension
        super().__init__(
            f"Sobol dimension {dimension} is not supported "
            f"(direction-number table covers d <= {max_dimension})"
        )


class FactorizationError(HdyieldError):
    """Raised when a covariance matrix stays indefinite after the full jitter ladder."""

    def __init__(self, message: str, jitter: Optional[float] = None):
        self.jitter = jitter
        super().__init__(message)


class NonFiniteGradientError(HdyieldError):
    """Raised when marginal-likelihood training produces a NaN or infinite gradient."""

    def __init__(self, iteration: int, parameter: str):
        self.iteration = iteration
        self.parameter = parameter
        super().__init__(
            f"Non-finite gradient for '{parameter}' at training iteration {iteration}"
        )


class CalibrationError(HdyieldError):
    """Raised when a testbench threshold cannot be calibrated to its target failure rate."""
    pass


class SelectionError(HdyieldError):
    """Raised when feature selection receives invalid inputs."""
    pass


class BatchError(HdyieldError):
    """Raised when a batch proposal cannot be assembled."""
    pass


class TraceExistsError(HdyieldError):
    """Raised when a run would overwrite an existing trace without --force."""

    def __init__(self, path: str):
        self.path = path
        super().__init__(f"Trace already exists at '{path}' (use --force to overwrite)")


class CheckpointError(HdyieldError):
    """Raised when a checkpoint or bench spec file cannot be decoded."""
    pass
