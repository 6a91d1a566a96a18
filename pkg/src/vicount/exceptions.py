"""
Custom exceptions for vicount

All exceptions inherit from VicountError and provide clear,
actionable error messages to help users resolve issues quickly.
"""

from typing import Any, List, Optional


class VicountError(Exception):
    """
    Base exception for all vicount errors

    All vicount-specific exceptions inherit from this class,
    making it easy to catch all library errors.
    """
    pass


class ParameterError(VicountError, ValueError):
    """
    Raised when an operation receives an invalid parameter

    Examples are a non-positive kernel width, an even window size or a
    zero Sinkhorn iteration count.

    Example:
        >>> raise ParameterError("window must be odd and >= 3, got 4")
    """
    pass


class ConfigurationError(ParameterError):
    """
    Raised when a RunConfig value is invalid or a config file cannot be used
    """
    pass


class OracleSizeError(ParameterError):
    """
    Raised when the LP oracle is asked to solve an instance above its size limit
    """

    def __init__(self, message: str, limit: int):
        super().__init__(message)
        self.limit = limit


class StateError(VicountError):
    """
    Raised when an object is used in the wrong state

    The typical case is a transport plan rescaled twice, or a plan in
    normalized scale handed to an operation that reads counts.
    """
    pass


class DataError(VicountError):
    """
    Raised when input data is malformed or inconsistent

    When the data came from a file, ``line`` holds the 1-based line number.
    """

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message)
        self.line = line


class OutOfBoundsError(DataError):
    """
    Raised when a head point lies outside its frame

    ``index`` is the position of the offending point in its PointSet.
    """

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class NumericalError(VicountError, ArithmeticError):
    """
    Raised when a computation produces non-finite values

    ``iteration`` names the Sinkhorn iteration (0-based) where it happened,
    when known.
    """

    def __init__(self, message: str, iteration: Optional[int] = None):
        super().__init__(message)
        self.iteration = iteration


class TrainingDivergedError(NumericalError):
    """
    Raised when the training loss becomes non-finite

    ``trace`` holds the loss trace rows recorded up to the failing step.
    """

    def __init__(self, message: str, trace: List[Any], iteration: Optional[int] = None):
        super().__init__(message, iteration=iteration)
        self.trace = trace
