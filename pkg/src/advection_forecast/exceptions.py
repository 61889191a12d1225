"""Exception types raised by advection-forecast."""

from typing import Any, Dict, Optional


class FormatError(ValueError):
    """A grid or checkpoint file does not conform to its binary layout."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ShapeMismatchError(ValueError):
    """Two grids that must share a shape do not."""


class EstimatorError(RuntimeError):
    """A motion estimator could not produce a flow."""


class DivergenceError(RuntimeError):
    """An optimization produced a non-finite loss.

    ``last_good`` holds the parameters of the last finite iterate, keyed by
    parameter name, when the caller has any.
    """

    def __init__(self, message: str, last_good: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.last_good = last_good
