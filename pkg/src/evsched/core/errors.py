"""
Exception hierarchy shared by the solvers, the parsers and the front ends.

``InputError`` subclasses describe bad instances (the CLI exits with 1, the
API answers 422); ``SolverError`` subclasses describe numerical failures.
"""

from typing import Any, Optional


class EvschedError(Exception):
    """Base class for every error raised by evsched."""


class InputError(EvschedError, ValueError):
    """An instance, file or argument that cannot be scheduled."""


class EmptyFeasibleSet(InputError):
    """Energy need exceeds what the availability window can deliver."""


class IndexOutOfRange(InputError):
    """A slot index outside 1..T."""


class LengthMismatch(InputError):
    """Vectors that should share the horizon length do not."""


class DimensionMismatch(InputError):
    """Grid arrays whose shape does not match the feeder."""


class NonFiniteGradient(InputError):
    """A price vector containing NaN or infinity."""


class InfeasibleBudget(InputError):
    """Projection budget outside [0, sum of caps]."""


class NonPositiveCapacity(InputError):
    """Battery capacity must be strictly positive."""


class DisconnectedTree(InputError):
    """An aggregation tree that does not span every EV from the center."""


class UnknownKind(InputError):
    """Unknown instance kind, cost kind or solver name."""


class ParseError(InputError):
    """A fleet, load or scenario file that cannot be read or does not match its schema."""


class FeederParseError(ParseError):
    """Feeder file that cannot be read or does not match the schema."""


class FeederValidationError(InputError):
    """Feeder file that parses but violates a structural rule."""

    def __init__(self, message: str, location: Optional[Any] = None):
        self.location = location
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)


class SolverError(EvschedError, RuntimeError):
    """A solver could not produce a usable answer."""


class SingularKkt(SolverError):
    """The equality-constrained QP had linearly dependent constraint rows."""


class OracleNotConverged(SolverError):
    """A reference oracle failed to certify its answer."""


class MaxIterExceeded(SolverError):
    """Iteration budget ran out before the stopping rule was met.

    The partial result is attached so callers can still emit it.
    """

    def __init__(self, message: str, result: Any = None):
        super().__init__(message)
        self.result = result
