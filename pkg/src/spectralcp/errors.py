"""Exception hierarchy.

Errors split into two families so the command line can map them onto
stable exit codes: :class:`InputError` (bad input or configuration, exit 2)
and :class:`DegeneracyError` (the data make the statistic undefined, exit 3).
"""

from __future__ import annotations


class CPDError(Exception):
    """Base class for all package errors."""


class InputError(CPDError, ValueError):
    """Invalid input data, arguments or configuration."""


class DegeneracyError(CPDError, ArithmeticError):
    """The requested quantity is undefined for the given data."""


class InvalidInput(InputError):
    pass


class OrderTooLarge(InputError):
    pass


class InsufficientHistory(InputError):
    pass


class SeriesTooShort(InputError):
    pass


class InvalidSpec(InputError):
    pass


class InvalidParams(InputError):
    pass


class TableIncomplete(InputError):
    pass


class DegenerateSeries(DegeneracyError):
    pass


class DegenerateSegment(DegeneracyError):
    pass


class SingularSystem(DegeneracyError):
    pass


class NoJump(DegeneracyError):
    pass


class SpectralPole(DegeneracyError):
    """The AR polynomial vanishes (numerically) at one or more frequencies."""

    def __init__(self, message: str, indices=()):
        super().__init__(message)
        self.indices = tuple(int(i) for i in indices)


class GridTooSmallWarning(UserWarning):
    """Too many simulated argmax locations landed on the grid boundary."""
