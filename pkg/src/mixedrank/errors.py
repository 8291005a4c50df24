"""Exception hierarchy shared across the package."""

from __future__ import annotations


class MixedrankError(Exception):
    """Base class for all errors raised by this package."""


class FormulaError(MixedrankError):
    """Malformed model formula.

    Parameters
    ----------
    message:
        Human-readable description.
    offset:
        0-based byte offset into the formula string where the problem was
        detected, or None for non-positional errors (e.g. duplicate terms).
    expected:
        Token descriptions that would have been accepted at ``offset``.
    """

    def __init__(self, message: str, offset: int | None = None,
                 expected: tuple[str, ...] = ()):
        self.offset = offset
        self.expected = tuple(expected)
        detail = message
        if offset is not None:
            detail += f" (byte offset {offset}"
            if self.expected:
                detail += ", expected " + " | ".join(self.expected)
            detail += ")"
        super().__init__(detail)


class DataError(MixedrankError):
    """Problem ingesting or subsetting experiment data."""


class DesignError(MixedrankError):
    """Design matrices cannot be built from the formula and data."""


class FitError(MixedrankError):
    """Model fitting failed or was called with invalid inputs."""


class InferenceError(MixedrankError):
    """Invalid statistical comparison (non-nested models, bad domain, ...)."""


class RecipeError(MixedrankError):
    """A preset analysis recipe's preconditions are not met."""
