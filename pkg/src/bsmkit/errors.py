"""Exception hierarchy shared across the package.

Every error raised deliberately by this package derives from :class:`BsmError`,
so callers can catch one type at the top level.  The three direct subclasses
map onto the command-line exit codes: configuration problems (2), malformed or
inconsistent data (3), and numerical failures (4).
"""

from __future__ import annotations


class BsmError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(BsmError):
    """Invalid configuration: unknown keys, out-of-range values, bad CLI flags."""

    exit_code = 2


class DataError(BsmError):
    """Malformed or inconsistent input data (files, containers, geometries)."""

    exit_code = 3


class NumericalError(BsmError):
    """A numerical routine failed to produce a usable result."""

    exit_code = 4


class DomainError(BsmError, ValueError):
    """A mathematical function was called outside its domain.

    Also a ``ValueError`` so numerical code can catch it idiomatically.
    """

    exit_code = 2


class BadMagic(DataError):
    """A binary container did not start with the expected magic bytes."""


class TruncatedPayload(DataError):
    """A binary container ended before all declared payload bytes were read."""


class DimensionMismatch(DataError):
    """Array shapes declared by a container or argument do not agree."""


class NonMonotoneFrequencies(DataError):
    """A frequency axis was not strictly increasing."""


class NoHorizontalDirections(DataError):
    """A direction grid contains no directions on the horizontal plane."""


class DegeneratePower(NumericalError):
    """A band power or normalization denominator vanished."""


class SingularSystem(NumericalError):
    """A linear system was singular and no regularization was in effect."""


class InsufficientTaps(ConfigError):
    """Requested FIR length is too short for the design frequency resolution."""
