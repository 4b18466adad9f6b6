"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code (see ``fixclr.cli``), so library code
should raise the most specific type that applies.
"""

from __future__ import annotations


class FixCLRError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FixCLRError):
    """Invalid configuration value, unknown config key, or bad argument."""


class DataError(FixCLRError):
    """Dataset content violates a precondition (budget, ranges, splits)."""


class NumericError(FixCLRError):
    """Non-finite values where finite ones are required."""
