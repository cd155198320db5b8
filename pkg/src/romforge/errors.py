"""Exception types shared across the package.

ConfigError maps to CLI exit code 2, NumericalError to exit code 3.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration input."""


class NumericalError(RuntimeError):
    """A solve diverged, hit non-finite values or exceeded iteration guards."""
