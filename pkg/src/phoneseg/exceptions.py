"""Exception hierarchy; the CLI maps each class to an exit code."""


class PhonesegError(Exception):
    """Base class for all package errors."""


class ConfigError(PhonesegError, ValueError):
    """Bad usage, inconsistent configuration or invalid arguments (exit 1)."""


class DataError(PhonesegError, ValueError):
    """Malformed, missing or inconsistent input data (exit 2)."""


class NumericalError(PhonesegError, ArithmeticError):
    """Non-finite values or degenerate numerics (exit 3)."""
