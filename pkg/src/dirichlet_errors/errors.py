"""Exception hierarchy shared by the library and mapped to CLI exit codes."""


class ErrorCalculusError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class InputError(ErrorCalculusError, ValueError):
    """Arguments violate an operation's preconditions."""

    exit_code = 2


class ConfigError(InputError):
    """A run configuration is malformed or references an invalid value."""

    exit_code = 2


class CapabilityError(ErrorCalculusError):
    """The requested quantity needs something the inputs do not provide
    (missing hessians, disabled error source, unsupported kernel)."""

    exit_code = 3


class NumericError(ErrorCalculusError, ArithmeticError):
    """Non-finite intermediate, path explosion, or budget overrun."""

    exit_code = 4
