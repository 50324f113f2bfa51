"""Exception types shared across the package.

The CLI maps ConfigError/InputError/FormatError to exit code 2 and
NumericError to exit code 3.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad key, bad value, inconsistent shapes."""


class InputError(ValueError):
    """Invalid data passed to an operation (negative loss, bad label...)."""


class FormatError(ValueError):
    """A file could not be parsed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(RuntimeError):
    """Training produced a non-finite value."""
