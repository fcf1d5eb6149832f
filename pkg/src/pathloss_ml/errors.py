class PathlossError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(PathlossError, ValueError):
    """Input data violates a structural invariant."""


class ParseError(PathlossError, ValueError):
    """A record could not be decoded."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(PathlossError, ValueError):
    """An experiment or CLI configuration is inconsistent with the data."""
