"""Exception hierarchy shared by the library and the CLI."""


class SdfUncertaintyError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(SdfUncertaintyError, ValueError):
    """An argument is malformed (non-finite, degenerate, empty, ...)."""


class ConfigurationError(SdfUncertaintyError, ValueError):
    """Inputs are individually valid but inconsistent with each other."""


class FormatError(SdfUncertaintyError, ValueError):
    """A persisted file failed header or payload validation."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field
