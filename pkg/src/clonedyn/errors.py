"""Exception types shared across the package."""


class CloneDynError(Exception):
    """Base class for all package errors."""


class ValidationError(CloneDynError):
    """Invalid input: bad parameters, malformed tables, mismatched dimensions."""


class ParseError(ValidationError):
    """A tabular input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IdentifiabilityError(CloneDynError):
    """The design cannot identify the mixture, e.g. every clone observed once."""


class OptimizerError(CloneDynError):
    """The inner maximizer failed and no usable incumbent value exists."""
