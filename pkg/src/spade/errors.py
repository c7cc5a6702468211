"""Exception hierarchy shared across the package.

CLI exit codes map onto these: ``ContractError`` and ``ConfigError`` exit with 2,
``NumericError`` exits with 3.
"""


class SpadeError(Exception):
    """Base class for every error raised on purpose by this package."""


class ContractError(SpadeError, ValueError):
    """A documented precondition of an operation was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class NumericError(SpadeError, ArithmeticError):
    """A NaN/Inf appeared, or a loss became non-finite."""


class ConfigError(SpadeError, ValueError):
    """Invalid or unknown configuration values."""


class FormatError(ContractError):
    """A serialized file does not follow its documented format."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GenerationError(SpadeError):
    """Scene placement failed after the configured number of retries."""


class MissingArtifactError(ContractError):
    """A pipeline stage was invoked before the stage it depends on."""
