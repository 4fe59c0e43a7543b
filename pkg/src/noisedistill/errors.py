"""Exception types shared across the package.

The split matters at the boundaries: the CLI maps ConfigError/usage problems
to exit code 2 and numeric/training failures to exit code 3, and the service
maps them to 4xx/5xx responses.
"""


class ShapeError(ValueError):
    """Operands have incompatible or invalid shapes."""


class DomainError(ValueError):
    """Arguments are outside an operation's valid domain."""


class FormatError(ValueError):
    """A file or byte stream is not in the expected format."""


class ConfigError(ValueError):
    """A configuration value or combination is invalid."""


class NumericError(ArithmeticError):
    """A numeric evaluation produced non-finite values."""


class TrainingError(RuntimeError):
    """Training diverged or reached an unrecoverable state."""
