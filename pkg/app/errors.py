"""Exception hierarchy shared by every package.

Each class carries the process exit code the CLI maps it to.
"""


class LocalizerError(Exception):
    """Base class for all errors raised by this project."""

    exit_code: int = 1


class ConfigurationError(LocalizerError, ValueError):
    """A parameter or configuration value violates its contract."""


class DimensionMismatchError(LocalizerError, ValueError):
    """Operands disagree in shape."""


class GuardIntervalError(LocalizerError):
    """Every path of a position arrives after the guard interval."""


class ShapeChainError(LocalizerError):
    """A network layer cannot accept the output of its predecessor."""

    def __init__(self, layer: str, message: str) -> None:
        super().__init__(f"{layer}: {message}")
        self.layer = layer


class FormatError(LocalizerError, ValueError):
    """A fingerprint, database or model file is malformed."""


class NumericalError(LocalizerError, ArithmeticError):
    """A gradient or loss became non-finite."""

    exit_code = 3
