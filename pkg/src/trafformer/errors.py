"""Exception hierarchy shared across the package."""


class TrafFormerError(Exception):
    """Base class for all package errors."""


class DimensionError(TrafFormerError, ValueError):
    """Operand shapes are incompatible with an operation."""


class ContractError(TrafFormerError):
    """A caller violated an operation's precondition."""


class NumericError(TrafFormerError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class DataError(TrafFormerError, ValueError):
    """Input data cannot support the requested computation."""


class ParseError(DataError):
    """A data file is malformed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InputError(TrafFormerError, ValueError):
    """A user-facing argument is invalid (unknown sensor, bad day, ...)."""


class TrainingError(TrafFormerError):
    """Training diverged."""

    def __init__(self, message: str, iteration: int):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {message}")


class LookupIndexError(TrafFormerError, IndexError):
    """An index falls outside a lookup table or a valid range."""


class UsageError(TrafFormerError, ValueError):
    """A command line or config file is invalid."""
