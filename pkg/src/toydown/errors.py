"""Exception types shared across the package."""


class ToydownError(Exception):
    """Base class for all package errors."""


class InputError(ToydownError, ValueError):
    """Arguments or data violate a documented precondition."""


class ConfigurationError(ToydownError, ValueError):
    """A configuration cannot be executed (bad split name, singular workload...)."""


class GenerationFailure(ToydownError, RuntimeError):
    """A randomized generator could not produce a valid output; retry with a new seed."""


class FitError(ToydownError, ArithmeticError):
    """A regression is degenerate (fewer than two distinct weighted x values)."""


class IngestionError(ToydownError, ValueError):
    """A data file is malformed. ``line`` is 1-based and counts the header."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
