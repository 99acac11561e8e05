"""Exception hierarchy shared across the package."""


class RlabError(Exception):
    """Base class for all package errors."""


class ContractError(RlabError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible for an op."""


class NumericError(RlabError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ParseError(RlabError, ValueError):
    """An input file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UndefinedMetricError(RlabError, ValueError):
    """A metric is undefined for the given labels (e.g. a single class)."""
