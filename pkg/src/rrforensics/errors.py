"""Exception types shared by the analysis modules."""


class ForensicsError(Exception):
    """Base class for all errors raised by rrforensics."""


class DataValidationError(ForensicsError, ValueError):
    """Input data does not satisfy the center file schema or its invariants."""

    def __init__(self, message, row=None, code=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row
        self.code = code


class UndefinedStatistic(ForensicsError, ValueError):
    """A ratio, correlation or test statistic is undefined for the given input.

    Raised for zero denominators, constant samples and subsets that are too
    small. Callers doing batch work catch this and record an exclusion.
    """
