"""
Exception types raised by the foehn pipeline.

Every error derives from FoehnError and from the builtin it refines, so
callers may catch either. main.py maps FoehnError to exit code 2.
"""


class FoehnError(Exception):
    """Base class for all pipeline errors."""


class ParseError(FoehnError, ValueError):
    """Malformed input text; carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ObservationValueError(FoehnError, ValueError):
    """A parsed value lies outside its physical range."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IntegrityError(FoehnError, ValueError):
    """Duplicate timestamps, shape mismatches, gaps in gap-free data."""


class ConfigError(FoehnError, ValueError):
    pass


class EstimationError(FoehnError, RuntimeError):
    """A model could not be estimated from the data given."""


class DegenerateFitError(EstimationError):
    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class ConvergenceError(EstimationError):
    def __init__(self, message, lam=None):
        super().__init__(message)
        self.lam = lam


class SchemaError(FoehnError, KeyError):
    """Column names of new data do not match a fitted model."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class RecipeError(FoehnError, ValueError):
    pass


class RangeError(FoehnError, ValueError):
    """Point or span outside the covered grid or time axis."""


class ContractError(FoehnError, ValueError):
    """Caller violated a documented input contract (lengths, counts)."""


class EmptySeriesError(FoehnError, ValueError):
    pass
