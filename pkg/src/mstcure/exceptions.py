class MstCureError(Exception):
    """Base class for errors raised by mstcure."""


class InputError(MstCureError, ValueError):
    def __init__(self, message, *, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaError(InputError):
    """A column named in the schema is absent from the input."""


class ParseError(InputError):
    """A cell could not be read as a number."""


class ValidationError(InputError):
    """A value violates the data contract (negative time, status not 0/1, ...)."""


class DegenerateError(MstCureError, ValueError):
    """The estimand or its studentization is undefined for these data."""


class FitError(MstCureError, RuntimeError):
    """An inner solver of the cure-model EM failed."""


class RankDeficientError(FitError):
    pass


class SeparationError(FitError):
    pass


class ResamplingError(MstCureError, RuntimeError):
    """Too many resampling replicates had to be discarded."""
