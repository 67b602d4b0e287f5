"""Exception hierarchy shared by all modules."""


class SeqTrainError(Exception):
    """Base class for library errors."""


class ConfigurationError(SeqTrainError, ValueError):
    """Invalid input: shape mismatch, bad constant, violated precondition."""


class NumericalError(SeqTrainError, ArithmeticError):
    """Non-finite values encountered during assembly or solves."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DivergenceError(SeqTrainError, ArithmeticError):
    """A time stepper produced a non-finite or blown-up state.

    ``last_record`` carries the last valid step record so callers can still
    report how far the run got.
    """

    def __init__(self, message, last_record=None, records=None):
        super().__init__(message)
        self.last_record = last_record
        self.records = records if records is not None else []
