"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class ClinAuditError(Exception):
    """Base class for toolkit errors."""


class DataError(ClinAuditError, ValueError):
    """Input data or schema violates a precondition."""


class NumericError(ClinAuditError, ArithmeticError):
    """Numerical failure: divergence, degeneracy, non-identifiability."""


class DivergenceError(NumericError):
    """Training or fitting produced non-finite values.

    ``step`` records the epoch/iteration/step at which it happened.
    """

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (at step {step})")
        self.step = step


class SingleClassWarning(UserWarning):
    """Labels contain only one class; downstream trainers will refuse the data."""
