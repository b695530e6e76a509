"""Exception hierarchy.

Argument-style errors map to CLI exit code 2, numerical failures to 3.
"""


class LabelShiftError(Exception):
    """Base class for all errors raised by this package."""


class ArgumentError(LabelShiftError, ValueError):
    """Invalid input: wrong shape, out-of-range value, violated precondition."""


class NumericalError(LabelShiftError, ArithmeticError):
    """A computation produced a non-finite or otherwise unusable value."""


class SingularMatrixError(NumericalError):
    def __init__(self, message, condition):
        super().__init__(f"{message} (condition number {condition:.3g})")
        self.condition = condition


class DegenerateRowError(NumericalError):
    def __init__(self, row):
        super().__init__(
            f"row {row} has zero total weighted probability; cannot renormalize"
        )
        self.row = row


class UnsatisfiableShiftError(ArgumentError):
    def __init__(self, class_index):
        super().__init__(
            f"class {class_index} has positive target prior but no examples to resample"
        )
        self.class_index = class_index


class DegenerateSampleError(ArgumentError):
    """All paired differences are zero; the signed-rank test is undefined."""


class DatasetError(ArgumentError):
    """A dataset file failed to parse or validate.

    ``line`` is the 1-based file line for parse errors, ``row`` the 0-based
    data row index for validation errors.
    """

    def __init__(self, message, path=None, line=None, row=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if row is not None:
            where.append(f"row {row}")
        prefix = ", ".join(where) + ": " if where else ""
        super().__init__(prefix + message)
        self.path = path
        self.line = line
        self.row = row


class ConfigError(ArgumentError):
    """Experiment configuration is invalid."""
