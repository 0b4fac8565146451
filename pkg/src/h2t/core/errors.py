from typing import Optional, Sequence


class H2TError(Exception):
    """Base class for every error raised by the package"""


class ValidationError(H2TError, ValueError):
    """A precondition on an argument does not hold"""


class ShapeError(ValidationError):
    """Tensor extents disagree with what an operation expects"""

    def __init__(self, what: str, expected: Sequence, actual: Sequence):
        self.what = what
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f"{what}: expected shape {self.expected}, got {self.actual}")

    def __reduce__(self):
        return type(self), (self.what, self.expected, self.actual)


class NumericError(H2TError, ArithmeticError):
    """A computation produced non-finite values"""

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        self.message = message
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)

    def __reduce__(self):
        return type(self), (self.message, self.step)


class FormatError(H2TError, IOError):
    """A binary container could not be decoded"""


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class FrozenBackboneError(H2TError, AssertionError):
    """A classifier finetuning step modified representation parameters"""


class ConfigError(ValidationError):
    """An experiment config field is invalid"""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")

    def __reduce__(self):
        return type(self), (self.field, self.message)


class ArtifactError(H2TError, FileNotFoundError):
    """A run directory lacks a file an operation needs"""
