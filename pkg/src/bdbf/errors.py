"""Exception hierarchy.

Every error carries a stable string ``code`` so callers (and the CLI) can
dispatch on the failure kind without matching messages.
"""

from __future__ import annotations


class BdbfError(Exception):
    code = "bdbf"


# -- input validation -------------------------------------------------------


class InputError(BdbfError, ValueError):
    code = "input"


class CoordinateError(InputError):
    code = "coordinate"


class MeasurementError(InputError):
    code = "measurement"


class DuplicatePixelError(InputError):
    code = "duplicate"


class DomainError(InputError):
    code = "domain"


class DimensionError(InputError):
    code = "dimension"


class ScaleError(InputError):
    code = "scale"


class EmptyInputError(InputError):
    code = "empty"


class InsufficientSamplesError(InputError):
    code = "insufficient-samples"


class PriorInvalidError(InputError):
    code = "prior-invalid"


# -- numerics ---------------------------------------------------------------


class NumericalError(BdbfError, ArithmeticError):
    code = "numerical"


class ConditioningError(NumericalError):
    code = "conditioning"


class UnderdeterminedError(NumericalError):
    code = "underdetermined"


class RankError(NumericalError):
    code = "rank"


# -- file formats -----------------------------------------------------------


class FormatError(BdbfError):
    code = "format"


class BadMagicError(FormatError):
    code = "bad-magic"


class TruncatedFileError(FormatError):
    code = "truncated"


class ChecksumError(FormatError):
    code = "checksum"


class UnknownVersionError(FormatError):
    code = "unknown-version"


class ParseError(FormatError):
    """Malformed text record; ``line`` is 1-based."""

    code = "parse"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SparsityError(InputError):
    code = "sparsity"
