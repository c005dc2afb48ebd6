"""Exception families shared across the package.

The CLI maps each family to a distinct exit code, so library code should
raise the most specific class that applies.
"""


class OodcalError(Exception):
    """Base class for all errors raised by this package."""


class InputError(OodcalError):
    """A referenced file or path is missing or unreadable."""


class DataValidationError(OodcalError):
    """Input data violates a format or consistency rule."""


class NumericError(OodcalError):
    """A numeric procedure failed (singular matrix, non-finite result, ...)."""


# -- embedding-file load errors, one class per failure mode ------------------

class BadMagicError(DataValidationError):
    """File does not start with the expected magic bytes."""


class VersionMismatchError(DataValidationError):
    """File declares an unsupported format version."""


class TruncatedPayloadError(DataValidationError):
    """File size does not match what the header promises."""


class NonFiniteValueError(DataValidationError):
    """A vector component is NaN or infinite."""


class EmptySetError(DataValidationError):
    """File contains zero records."""
