"""Exception types shared across the package."""


class TsadpError(Exception):
    """Base class for all package errors."""


class ShapeError(TsadpError, ValueError):
    """Operand shapes are incompatible."""


class EmptyInputError(TsadpError, ValueError):
    """An operation received an empty sequence or batch."""


class DegenerateContextError(TsadpError, ValueError):
    """A masked prediction has no unmasked context to draw from."""


class NonFiniteLossError(TsadpError, FloatingPointError):
    """Training produced a NaN or infinite loss."""


class FormatError(TsadpError):
    """Base class for binary file format problems."""


class MagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """File declares an unsupported format version."""


class TruncationError(FormatError):
    """File ended before all declared content was read."""
