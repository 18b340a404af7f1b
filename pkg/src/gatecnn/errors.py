"""Exception taxonomy shared by all gatecnn modules.

Each class maps to one CLI exit-code family (see cli.EXIT_CODES).
"""


class GatecnnError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(GatecnnError, ValueError):
    """Invalid scheme parameters or misuse of an API contract."""


class BackendMismatchError(ParameterError):
    """Bits from different backends (or parameter sets) were combined."""


class NoiseExhaustionError(GatecnnError, RuntimeError):
    """Tracked ciphertext noise reached the decryption budget."""


class WidthMismatchError(ParameterError):
    """Bit vectors of different widths were combined."""


class FormatMismatchError(ParameterError):
    """Fixed-point values with different formats were combined."""


class RangeError(GatecnnError, ValueError):
    """A real value does not fit the fixed-point format."""


class ShapeError(GatecnnError, ValueError):
    """Tensor/image dimensions do not match the declared layer shapes."""


class OverflowDiagnostic(GatecnnError, ArithmeticError):
    """Clear-backend check: a fixed-point computation left its w-bit range.

    Raised only on the clear backend, where values are inspectable. An
    overflow voids the network error bound, so it aborts the run instead
    of silently wrapping.
    """


class ModelFormatError(GatecnnError, ValueError):
    """A model or data file could not be parsed."""


class VerificationFailure(GatecnnError, RuntimeError):
    """The verify command found a classification mismatch or bound violation."""
