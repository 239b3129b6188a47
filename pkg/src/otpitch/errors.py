"""Exception hierarchy shared across the package."""


class OtPitchError(Exception):
    """Base class for all errors raised by otpitch."""


class DegenerateInputError(OtPitchError):
    """Weight vector cannot be normalized (all-zero or negative mass)."""


class DomainError(OtPitchError):
    """Argument outside the mathematical domain of an operation."""


class ShiftOutOfRangeError(OtPitchError):
    """Requested bin shift exceeds the padding budget k_max."""


class SizeError(OtPitchError):
    """Problem instance too large for an exact reference solver."""


class ShapeError(OtPitchError):
    """Array shapes incompatible with the requested operation."""


class ConfigError(OtPitchError):
    """Invalid or inconsistent configuration."""


class ContractError(OtPitchError):
    """API contract violation (e.g. backward from a non-scalar node)."""


class FormatError(OtPitchError):
    """Corrupt or unsupported serialized data.

    ``offset`` is the byte offset at which decoding failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NonFiniteLossError(OtPitchError):
    """Training aborted because a loss component kept producing NaN/inf.

    ``component`` names the offending loss term.
    """

    def __init__(self, message: str, component: str | None = None):
        super().__init__(message)
        self.component = component
