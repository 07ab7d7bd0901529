"""Shared exception types. Every module raises these instead of bare ValueError
so callers (and the CLI exit-code mapping) can tell failure classes apart."""


class CtReasonError(Exception):
    """Base class for all package errors."""


class ConfigError(CtReasonError):
    """Invalid or inconsistent configuration."""


class UnknownTokenError(CtReasonError):
    """Text contains a fragment outside the vocabulary."""


class RangeError(CtReasonError):
    """Token id outside [0, vocab_size)."""


class ShapeError(CtReasonError):
    """Array/tensor shape does not match the contract."""


class LengthError(CtReasonError):
    """Sequence exceeds the configured maximum length."""


class MissingRoutingTokenError(CtReasonError):
    """Requested routing token kind is absent from the generated answer."""


class EmptyMaskError(CtReasonError):
    """Operation requires a nonempty binary mask."""


class NumericError(CtReasonError):
    """Non-finite values where finite ones are required."""


class ClientError(CtReasonError):
    """Transport-level failure talking to an external generation endpoint."""

    def __init__(self, message, attempts=1):
        super().__init__(message)
        self.attempts = attempts
