"""Exception hierarchy shared across the package."""


class ChronoflowError(Exception):
    """Base class for all errors raised by this package."""


class TickOverflowError(ChronoflowError):
    """A timestamp or duration computation left the signed 64-bit tick range."""


class ClockSyncError(ChronoflowError):
    """Clock-offset estimation could not produce an estimate."""


class PayloadInvariantError(ChronoflowError):
    """A payload violates one of its declared invariants."""


class UnknownPayloadTypeError(ChronoflowError):
    """No codec is registered for the given payload type id."""

    def __init__(self, type_id: int):
        super().__init__(f"unknown payload type_id {type_id}")
        self.type_id = type_id


class PayloadLengthError(ChronoflowError):
    """Encoded payload length does not match the declared layout."""


class ConfigError(ChronoflowError):
    """A scenario or source configuration is invalid."""


class UnknownStreamError(ChronoflowError):
    """The named stream does not exist in the registry."""

    def __init__(self, name: str):
        super().__init__(f"unknown stream {name!r}")
        self.name = name


class PipelineStateError(ChronoflowError):
    """An operation was attempted in an invalid pipeline state."""


class QueueOverflowError(ChronoflowError):
    """A bounded connection overflowed under the Error delivery policy."""


class StoreError(ChronoflowError):
    """Base class for store failures."""


class StoreStateError(StoreError):
    """Write after finalize, double finalize, or a poisoned writer."""


class UnfinalizedStoreError(StoreError):
    """The store directory has no catalog; the session never finalized."""


class StoreIntegrityError(StoreError):
    """A persisted record failed its integrity check."""

    def __init__(self, message: str, stream_id: int | None = None,
                 sequence: int | None = None):
        super().__init__(message)
        self.stream_id = stream_id
        self.sequence = sequence


class UnorderedInputError(ChronoflowError):
    """A stream operator received input whose originating times do not
    strictly increase."""


class BlendUnsupportedError(ChronoflowError):
    """Linear interpolation requested for a payload kind with no blend."""


class ProtocolError(ChronoflowError):
    """A network peer violated the framing protocol."""

    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code
