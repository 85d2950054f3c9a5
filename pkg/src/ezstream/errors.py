"""Exception hierarchy shared by the stream registry, wire protocol, broker,
endpoint engine, and connectors."""


class EzStreamError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(EzStreamError):
    """A value failed structural validation (name, envelope field, address)."""


class PublisherConflict(EzStreamError):
    """A second endpoint tried to publish a stream that is already live."""

    def __init__(self, stream: str, holder: str, claimant: str):
        super().__init__(f"stream {stream!r} already published by {holder} (claimant {claimant})")
        self.stream = stream
        self.holder = holder
        self.claimant = claimant


class StreamUnknown(EzStreamError):
    """A hashed stream reference has no live mapping."""


class DecodeError(EzStreamError):
    """Wire bytes could not be decoded into an envelope."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class VersionError(DecodeError):
    """Envelope carries an unsupported protocol version."""


class KindError(DecodeError):
    """Envelope carries an unknown message kind."""


class MembershipError(EzStreamError):
    """Sender is not a member of the stream it addressed."""


class RoleError(EzStreamError):
    """Operation is not permitted for the session's current role."""


class LinkUnknown(EzStreamError):
    """Signaling data referenced a peer link this session does not hold."""


class StateError(EzStreamError):
    """A peer link received signaling data illegal in its current state."""


class TrackUnknown(EzStreamError):
    """Track label does not exist on the published stream."""


class IntegrityError(EzStreamError):
    """A sealed frame failed authentication (wrong key or tampering)."""


class ParseError(EzStreamError):
    """A stream URL or scenario line did not match the expected grammar."""


class ParamError(EzStreamError):
    """A scenario builder was given out-of-range parameters."""


class TransportError(EzStreamError):
    """The signaling transport failed or was closed."""


class SessionOverflow(TransportError):
    """A per-session outbound queue exceeded its bound and was closed."""
