"""Named-stream media sessions: publish/subscribe signaling, sealed frames,
deterministic simulation, and pluggable connector services."""

from .core import StreamRecord, TrackDescriptor, hash_name, is_hashed_ref
from .endpoint import EndpointSession
from .errors import (
    DecodeError,
    EzStreamError,
    IntegrityError,
    ParseError,
    PublisherConflict,
    StreamUnknown,
    ValidationError,
)
from .wire import MessageKind, SignalEnvelope, decode, encode

__version__ = "0.1.0"

__all__ = [
    "DecodeError",
    "EndpointSession",
    "EzStreamError",
    "IntegrityError",
    "MessageKind",
    "ParseError",
    "PublisherConflict",
    "SignalEnvelope",
    "StreamRecord",
    "StreamUnknown",
    "TrackDescriptor",
    "ValidationError",
    "decode",
    "encode",
    "hash_name",
    "is_hashed_ref",
    "__version__",
]
