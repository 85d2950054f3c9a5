"""The single wire-message shape exchanged between endpoints and every
broker or connector.

One message per line, UTF-8, newline-delimited JSON with exactly the keys
``v, stream, from, to, kind, seq, payload`` (``to`` omitted for broadcast).
Payloads are opaque text, so the same envelope carries simulated signaling
blobs and real browser session descriptions unchanged.

Example line::

    {"v":1,"stream":"str/15","from":"ep-7","to":"ep-9","kind":"OFFER","seq":3,"payload":"..."}

``stream`` may be a raw name or a hashed ``h:<hex>`` reference. ``seq``
strictly increases per (from, stream); receivers tolerate gaps and drop
duplicates.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

from .core import EndpointId, StreamRecord, validate_stream_ref
from .errors import (
    DecodeError,
    KindError,
    MembershipError,
    RoleError,
    ValidationError,
    VersionError,
)

PROTOCOL_VERSION = 1
MAX_PAYLOAD_BYTES = 64 * 1024

# Either side may technically offer; in this artifact peer-link creation is
# triggered on the publisher by the service, so the publisher offers.
OFFER_DIRECTION = "publisher-offers"


class MessageKind(str, enum.Enum):
    PUBLISH = "PUBLISH"
    SUBSCRIBE = "SUBSCRIBE"
    STOP = "STOP"
    OFFER = "OFFER"
    ANSWER = "ANSWER"
    CANDIDATE = "CANDIDATE"
    TRACKS_ADDED = "TRACKS_ADDED"
    TRACKS_REMOVED = "TRACKS_REMOVED"
    TEXT = "TEXT"
    PAUSE_HINT = "PAUSE_HINT"
    EVENT = "EVENT"
    ERROR = "ERROR"


# Kinds that carry peer-link signaling and are relayed point-to-point.
LINK_KINDS = frozenset({MessageKind.OFFER, MessageKind.ANSWER, MessageKind.CANDIDATE})
# Kinds the service consumes itself rather than relaying.
SERVICE_KINDS = frozenset({MessageKind.PUBLISH, MessageKind.SUBSCRIBE, MessageKind.STOP})


@dataclass(frozen=True)
class SignalEnvelope:
    """One wire message. ``to`` is None for broker-routed broadcast."""

    stream: str
    sender: EndpointId
    kind: MessageKind
    seq: int
    payload: str = ""
    to: EndpointId | None = None
    version: int = PROTOCOL_VERSION

    def __post_init__(self):
        if self.version != PROTOCOL_VERSION:
            raise ValidationError(f"unsupported envelope version {self.version}")
        validate_stream_ref(self.stream)
        if not self.sender:
            raise ValidationError("envelope 'from' must be non-empty")
        if self.to is not None and not self.to:
            raise ValidationError("envelope 'to' must be non-empty when present")
        if not isinstance(self.kind, MessageKind):
            raise ValidationError(f"unknown message kind {self.kind!r}")
        if not isinstance(self.seq, int) or isinstance(self.seq, bool) or self.seq < 0:
            raise ValidationError(f"seq must be a non-negative integer, got {self.seq!r}")
        if not isinstance(self.payload, str):
            raise ValidationError("payload must be text")
        if len(self.payload.encode("utf-8")) > MAX_PAYLOAD_BYTES:
            raise ValidationError(f"payload exceeds {MAX_PAYLOAD_BYTES} bytes")


def encode(env: SignalEnvelope) -> bytes:
    """Canonical serialization: one UTF-8 JSON line, fixed key order,
    terminated by a newline. ``decode(encode(env)) == env``."""
    obj: dict = {"v": env.version, "stream": env.stream, "from": env.sender}
    if env.to is not None:
        obj["to"] = env.to
    obj["kind"] = env.kind.value
    obj["seq"] = env.seq
    obj["payload"] = env.payload
    return (json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")


_ALLOWED_KEYS = {"v", "stream", "from", "to", "kind", "seq", "payload"}


def decode(data: bytes | str) -> SignalEnvelope:
    """Strict parse of one wire line. Trailing garbage is rejected.

    Raises :class:`DecodeError` with a byte offset on malformed input,
    :class:`VersionError` on an unknown version, and :class:`KindError` on
    an unknown kind.
    """
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise DecodeError("invalid UTF-8", offset=e.start) from e
    else:
        text = data
    stripped = text[:-1] if text.endswith("\n") else text
    if "\n" in stripped or "\r" in stripped:
        raise DecodeError("expected exactly one line", offset=stripped.find("\n"))
    try:
        obj = json.loads(stripped)
    except json.JSONDecodeError as e:
        raise DecodeError(f"malformed JSON: {e.msg}", offset=len(stripped[: e.pos].encode("utf-8"))) from e
    if not isinstance(obj, dict):
        raise DecodeError("envelope must be a JSON object")
    extra = set(obj) - _ALLOWED_KEYS
    if extra:
        raise DecodeError(f"unknown envelope keys {sorted(extra)}")
    for key in ("v", "stream", "from", "kind", "seq", "payload"):
        if key not in obj:
            raise DecodeError(f"missing envelope key {key!r}")
    if obj["v"] != PROTOCOL_VERSION:
        raise VersionError(f"unsupported version {obj['v']!r}")
    try:
        kind = MessageKind(obj["kind"])
    except ValueError:
        raise KindError(f"unknown kind {obj['kind']!r}") from None
    try:
        return SignalEnvelope(
            stream=obj["stream"],
            sender=obj["from"],
            to=obj.get("to"),
            kind=kind,
            seq=obj["seq"],
            payload=obj["payload"],
        )
    except ValidationError as e:
        raise DecodeError(str(e)) from e


def route_rule(
    kind: MessageKind,
    stream: StreamRecord,
    sender: EndpointId,
    to: EndpointId | None = None,
) -> set[EndpointId]:
    """Who receives a relayed envelope. Never includes the sender.

    - OFFER/ANSWER/CANDIDATE with an explicit ``to`` go to exactly that
      endpoint; without one they follow the directional rule below.
    - TEXT and PAUSE_HINT fan out from the publisher to all subscribers;
      TEXT from a subscriber goes to the publisher.
    - TRACKS_ADDED/REMOVED are publisher-only and fan out to subscribers.
    - EVENT/ERROR are service-originated: explicit ``to`` only.
    - PUBLISH/SUBSCRIBE/STOP are consumed by the service, never relayed.
    """
    is_publisher = stream.publisher == sender
    is_subscriber = sender in stream.subscribers

    if kind in SERVICE_KINDS:
        return set()

    if kind in LINK_KINDS:
        if not (is_publisher or is_subscriber):
            raise MembershipError(f"{sender} is not a member of stream {stream.name!r}")
        if to is not None:
            return {to} - {sender}
        return _directional(stream, sender, is_publisher)

    if kind is MessageKind.TEXT:
        if not (is_publisher or is_subscriber):
            raise MembershipError(f"{sender} is not a member of stream {stream.name!r}")
        return _directional(stream, sender, is_publisher)

    if kind in (MessageKind.PAUSE_HINT, MessageKind.TRACKS_ADDED, MessageKind.TRACKS_REMOVED):
        if not is_publisher:
            raise RoleError(f"{kind.value} may only be sent by the publisher")
        return set(stream.subscribers) - {sender}

    # EVENT / ERROR
    if to is not None:
        return {to} - {sender}
    return set()


def _directional(stream: StreamRecord, sender: EndpointId, is_publisher: bool) -> set[EndpointId]:
    if is_publisher:
        return set(stream.subscribers) - {sender}
    if stream.publisher is None:
        return set()
    return {stream.publisher} - {sender}
