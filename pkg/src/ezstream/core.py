"""Authoritative model of a named stream and its lifecycle rules.

A named stream has at most one publisher and any number of subscribers at any
time. Publishers and subscribers may join and leave in any order, any number
of times: subscribers that arrive before the publisher are retained as
pending and become eligible for link setup when a publisher attaches.

All transitions are pure: they take a :class:`StreamRecord` and return a new
one. Callers (broker, connectors) must serialize transitions per stream;
transitions on distinct streams may proceed in parallel.
"""

from __future__ import annotations

import hashlib
import unicodedata
from dataclasses import dataclass, field, replace

from .errors import PublisherConflict, TrackUnknown, ValidationError

# An endpoint id is opaque text, unique per connected session within one
# registry lifetime. Assigned by the service (broker) or connector.
EndpointId = str

MAX_NAME_BYTES = 256
HASH_PREFIX = "h:"

TRACK_KINDS = ("audio", "video", "data")


def validate_stream_name(raw: str) -> str:
    """Validate a raw stream name and return it unchanged.

    Names are 1..256 bytes of visible characters, with ``/`` allowed as a
    hierarchy separator. Whitespace, control characters, and leading or
    trailing ``/`` are rejected. Names may not start with ``h:``, which is
    reserved for hashed stream references.
    """
    if not isinstance(raw, str) or not raw:
        raise ValidationError("stream name must be non-empty text")
    if len(raw.encode("utf-8")) > MAX_NAME_BYTES:
        raise ValidationError(f"stream name exceeds {MAX_NAME_BYTES} bytes")
    if raw.startswith("/") or raw.endswith("/"):
        raise ValidationError("stream name must not start or end with '/'")
    if raw.startswith(HASH_PREFIX):
        raise ValidationError("stream names starting with 'h:' are reserved for hashed refs")
    for ch in raw:
        cat = unicodedata.category(ch)
        if cat.startswith("C") or cat.startswith("Z"):
            raise ValidationError(f"stream name contains non-visible character {ch!r}")
    return raw


def hash_name(name: str) -> str:
    """Digest-form reference for a stream name: ``h:`` + SHA-256 hex.

    Deterministic and pure; lets a subscriber attach to a stream without
    learning its raw name. The digest is over the UTF-8 bytes of the
    validated name.
    """
    validate_stream_name(name)
    return HASH_PREFIX + hashlib.sha256(name.encode("utf-8")).hexdigest()


def is_hashed_ref(ref: str) -> bool:
    """True if ``ref`` is a well-formed hashed stream reference."""
    if not isinstance(ref, str) or not ref.startswith(HASH_PREFIX):
        return False
    digest = ref[len(HASH_PREFIX):]
    return len(digest) == 64 and all(c in "0123456789abcdef" for c in digest)


def validate_stream_ref(ref: str) -> str:
    """Accept either a raw stream name or a hashed reference."""
    if is_hashed_ref(ref):
        return ref
    return validate_stream_name(ref)


@dataclass(frozen=True)
class TrackDescriptor:
    """One advertised media track: audio, video, or data."""

    kind: str
    label: str
    enabled: bool = True

    def __post_init__(self):
        if self.kind not in TRACK_KINDS:
            raise ValidationError(f"track kind must be one of {TRACK_KINDS}, got {self.kind!r}")
        if not self.label:
            raise ValidationError("track label must be non-empty")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "label": self.label, "enabled": self.enabled}

    @classmethod
    def from_dict(cls, d: dict) -> "TrackDescriptor":
        return cls(kind=d["kind"], label=d["label"], enabled=bool(d.get("enabled", True)))


def _check_track_labels(tracks: tuple[TrackDescriptor, ...]) -> None:
    labels = [t.label for t in tracks]
    if len(labels) != len(set(labels)):
        raise ValidationError(f"duplicate track labels: {labels}")


@dataclass(frozen=True)
class StreamRecord:
    """Authoritative state of one named stream.

    ``status`` is derived: live if and only if a publisher is attached. The
    subscriber set may be non-empty while idle (pending subscribers).
    """

    name: str
    publisher: EndpointId | None = None
    subscribers: frozenset[EndpointId] = field(default_factory=frozenset)
    tracks: tuple[TrackDescriptor, ...] = ()

    def __post_init__(self):
        validate_stream_name(self.name)
        _check_track_labels(self.tracks)

    @property
    def hashed(self) -> str:
        return hash_name(self.name)

    @property
    def status(self) -> str:
        return "live" if self.publisher is not None else "idle"

    @property
    def members(self) -> frozenset[EndpointId]:
        if self.publisher is None:
            return self.subscribers
        return self.subscribers | {self.publisher}

    def is_empty(self) -> bool:
        return self.publisher is None and not self.subscribers


def attach_publisher(
    rec: StreamRecord,
    ep: EndpointId,
    tracks: tuple[TrackDescriptor, ...] = (),
) -> StreamRecord:
    """Fill the publisher slot. Idempotent for the same endpoint.

    Raises :class:`PublisherConflict` if a different endpoint already holds
    the slot; there is no silent takeover. Pending subscribers remain in
    place and become eligible for link setup.
    """
    if not ep:
        raise ValidationError("endpoint id must be non-empty")
    if rec.publisher is not None and rec.publisher != ep:
        raise PublisherConflict(rec.name, holder=rec.publisher, claimant=ep)
    if rec.publisher == ep:
        return rec
    _check_track_labels(tracks)
    return replace(rec, publisher=ep, tracks=tuple(tracks))


def attach_subscriber(rec: StreamRecord, ep: EndpointId) -> StreamRecord:
    """Add a subscriber. Legal regardless of status; duplicates are a no-op."""
    if not ep:
        raise ValidationError("endpoint id must be non-empty")
    if ep in rec.subscribers:
        return rec
    return replace(rec, subscribers=rec.subscribers | {ep})


def detach(rec: StreamRecord, ep: EndpointId) -> StreamRecord:
    """Remove the endpoint from whichever role it held.

    Removing the publisher returns the stream to idle and clears the track
    list; subscribers are retained as pending. Unknown endpoints are a no-op.
    """
    if rec.publisher == ep:
        rec = replace(rec, publisher=None, tracks=())
    if ep in rec.subscribers:
        rec = replace(rec, subscribers=rec.subscribers - {ep})
    return rec


def add_tracks(rec: StreamRecord, tracks: tuple[TrackDescriptor, ...]) -> StreamRecord:
    """Append or update advertised tracks (matched by label)."""
    by_label = {t.label: t for t in rec.tracks}
    order = [t.label for t in rec.tracks]
    for t in tracks:
        if t.label not in by_label:
            order.append(t.label)
        by_label[t.label] = t
    return replace(rec, tracks=tuple(by_label[l] for l in order))


def remove_tracks(rec: StreamRecord, labels: tuple[str, ...]) -> StreamRecord:
    """Drop advertised tracks by label. Unknown labels raise TrackUnknown."""
    have = {t.label for t in rec.tracks}
    for label in labels:
        if label not in have:
            raise TrackUnknown(f"no track labelled {label!r} on stream {rec.name!r}")
    return replace(rec, tracks=tuple(t for t in rec.tracks if t.label not in labels))
