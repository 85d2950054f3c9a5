"""Simulated media plane: frames, sources, sinks, end-to-end sealing, and
the in-process fabric that carries link traffic between connected peers.

Frames stand in for encoded media. A synthetic source emits a deterministic
pseudorandom payload per track at a fixed simulated rate, so transcripts are
reproducible and content-addressable. Sealing is authenticated symmetric
encryption keyed from a shared secret; services in the media path forward
sealed bytes they cannot open.
"""

from __future__ import annotations

import base64
import hashlib
import json
import random
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .clocks import Clock, TimerHandle
from .core import TrackDescriptor
from .errors import IntegrityError, ValidationError

DEFAULT_FPS = 20
DEFAULT_FRAME_BYTES = 256
SINK_RETAIN_PER_TRACK = 64


@dataclass(frozen=True)
class MediaFrame:
    """One simulated media frame on one track."""

    stream: str
    track_label: str
    seq: int
    ts_ms: int
    payload: bytes
    sealed: bool = False

    def to_wire(self) -> dict:
        return {
            "stream": self.stream,
            "track": self.track_label,
            "seq": self.seq,
            "ts": self.ts_ms,
            "payload": base64.b64encode(self.payload).decode("ascii"),
            "sealed": self.sealed,
        }

    @classmethod
    def from_wire(cls, d: dict) -> "MediaFrame":
        return cls(
            stream=d["stream"],
            track_label=d["track"],
            seq=int(d["seq"]),
            ts_ms=int(d["ts"]),
            payload=base64.b64decode(d["payload"]),
            sealed=bool(d.get("sealed", False)),
        )


# -- end-to-end sealing --------------------------------------------------

_KEY_SALT = b"ezstream.frame.seal.v1"


def _derive_key(secret: str) -> bytes:
    if not secret:
        raise ValidationError("sealing secret must be non-empty")
    hkdf = HKDF(algorithm=SHA256(), length=32, salt=_KEY_SALT, info=b"aesgcm-frame-key")
    return hkdf.derive(secret.encode("utf-8"))


def _nonce(frame: MediaFrame) -> bytes:
    # Deterministic per (track, seq): replays of a frame reuse its nonce and
    # are therefore detectable by the receiver.
    track_part = hashlib.sha256(frame.track_label.encode("utf-8")).digest()[:4]
    return track_part + frame.seq.to_bytes(8, "big")


def _aad(frame: MediaFrame) -> bytes:
    # Deliberately excludes the stream name: receivers may know the stream
    # only by its hashed reference.
    return f"{frame.track_label}:{frame.seq}".encode("utf-8")


def seal_frame(frame: MediaFrame, secret: str) -> MediaFrame:
    """Encrypt and authenticate a frame payload with the shared secret."""
    if frame.sealed:
        raise ValidationError("frame is already sealed")
    ct = AESGCM(_derive_key(secret)).encrypt(_nonce(frame), frame.payload, _aad(frame))
    return replace(frame, payload=ct, sealed=True)


def open_frame(frame: MediaFrame, secret: str) -> MediaFrame:
    """Inverse of :func:`seal_frame`. Raises IntegrityError on key mismatch
    or tampering; such frames must be discarded, never delivered."""
    if not frame.sealed:
        raise ValidationError("frame is not sealed")
    try:
        pt = AESGCM(_derive_key(secret)).decrypt(_nonce(frame), frame.payload, _aad(frame))
    except InvalidTag as e:
        raise IntegrityError(
            f"frame {frame.track_label}#{frame.seq} failed authentication"
        ) from e
    return replace(frame, payload=pt, sealed=False)


# -- sources -------------------------------------------------------------

EmitFn = Callable[[MediaFrame], None]


class MediaSource:
    """Generator of frames for a fixed set of track descriptors."""

    tracks: tuple[TrackDescriptor, ...]

    def start(self, clock: Clock, stream: str, emit: EmitFn) -> None:
        raise NotImplementedError

    def stop(self) -> None:
        raise NotImplementedError


class SyntheticSource(MediaSource):
    """Deterministic pattern source: per-track seeded pseudorandom payloads,
    fixed bytes per frame, fixed simulated frame rate.

    Per-track seq counters persist across stop/start, so pausing produces a
    gap in time but not in sequence numbers.
    """

    def __init__(
        self,
        tracks: tuple[TrackDescriptor, ...],
        seed: str = "0",
        fps: int = DEFAULT_FPS,
        frame_bytes: int = DEFAULT_FRAME_BYTES,
    ):
        self.tracks = tuple(tracks)
        self.fps = fps
        self.frame_bytes = frame_bytes
        self._interval = max(1, round(1000 / fps))
        self._rngs = {t.label: random.Random(f"{seed}:{t.label}") for t in self.tracks}
        self._seqs = {t.label: 0 for t in self.tracks}
        self._timer: TimerHandle | None = None
        self._clock: Clock | None = None
        self._stream = ""
        self._emit: EmitFn | None = None
        self.emitted: list[MediaFrame] = []

    def start(self, clock: Clock, stream: str, emit: EmitFn) -> None:
        if self._timer is not None:
            return
        self._clock, self._stream, self._emit = clock, stream, emit
        self._timer = clock.call_later(self._interval, self._tick)

    def stop(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None

    def set_tracks(self, tracks: tuple[TrackDescriptor, ...]) -> None:
        self.tracks = tuple(tracks)
        for t in tracks:
            self._rngs.setdefault(t.label, random.Random(f"new:{t.label}"))
            self._seqs.setdefault(t.label, 0)

    def _tick(self) -> None:
        assert self._clock is not None and self._emit is not None
        for t in self.tracks:
            if not t.enabled:
                continue
            seq = self._seqs[t.label]
            self._seqs[t.label] = seq + 1
            frame = MediaFrame(
                stream=self._stream,
                track_label=t.label,
                seq=seq,
                ts_ms=self._clock.now_ms(),
                payload=self._rngs[t.label].randbytes(self.frame_bytes),
            )
            self.emitted.append(frame)
            self._emit(frame)
        self._timer = self._clock.call_later(self._interval, self._tick)


class FileReplaySource(MediaSource):
    """Replay a recorded frame sequence from a newline-JSON file.

    Each line is the wire form of one frame; ``ts`` values are treated as
    offsets from the moment the source starts.
    """

    def __init__(self, path: str):
        self.path = path
        self._frames = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self._frames.append(MediaFrame.from_wire(json.loads(line)))
        labels = {}
        for f in self._frames:
            labels.setdefault(f.track_label, "video")
        self.tracks = tuple(TrackDescriptor(kind="video", label=l) for l in labels)
        self._timers: list[TimerHandle] = []
        self.emitted: list[MediaFrame] = []

    def start(self, clock: Clock, stream: str, emit: EmitFn) -> None:
        if self._timers:
            return
        base = clock.now_ms()
        t0 = self._frames[0].ts_ms if self._frames else 0

        def fire(frame: MediaFrame) -> None:
            out = replace(frame, stream=stream, ts_ms=clock.now_ms())
            self.emitted.append(out)
            emit(out)

        for f in self._frames:
            self._timers.append(clock.call_at(base + (f.ts_ms - t0), fire, f))

    def stop(self) -> None:
        for t in self._timers:
            t.cancel()
        self._timers = []


def write_frame_file(path: str, frames: list[MediaFrame]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in frames:
            fh.write(json.dumps(f.to_wire(), separators=(",", ":")) + "\n")


# -- sink ----------------------------------------------------------------

class MediaSink:
    """Records frames received by a subscriber session.

    Keeps per-track delivery counters and a bounded window of recent frames;
    with ``keep_all`` the full delivered sequence is retained for payload
    identity checks in tests.
    """

    def __init__(self, keep_all: bool = False, retain: int = SINK_RETAIN_PER_TRACK):
        self.keep_all = keep_all
        self.counts: dict[str, int] = {}
        self.recent: dict[str, deque[MediaFrame]] = {}
        self.frames: list[MediaFrame] = []
        self.arrivals: list[tuple[int, MediaFrame]] = []
        self._retain = retain
        self._taps: list[EmitFn] = []

    def deliver(self, frame: MediaFrame, now_ms: int) -> None:
        self.counts[frame.track_label] = self.counts.get(frame.track_label, 0) + 1
        self.recent.setdefault(frame.track_label, deque(maxlen=self._retain)).append(frame)
        if self.keep_all:
            self.frames.append(frame)
            self.arrivals.append((now_ms, frame))
        for tap in list(self._taps):
            tap(frame)

    def tap(self, fn: EmitFn) -> None:
        """Register a live consumer of delivered frames (used to republish)."""
        self._taps.append(fn)

    def total(self) -> int:
        return sum(self.counts.values())

    def payloads(self, track_label: str) -> list[bytes]:
        src = self.frames if self.keep_all else list(self.recent.get(track_label, ()))
        return [f.payload for f in src if f.track_label == track_label]


# -- link fabric ---------------------------------------------------------

OFFERER = "o"
ANSWERER = "a"


@dataclass
class LinkMessage:
    """What travels over a connected peer link: a frame or an in-band
    control message (data-channel text, pause/play hint, track update)."""

    kind: str  # "frame" | "text" | "pause" | "play" | "tracks"
    frame: MediaFrame | None = None
    data: str = ""

    def describe(self) -> str:
        if self.kind == "frame" and self.frame is not None:
            f = self.frame
            return f"frame {f.stream} {f.track_label}#{f.seq} {f.payload.hex()}"
        return f"{self.kind} {self.data}"


class MediaFabric:
    """In-process transport between the two ends of each peer link.

    Both ends attach under the link's wire id; messages are delivered with a
    seeded latency, clamped so each direction stays FIFO. An unattached far
    end simply drops traffic, which is what a cross-process simulated link
    looks like.
    """

    def __init__(self, clock: Clock, seed: str = "0", min_latency_ms: int = 1, max_latency_ms: int = 20):
        self.clock = clock
        self._rng = random.Random(f"{seed}:fabric")
        self._lat = (min_latency_ms, max_latency_ms)
        self._ends: dict[tuple[str, str], Callable[[LinkMessage], None]] = {}
        self._last_arrival: dict[tuple[str, str], int] = {}
        self.dropped = 0

    def attach(self, link_id: str, side: str, handler: Callable[[LinkMessage], None]) -> None:
        self._ends[(link_id, side)] = handler

    def detach(self, link_id: str, side: str) -> None:
        self._ends.pop((link_id, side), None)

    def attached(self, link_id: str, side: str) -> bool:
        return (link_id, side) in self._ends

    def send(self, link_id: str, from_side: str, msg: LinkMessage) -> None:
        to_side = ANSWERER if from_side == OFFERER else OFFERER
        key = (link_id, to_side)
        handler = self._ends.get(key)
        if handler is None:
            self.dropped += 1
            return
        latency = self._rng.randint(*self._lat)
        arrival = max(self.clock.now_ms() + latency, self._last_arrival.get(key, 0))
        self._last_arrival[key] = arrival

        def deliver() -> None:
            current = self._ends.get(key)
            if current is not None:
                current(msg)
            else:
                self.dropped += 1

        self.clock.call_at(arrival, deliver)
