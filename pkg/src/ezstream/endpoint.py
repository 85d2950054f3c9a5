"""Per-endpoint state machine for one published or subscribed named stream.

A session owns peer links, a local media source (publisher) or remote sink
(subscriber), a pre-connect text queue, and the pause/seal behavior. It is
deliberately service-agnostic: a connector binds it to a specific service by
calling the small surface here (``create_peer_link``, ``apply``,
``set_remote_tracks``, ``peer_gone``, ``service_error``) and by listening to
the session's ``data`` output.

Two sessions can also be cross-wired point-to-point with no service at all::

    v1.on("data", v2.apply)
    v2.on("data", v1.apply)
    v1.publish("s1")
    v2.subscribe("s1")

Peer links follow the offer-answer shape: the side that creates the link
offers (in this system the publisher, prompted by the service), the other
side answers, and frames flow only once both ends are connected. Text sent
with :meth:`EndpointSession.send` and pause hints travel in-band on the
connected link, so a subscriber can never observe a frame after a pause
hint until the matching play hint.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .clocks import Clock
from .core import TrackDescriptor, hash_name, is_hashed_ref, validate_stream_ref
from .errors import (
    IntegrityError,
    LinkUnknown,
    RoleError,
    StateError,
    TrackUnknown,
    ValidationError,
)
from .media import (
    ANSWERER,
    OFFERER,
    LinkMessage,
    MediaFabric,
    MediaFrame,
    MediaSink,
    MediaSource,
    open_frame,
    seal_frame,
)

SEND_QUEUE_LIMIT = 256

# Router: how a link's signaling payload reaches the counterpart.
# (to_endpoint, kind, payload_text) -> None
Router = Callable[[str, str, str], None]


@dataclass
class PeerLink:
    """Simulated peer connection between this session and one counterpart."""

    link_id: str
    side: str  # OFFERER | ANSWERER
    counterpart: str
    stream_tag: str  # hashed stream ref used as the on-wire demux tag
    state: str = "new"
    negotiated_tracks: tuple[TrackDescriptor, ...] = ()
    router: Router | None = None
    fabric: MediaFabric | None = None
    origin: object = None  # connector that created this link, None for direct
    shared: bool = False  # multiplexed by a connector; session must not detach
    n_out: int = 0
    seen: set = field(default_factory=set)

    _LEGAL = {
        ("new", "offer-sent"),
        ("new", "offer-received"),
        ("offer-sent", "connected"),
        ("offer-received", "connected"),
    }

    def transition(self, new_state: str) -> None:
        if new_state == "closed":
            self.state = "closed"
            return
        if (self.state, new_state) not in self._LEGAL:
            raise StateError(f"link {self.link_id}: illegal transition {self.state} -> {new_state}")
        self.state = new_state

    def next_n(self) -> int:
        n = self.n_out
        self.n_out += 1
        return n

    def send_media(self, msg: LinkMessage) -> None:
        if self.state == "connected" and self.fabric is not None:
            self.fabric.send(self.link_id, self.side, msg)


class ForwardSource(MediaSource):
    """Republishes the frames a subscriber session receives (the fork node
    of a broadcast tree). Track set mirrors the upstream descriptor view."""

    def __init__(self, upstream: "EndpointSession"):
        self.upstream = upstream
        self._emit: Callable[[MediaFrame], None] | None = None
        self._stream = ""
        self.emitted: list[MediaFrame] = []
        if upstream.remote_media is None:
            raise ValidationError("upstream session has no remote media to forward")
        upstream.remote_media.tap(self._on_upstream_frame)

    @property
    def tracks(self) -> tuple[TrackDescriptor, ...]:
        return tuple(self.upstream.remote_tracks)

    def start(self, clock: Clock, stream: str, emit: Callable[[MediaFrame], None]) -> None:
        self._emit = emit
        self._stream = stream

    def stop(self) -> None:
        self._emit = None

    def _on_upstream_frame(self, frame: MediaFrame) -> None:
        if self._emit is not None:
            # Payload, seq, and origin timestamp pass through unchanged.
            self._emit(replace(frame, stream=self._stream))


class EndpointSession:
    """One endpoint attached to (at most) one named stream."""

    def __init__(
        self,
        label: str,
        clock: Clock,
        fabric: MediaFabric,
        keep_all_frames: bool = False,
    ):
        self.label = label
        self.clock = clock
        self.fabric = fabric
        self.keep_all_frames = keep_all_frames

        self.role = "unset"
        self.stream_local: str | None = None  # ref as this session addresses it
        self.stream_tag: str | None = None  # hashed form, used on the media wire
        self.connector = None
        self.endpoint_id: str | None = None

        self.links: list[PeerLink] = []
        self.local_media: MediaSource | None = None
        self.remote_media: MediaSink | None = None
        self.remote_tracks: list[TrackDescriptor] = []
        self.remote_paused = False

        self.autopause = False
        self.channel = False
        self.secret: str | None = None
        self.ping: str | None = None
        self.playing = False
        self.muted = False

        self.frames_sent = 0
        self.frames_sent_per_track: dict[str, int] = {}
        self.integrity_errors = 0

        self.timeline: list[tuple[int, str, str]] = []
        self.capture: list[str] = []  # every payload/link message received
        self._listeners: dict[str, list[Callable]] = {}
        self._send_queue: list[str] = []
        self._link_counter = itertools.count(1)
        self._source_running = False

    # -- events ----------------------------------------------------------

    def on(self, event: str, fn: Callable) -> None:
        self._listeners.setdefault(event, []).append(fn)

    def _emit_event(self, event: str, *args) -> None:
        for fn in list(self._listeners.get(event, ())):
            fn(*args)

    def _record(self, kind: str, detail: str = "") -> None:
        self.timeline.append((self.clock.now_ms(), kind, detail))

    # -- track view ------------------------------------------------------

    @property
    def tracks(self) -> tuple[TrackDescriptor, ...]:
        """Tracks this session advertises (publisher) with mute applied."""
        if self.local_media is None:
            return ()
        out = []
        for t in self.local_media.tracks:
            if self.muted and t.kind == "audio":
                t = replace(t, enabled=False)
            out.append(t)
        return tuple(out)

    # -- lifecycle -------------------------------------------------------

    def set_local_media(self, source: MediaSource) -> None:
        self.local_media = source

    def publish(self, stream: str, connector=None) -> None:
        """Publish the local media to a named stream.

        With a connector the service drives link setup; without one the
        session immediately creates a single point-to-point link and emits
        its offer through the ``data`` event.
        """
        if self.role != "unset":
            raise RoleError(f"session {self.label} already has role {self.role}")
        if self.local_media is None:
            raise ValidationError("publish requires local media; call set_local_media first")
        self.stream_local = validate_stream_ref(stream)
        if is_hashed_ref(self.stream_local):
            raise ValidationError("publish requires the raw stream name, not a hashed ref")
        self.stream_tag = hash_name(self.stream_local)
        self.role = "publisher"
        self.connector = connector
        self.playing = True
        self._record("published", self.stream_local)
        self._start_source()
        if connector is not None:
            try:
                connector.publish(self)
            except Exception:
                self._reset_after_failure()
                raise
        else:
            self.endpoint_id = self.endpoint_id or self.label
            self.create_peer_link("peer", router=None)

    def subscribe(self, stream: str, connector=None) -> None:
        """Subscribe to a named stream by raw name or hashed reference."""
        if self.role != "unset":
            raise RoleError(f"session {self.label} already has role {self.role}")
        self.stream_local = validate_stream_ref(stream)
        self.stream_tag = (
            self.stream_local if is_hashed_ref(self.stream_local) else hash_name(self.stream_local)
        )
        self.role = "subscriber"
        self.connector = connector
        self.playing = True
        self.remote_media = MediaSink(keep_all=self.keep_all_frames)
        self._record("subscribed", self.stream_local)
        if connector is not None:
            try:
                connector.subscribe(self)
            except Exception:
                self._reset_after_failure()
                raise
        else:
            self.endpoint_id = self.endpoint_id or self.label

    def stop(self) -> None:
        """Stop the current publish or subscribe and reset to unset."""
        if self.role == "unset":
            return
        conn = self.connector
        self._stop_source()
        for link in list(self.links):
            self._close_link(link)
        if conn is not None:
            conn.stop(self)
        self.role = "unset"
        self.connector = None
        self.playing = False
        self._record("stopped", self.stream_local or "")

    def _reset_after_failure(self) -> None:
        self._stop_source()
        for link in list(self.links):
            self._close_link(link)
        self.role = "unset"
        self.connector = None
        self.playing = False

    # -- connector-facing surface ---------------------------------------

    def bind_endpoint_id(self, ep: str) -> None:
        # First service to identify the session wins; a session published
        # through several services keeps one identity, and each service
        # speaks its own naming via the self_ep it passes to links.
        if self.endpoint_id is None:
            self.endpoint_id = ep

    def create_peer_link(
        self, counterpart: str, router: Router | None = None, origin=None, self_ep: str | None = None
    ) -> PeerLink:
        """Create a link to a counterpart and emit the offer.

        Called by the service/connector when a pairing is needed (on the
        publisher, once per subscriber). The offer payload carries the link
        id, a per-link message number, and the advertised tracks; ``self_ep``
        is this session's name in the calling service's namespace, which
        the counterpart will use for peer-gone matching.
        """
        link = PeerLink(
            link_id=f"{self.endpoint_id or self.label}#{next(self._link_counter)}",
            side=OFFERER,
            counterpart=counterpart,
            stream_tag=self.stream_tag or "",
            router=router,
            fabric=self.fabric,
            origin=origin,
        )
        self.links.append(link)
        # Attach now so nothing the answerer sends right after connecting
        # (queued text, say) can race our answer processing and be lost.
        self.fabric.attach(link.link_id, link.side, self._link_handler(link))
        payload = json.dumps(
            {
                "link": link.link_id,
                "type": "offer",
                "n": link.next_n(),
                "from": self_ep or self.endpoint_id or self.label,
                "sdp": f"sim-sdp:{link.link_id}:offer",
                "tracks": [t.to_dict() for t in self.tracks],
            }
        )
        self._send_signal(link, "OFFER", payload)
        link.transition("offer-sent")
        return link

    def adopt_shared_link(self, link_id: str, side: str, counterpart: str, origin=None) -> PeerLink:
        """Join a connector-owned multiplexed link (relay topologies).

        The connector holds the fabric attachment and demuxes inbound
        traffic itself; the session gets an already-connected facade so its
        outbound path (frames, text, hints) is unchanged.
        """
        link = PeerLink(
            link_id=link_id,
            side=side,
            counterpart=counterpart,
            stream_tag=self.stream_tag or "",
            router=None,
            fabric=self.fabric,
            origin=origin,
            shared=True,
        )
        link.state = "connected"
        self.links.append(link)
        self._on_link_connected(link)
        return link

    def apply(self, payload: str, router: Router | None = None, origin=None) -> None:
        """Apply signaling data produced by a counterpart's ``data`` event."""
        self.capture.append(payload)
        try:
            msg = json.loads(payload)
        except json.JSONDecodeError as e:
            raise ValidationError(f"malformed signaling payload: {e}") from e
        link_id = msg.get("link")
        mtype = msg.get("type")
        if not link_id or mtype not in ("offer", "answer", "candidate"):
            raise ValidationError(f"signaling payload missing link/type: {payload[:80]}")
        link = self._find_link(link_id)

        if mtype == "offer":
            self._apply_offer(link, link_id, msg, router, origin)
        elif mtype == "answer":
            if link is None:
                raise StateError(f"answer for link {link_id} before any offer")
            self._apply_answer(link, msg)
        else:  # candidate: opaque, tolerated on any known link
            if link is None:
                raise LinkUnknown(f"candidate for unknown link {link_id}")
            link.seen.add((mtype, msg.get("n")))

    def _apply_offer(self, link: PeerLink | None, link_id: str, msg: dict, router, origin) -> None:
        if link is not None:
            if ("offer", msg.get("n")) in link.seen:
                return  # duplicate, dropped
            raise StateError(f"unexpected offer for existing link {link_id} in state {link.state}")
        if self.role == "publisher":
            raise StateError("publisher side does not accept offers in this protocol")
        if self.role == "unset":
            raise RoleError("cannot apply an offer before publish or subscribe")
        # A fresh offer from a (re)started publisher supersedes any old link.
        for old in list(self.links):
            if old.counterpart == msg.get("from") or old.state == "closed":
                self._close_link(old)
        link = PeerLink(
            link_id=link_id,
            side=ANSWERER,
            counterpart=msg.get("from", "peer"),
            stream_tag=self.stream_tag or "",
            router=router,
            fabric=self.fabric,
            origin=origin,
        )
        link.seen.add(("offer", msg.get("n")))
        self.links.append(link)
        link.transition("offer-received")
        if msg.get("tracks") is not None:
            self.set_remote_tracks([TrackDescriptor.from_dict(d) for d in msg["tracks"]])
            link.negotiated_tracks = tuple(self.remote_tracks)
        # Attach before answering so no early frame is lost.
        self.fabric.attach(link.link_id, link.side, self._link_handler(link))
        answer = json.dumps(
            {
                "link": link.link_id,
                "type": "answer",
                "n": link.next_n(),
                "from": self.endpoint_id or self.label,
                "sdp": f"sim-sdp:{link.link_id}:answer",
            }
        )
        self._send_signal(link, "ANSWER", answer)
        link.transition("connected")
        self._on_link_connected(link)

    def _apply_answer(self, link: PeerLink, msg: dict) -> None:
        if ("answer", msg.get("n")) in link.seen:
            return
        link.seen.add(("answer", msg.get("n")))
        if link.state == "connected":
            return
        if link.state != "offer-sent":
            raise StateError(f"answer for link {link.link_id} in state {link.state}")
        link.transition("connected")
        self._on_link_connected(link)

    def set_remote_tracks(self, tracks: list[TrackDescriptor]) -> None:
        if [t.to_dict() for t in tracks] == [t.to_dict() for t in self.remote_tracks]:
            return
        self.remote_tracks = list(tracks)
        summary = ",".join(f"{t.kind}:{t.label}:{int(t.enabled)}" for t in tracks)
        self._record("tracks", summary)
        self._emit_event("tracks", list(tracks))

    def peer_gone(self, counterpart: str) -> None:
        """Counterpart left: close its links. A subscriber returns to
        pending and reconnects when a publisher appears again."""
        closed = False
        for link in list(self.links):
            if link.counterpart == counterpart:
                self._close_link(link)
                closed = True
        if closed or self.role == "subscriber":
            self._record("peer-gone", counterpart)
            self._emit_event("peer-gone", counterpart)

    def service_error(self, code: str, detail: str = "") -> None:
        self._record("error", f"{code} {detail}".strip())
        self._emit_event("error", code, detail)
        if code == "PublisherConflict" and self.role == "publisher":
            self._reset_after_failure()
        elif code == "StreamUnknown" and self.role == "subscriber":
            self._reset_after_failure()

    # -- application surface --------------------------------------------

    def send(self, text: str) -> None:
        """Send text over the data channel: publisher to all subscribers,
        subscriber to the publisher. Queued (bounded) until first connect."""
        if self.role == "unset":
            raise RoleError("send requires an active publish or subscribe")
        self.channel = True
        connected = [l for l in self.links if l.state == "connected"]
        if not connected:
            if len(self._send_queue) >= SEND_QUEUE_LIMIT:
                self._send_queue.pop(0)
            self._send_queue.append(text)
            return
        for link in connected:
            link.send_media(self._control("text", text))

    def add_tracks(self, tracks: tuple[TrackDescriptor, ...]) -> None:
        """Add (or update in place, by label) tracks on the live publish."""
        if self.role != "publisher":
            raise RoleError("only the publisher can add tracks")
        assert self.local_media is not None
        merged = {t.label: t for t in self.local_media.tracks}
        for t in tracks:
            merged[t.label] = t
        self._set_local_tracks(tuple(merged.values()))
        if self.connector is not None:
            self.connector.add_tracks(self, tuple(tracks))

    def remove_tracks(self, labels: tuple[str, ...]) -> None:
        if self.role != "publisher":
            raise RoleError("only the publisher can remove tracks")
        assert self.local_media is not None
        have = {t.label for t in self.local_media.tracks}
        for label in labels:
            if label not in have:
                raise TrackUnknown(f"no track labelled {label!r}")
        self._set_local_tracks(tuple(t for t in self.local_media.tracks if t.label not in labels))
        if self.connector is not None:
            self.connector.remove_tracks(self, tuple(labels))

    def _set_local_tracks(self, tracks: tuple[TrackDescriptor, ...]) -> None:
        if hasattr(self.local_media, "set_tracks"):
            self.local_media.set_tracks(tracks)  # type: ignore[union-attr]
        else:
            self.local_media.tracks = tracks  # type: ignore[union-attr]
        self._record("tracks-local", ",".join(t.label for t in tracks))
        self._broadcast_tracks()

    def _broadcast_tracks(self) -> None:
        # In-band, so subscribers always learn a new track before its frames.
        data = json.dumps([t.to_dict() for t in self.tracks])
        for link in self.links:
            link.send_media(self._control("tracks", data))

    def set_playing(self, playing: bool) -> None:
        """Pause or resume. A publisher with autopause sends the hint
        in-band strictly before the frame gap (and before the first new
        frame on resume)."""
        if self.role == "unset":
            raise RoleError("set_playing requires an active publish or subscribe")
        if playing == self.playing:
            return
        if self.role == "publisher":
            if not playing:
                if self.autopause:
                    self._send_hint("pause")
                self.playing = False
                self._stop_source()
            else:
                self.playing = True
                if self.autopause:
                    self._send_hint("play")
                self._start_source()
        else:
            self.playing = playing
        self._record("playing", str(playing))

    def set_muted(self, muted: bool) -> None:
        if muted == self.muted:
            return
        self.muted = muted
        self._record("muted", str(muted))
        if self.role == "publisher" and self.local_media is not None:
            self._broadcast_tracks()
            if self.connector is not None:
                self.connector.add_tracks(self, self.tracks)

    def set_input(self, source) -> None:
        """Replace the local media. Accepts a MediaSource or another
        session, whose received frames are then republished (fork)."""
        if self.role == "subscriber":
            raise RoleError("a subscriber cannot set a publish input")
        if isinstance(source, EndpointSession):
            upstream = source
            source = ForwardSource(upstream)
            # The upstream track set may still be unknown; re-advertise when
            # it settles so downstream subscribers accept forwarded frames.
            upstream.on("tracks", lambda _tracks: self._on_upstream_tracks())
        was_running = self._source_running
        if was_running:
            self._stop_source()
        self.local_media = source
        if was_running:
            self._start_source()

    def _on_upstream_tracks(self) -> None:
        if self.role != "publisher":
            return
        self._record("tracks-local", ",".join(t.label for t in self.tracks))
        self._broadcast_tracks()
        if self.connector is not None:
            self.connector.add_tracks(self, self.tracks)

    # -- internals -------------------------------------------------------

    def _control(self, kind: str, data: str) -> LinkMessage:
        payload = json.dumps(
            {"stream": self.stream_tag, "from": self.endpoint_id or self.label, "data": data}
        )
        return LinkMessage(kind=kind, data=payload)

    def _send_hint(self, which: str) -> None:
        for link in self.links:
            link.send_media(self._control(which, which))
        self._record("pause-hint-sent", which)

    def _send_signal(self, link: PeerLink, kind: str, payload: str) -> None:
        if link.router is not None:
            link.router(link.counterpart, kind, payload)
        else:
            # Direct mode: deliver on the next clock turn, like a browser
            # event, so cross-wired sessions may publish/subscribe in any
            # order within the same instant.
            self.clock.call_later(0, self._emit_event, "data", payload)

    def _find_link(self, link_id: str) -> Optional[PeerLink]:
        for link in self.links:
            if link.link_id == link_id and link.state != "closed":
                return link
        return None

    def _close_link(self, link: PeerLink) -> None:
        if link.state == "closed":
            return
        link.transition("closed")
        if link.fabric is not None and not link.shared:
            link.fabric.detach(link.link_id, link.side)
        if link in self.links:
            self.links.remove(link)
        self._record("link-closed", link.link_id)

    def _on_link_connected(self, link: PeerLink) -> None:
        self._record("link-connected", link.link_id)
        self._emit_event("connected", link)
        if self.role == "publisher":
            # Tracks may have changed since the offer; re-advertise in-band
            # so the control always precedes this link's first frame.
            data = json.dumps([t.to_dict() for t in self.tracks])
            link.send_media(self._control("tracks", data))
        if self._send_queue:
            queued, self._send_queue = self._send_queue, []
            for text in queued:
                link.send_media(self._control("text", text))

    def _link_handler(self, link: PeerLink) -> Callable[[LinkMessage], None]:
        def handle(msg: LinkMessage) -> None:
            self.handle_link_message(link, msg)

        return handle

    def handle_link_message(self, link: PeerLink, msg: LinkMessage) -> None:
        """Process one in-band message from a connected link. Also the entry
        point connectors use when they own the link attachment (SFU)."""
        self.capture.append(msg.describe())
        if msg.kind == "frame" and msg.frame is not None:
            self._on_frame(msg.frame)
            return
        if msg.kind == "text":
            data = json.loads(msg.data)
            self._record("message", data["data"])
            self._emit_event("message", data["data"], data.get("from"))
            return
        if msg.kind in ("pause", "play"):
            self.remote_paused = msg.kind == "pause"
            self._record("pause-hint", msg.kind)
            self._emit_event("pause-hint", msg.kind)
            return
        if msg.kind == "tracks":
            data = json.loads(msg.data)
            self.set_remote_tracks([TrackDescriptor.from_dict(d) for d in json.loads(data["data"])])

    def _on_frame(self, frame: MediaFrame) -> None:
        if self.role != "subscriber" or self.remote_media is None:
            return
        if not self.playing:
            return
        if frame.sealed:
            if not self.secret:
                self.integrity_errors += 1
                self._record("frame-dropped", f"{frame.track_label}#{frame.seq} sealed, no secret")
                return
            try:
                frame = open_frame(frame, self.secret)
            except IntegrityError:
                self.integrity_errors += 1
                self._record("frame-dropped", f"{frame.track_label}#{frame.seq} integrity")
                return
        if frame.track_label not in {t.label for t in self.remote_tracks}:
            self._record("frame-dropped", f"{frame.track_label}#{frame.seq} unknown track")
            return
        # Subscribers know the stream only by the form they addressed it with.
        frame = replace(frame, stream=self.stream_local or "")
        self._record("frame", f"{frame.track_label}#{frame.seq}")
        self.remote_media.deliver(frame, self.clock.now_ms())
        self._emit_event("frame", frame)

    def _start_source(self) -> None:
        if self.local_media is None or self._source_running or not self.playing:
            return
        self.local_media.start(self.clock, self.stream_local or "", self._on_source_frame)
        self._source_running = True

    def _stop_source(self) -> None:
        if self.local_media is not None and self._source_running:
            self.local_media.stop()
        self._source_running = False

    def _on_source_frame(self, frame: MediaFrame) -> None:
        if not self.playing or self.role != "publisher":
            return
        enabled = {t.label for t in self.tracks if t.enabled}
        if frame.track_label not in enabled:
            return
        if self.secret:
            frame = seal_frame(frame, self.secret)
        # The media wire carries the hashed tag, never the raw name.
        wire_frame = replace(frame, stream=self.stream_tag or "")
        sent = False
        for link in self.links:
            if link.state == "connected":
                link.send_media(LinkMessage(kind="frame", frame=wire_frame))
                sent = True
        if sent:
            self.frames_sent += 1
            self.frames_sent_per_track[frame.track_label] = (
                self.frames_sent_per_track.get(frame.track_label, 0) + 1
            )
