"""Broker-backed connector: sessions talk the envelope wire grammar to a
stream broker, which relays signaling so publishers and subscribers form a
full mesh of peer links.

Two transports carry the same client logic:

* :class:`SimBrokerTransport` pairs with an in-process :class:`BrokerCore`
  under the virtual clock (deterministic).
* :class:`LiveBrokerTransport` dials a websocket URL; incoming lines are
  re-serialized onto the session's wall clock thread.

Transport loss triggers a bounded reconnect: 3 attempts with exponential
backoff starting at 0.5 s, after which the session gets a transport error.
"""

from __future__ import annotations

import json
import logging
from typing import Callable, Optional

from ..broker.core import BrokerCore
from ..clocks import Clock
from ..core import TrackDescriptor
from ..errors import (
    EzStreamError,
    TransportError,
    ValidationError,
)
from ..media import LinkMessage
from ..wire import MessageKind, SignalEnvelope, decode, encode
from .base import Connector

log = logging.getLogger("ezstream.connectors.broker")

RECONNECT_ATTEMPTS = 3
RECONNECT_BASE_MS = 500


class SimBrokerTransport:
    """In-process pipe to a BrokerCore, one hop of virtual-clock latency."""

    def __init__(self, core: BrokerCore, clock: Clock, token: Optional[str] = None):
        self.core = core
        self.clock = clock
        self.token = token
        self.ep: Optional[str] = None
        self._on_line: Optional[Callable[[bytes], None]] = None
        self._on_drop: Optional[Callable[[str], None]] = None
        self._open = False

    def connect(self, on_line: Callable[[bytes], None], on_drop: Callable[[str], None]) -> None:
        self._on_line = on_line
        self._on_drop = on_drop
        if not self.core.check_token(self.token):
            self.clock.call_later(0, on_drop, "auth")
            return
        self._open = True
        self.ep = self.core.accept(self._pump, self._closed_by_core)

    def _pump(self) -> None:
        self.clock.call_later(0, self._drain)

    def _drain(self) -> None:
        if self.ep is None:
            return
        for line in self.core.take(self.ep):
            if self._open and self._on_line is not None:
                self._on_line(line)

    def _closed_by_core(self) -> None:
        if self._open:
            self._open = False
            if self._on_drop is not None:
                self.clock.call_later(0, self._on_drop, "closed by broker")

    def send(self, line: bytes) -> None:
        if not self._open or self.ep is None:
            raise TransportError("transport not open")
        self.clock.call_later(0, self.core.handle_line, self.ep, line)

    def close(self) -> None:
        if self._open and self.ep is not None:
            self._open = False
            self.clock.call_later(0, self.core.disconnect, self.ep)

    def kill(self) -> None:
        """Fault injection: drop without closing handshake."""
        if self._open:
            self._open = False
            ep, self.ep = self.ep, None
            self.clock.call_later(0, self.core.disconnect, ep)
            if self._on_drop is not None:
                self.clock.call_later(0, self._on_drop, "transport lost")


class LiveBrokerTransport:
    """Websocket client; delivery is serialized onto the session clock."""

    def __init__(self, url: str, clock: Clock, token: Optional[str] = None):
        self.url = url
        self.clock = clock
        self.token = token
        self._ws = None
        self._on_line = None
        self._on_drop = None
        self._open = False

    def connect(self, on_line, on_drop) -> None:
        import threading

        from websockets.sync.client import connect as ws_connect

        self._on_line = on_line
        self._on_drop = on_drop
        url = self.url
        if self.token:
            sep = "&" if "?" in url else "?"
            url = f"{url}{sep}token={self.token}"
        try:
            self._ws = ws_connect(url, open_timeout=5)
        except Exception as e:
            self.clock.call_later(0, on_drop, f"connect failed: {e}")
            return
        self._open = True

        def reader():
            try:
                for message in self._ws:
                    data = message.encode("utf-8") if isinstance(message, str) else message
                    self.clock.call_later(0, self._deliver, data)
            except Exception:
                pass
            if self._open:
                self._open = False
                self.clock.call_later(0, self._on_drop, "connection lost")

        threading.Thread(target=reader, daemon=True).start()

    def _deliver(self, data: bytes) -> None:
        if self._open and self._on_line is not None:
            self._on_line(data)

    def send(self, line: bytes) -> None:
        if not self._open or self._ws is None:
            raise TransportError("transport not open")
        self._ws.send(line.decode("utf-8"))

    def close(self) -> None:
        self._open = False
        if self._ws is not None:
            try:
                self._ws.close()
            except Exception:
                pass

    kill = close


class _Channel:
    """One session's conversation with the broker."""

    def __init__(self, connector: "BrokerConnector", sess):
        self.connector = connector
        self.sess = sess
        self.clock = sess.clock
        self.transport = None
        self.state = "idle"  # idle | connecting | ready | closed
        self.attempts = 0
        self.ep: Optional[str] = None  # broker-assigned, refreshed per welcome
        self._seq: dict[str, int] = {}
        self._announced = False
        self._pending: list[tuple] = []  # ops issued before ready

    # -- lifecycle -------------------------------------------------------

    def open(self) -> None:
        self.state = "connecting"
        self.transport = self.connector.make_transport()
        self.transport.connect(self._on_line, self._on_drop)

    def close(self) -> None:
        self.state = "closed"
        if self.transport is not None:
            self.transport.close()

    def _on_drop(self, reason: str) -> None:
        if self.state == "closed":
            return
        was_ready = self.state == "ready"
        self.state = "connecting"
        if was_ready:
            for link in list(self.sess.links):
                self.sess.peer_gone(link.counterpart)
        if self.sess.role == "unset":
            self.state = "closed"
            return
        if self.attempts >= RECONNECT_ATTEMPTS:
            self.state = "closed"
            self.sess.service_error("TransportError", f"gave up after {self.attempts} attempts: {reason}")
            return
        delay = RECONNECT_BASE_MS * (2**self.attempts)
        self.attempts += 1
        self._announced = False
        self.clock.call_later(delay, self._reconnect)

    def _reconnect(self) -> None:
        if self.state != "connecting" or self.sess.role == "unset":
            return
        self.transport = self.connector.make_transport()
        self.transport.connect(self._on_line, self._on_drop)

    # -- outbound --------------------------------------------------------

    def _next_seq(self, stream: str) -> int:
        n = self._seq.get(stream, 0)
        self._seq[stream] = n + 1
        return n

    def send_envelope(self, kind: MessageKind, payload: str = "", to: Optional[str] = None) -> None:
        stream = self.sess.stream_local
        env = SignalEnvelope(
            stream=stream,
            sender=self.ep or self.sess.endpoint_id,
            to=to,
            kind=kind,
            seq=self._next_seq(stream),
            payload=payload,
        )
        self.transport.send(encode(env))

    def announce(self) -> None:
        """Send PUBLISH or SUBSCRIBE for the session's current role."""
        if self.state != "ready":
            return
        role = self.sess.role
        if role == "publisher":
            body = {"tracks": [t.to_dict() for t in self.sess.tracks]}
            if self.sess.ping:
                body["ping"] = self.sess.ping
            self.send_envelope(MessageKind.PUBLISH, json.dumps(body))
        elif role == "subscriber":
            body = {}
            if self.sess.ping:
                body["ping"] = self.sess.ping
            self.send_envelope(MessageKind.SUBSCRIBE, json.dumps(body) if body else "")
        self._announced = True
        for op in self._pending:
            self._do(*op)
        self._pending.clear()

    def op(self, *op) -> None:
        if self.state == "ready" and self._announced:
            self._do(*op)
        else:
            self._pending.append(op)

    def _do(self, name: str, *args) -> None:
        if name == "stop":
            self.send_envelope(MessageKind.STOP)
            self.close()
        elif name == "add_tracks":
            (tracks,) = args
            self.send_envelope(
                MessageKind.TRACKS_ADDED,
                json.dumps({"tracks": [t.to_dict() for t in tracks]}),
            )
        elif name == "remove_tracks":
            (labels,) = args
            self.send_envelope(MessageKind.TRACKS_REMOVED, json.dumps({"labels": list(labels)}))

    # -- inbound ---------------------------------------------------------

    def _on_line(self, line: bytes) -> None:
        # Full transcript capture: every byte the broker sends this session.
        self.sess.capture.append(line.decode("utf-8", "replace"))
        try:
            env = decode(line)
        except EzStreamError as e:
            log.warning("undecodable broker line: %s", e)
            return
        if env.kind is MessageKind.EVENT:
            self._on_event(env)
        elif env.kind is MessageKind.ERROR:
            body = json.loads(env.payload) if env.payload else {}
            self.sess.service_error(body.get("code", "error"), body.get("detail", ""))
            if self.sess.role == "unset":  # the error voided this attachment
                self.close()
                self.connector.channels.pop(id(self.sess), None)
        elif env.kind in (MessageKind.OFFER, MessageKind.ANSWER, MessageKind.CANDIDATE):
            try:
                self.sess.apply(env.payload, router=self._link_router)
            except EzStreamError as e:
                log.warning("apply failed for %s: %s", self.sess.label, e)
        elif env.kind is MessageKind.TEXT:
            self.sess.handle_link_message(
                None,
                LinkMessage(
                    kind="text",
                    data=json.dumps({"stream": env.stream, "from": env.sender, "data": env.payload}),
                ),
            )
        elif env.kind is MessageKind.PAUSE_HINT:
            which = env.payload if env.payload in ("pause", "play") else "pause"
            self.sess.handle_link_message(None, LinkMessage(kind=which, data=""))
        elif env.kind is MessageKind.TRACKS_ADDED:
            body = json.loads(env.payload) if env.payload else {}
            incoming = [TrackDescriptor.from_dict(d) for d in body.get("tracks", [])]
            merged = {t.label: t for t in self.sess.remote_tracks}
            for t in incoming:
                merged[t.label] = t
            self.sess.set_remote_tracks(list(merged.values()))
        elif env.kind is MessageKind.TRACKS_REMOVED:
            body = json.loads(env.payload) if env.payload else {}
            gone = set(body.get("labels", []))
            self.sess.set_remote_tracks([t for t in self.sess.remote_tracks if t.label not in gone])

    def _on_event(self, env: SignalEnvelope) -> None:
        body = json.loads(env.payload) if env.payload else {}
        event = body.get("event")
        if event == "welcome":
            self.ep = body["endpoint"]
            self.sess.bind_endpoint_id(self.ep)
            self.state = "ready"
            self.attempts = 0
            self.announce()
        elif event == "subscriber-joined":
            if self.sess.role == "publisher":
                self.sess.create_peer_link(
                    body["endpoint"], router=self._link_router, origin=self.connector, self_ep=self.ep
                )
        elif event == "publisher-live":
            tracks = [TrackDescriptor.from_dict(d) for d in body.get("tracks", [])]
            if tracks:
                self.sess.set_remote_tracks(tracks)
        elif event == "peer-gone":
            self.sess.peer_gone(body["endpoint"])

    def _link_router(self, to_ep: str, kind: str, payload: str) -> None:
        if self.state != "ready":
            return
        self.send_envelope(MessageKind(kind), payload, to=to_ep)


class BrokerConnector(Connector):
    def __init__(self, make_transport: Callable[[], object]):
        self.make_transport = make_transport
        self.channels: dict[int, _Channel] = {}

    @classmethod
    def sim(cls, core: BrokerCore, clock: Clock, token: Optional[str] = None) -> "BrokerConnector":
        return cls(lambda: SimBrokerTransport(core, clock, token=token))

    @classmethod
    def live(cls, url: str, clock: Clock, token: Optional[str] = None) -> "BrokerConnector":
        return cls(lambda: LiveBrokerTransport(url, clock, token=token))

    def _channel(self, sess, create: bool = False) -> _Channel:
        key = id(sess)
        if key not in self.channels:
            if not create:
                raise ValidationError("session has no open broker channel")
            self.channels[key] = _Channel(self, sess)
        return self.channels[key]

    def publish(self, sess) -> None:
        self._channel(sess, create=True).open()

    def subscribe(self, sess) -> None:
        self._channel(sess, create=True).open()

    def stop(self, sess) -> None:
        channel = self.channels.pop(id(sess), None)
        if channel is not None:
            if channel.state == "ready":
                channel._do("stop")
            else:
                channel.close()

    def add_tracks(self, sess, tracks) -> None:
        self._channel(sess).op("add_tracks", tuple(tracks))

    def remove_tracks(self, sess, labels) -> None:
        self._channel(sess).op("remove_tracks", tuple(labels))

    def kill_transport(self, sess) -> None:
        """Fault injection for scenarios: drop the session's transport."""
        channel = self.channels.get(id(sess))
        if channel is not None and channel.transport is not None:
            channel.transport.kill()
