"""Transport-agnostic broker: session registry, stream records, relay rules.

The core never touches sockets. A transport calls :meth:`BrokerCore.accept`
per connection, feeds decoded-or-raw lines to :meth:`handle_line`, drains
outbound lines via :meth:`take`, and reports loss with :meth:`disconnect`.
The same core therefore runs under the deterministic simulator and under
the websocket server.

Privacy rule: every envelope leaving the broker carries the stream in the
form that recipient used to address it. A subscriber that joined by hashed
reference never receives the raw name in any byte.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..clocks import Clock
from ..core import (
    StreamRecord,
    TrackDescriptor,
    add_tracks,
    attach_publisher,
    attach_subscriber,
    detach,
    hash_name,
    is_hashed_ref,
    remove_tracks,
)
from ..errors import (
    DecodeError,
    MembershipError,
    PublisherConflict,
    RoleError,
    StreamUnknown,
    ValidationError,
)
from ..wire import LINK_KINDS, MessageKind, SignalEnvelope, decode, encode, route_rule

log = logging.getLogger("ezstream.broker")

SYS_STREAM = "sys"
SRV_SENDER = "srv"
QUEUE_LIMIT = 1024
DEFAULT_IDLE_GC_SECONDS = 60

# webhook_sender(url, body) -> None; must not block the caller.
WebhookSender = Callable[[str, dict], None]


@dataclass
class BrokerPolicy:
    token: Optional[str] = None
    idle_gc_seconds: float = DEFAULT_IDLE_GC_SECONDS
    queue_limit: int = QUEUE_LIMIT


@dataclass
class _Session:
    ep: str
    notify: Callable[[], None]
    on_close: Optional[Callable[[], None]] = None
    outbox: deque = field(default_factory=deque)
    # stream name -> the form this session used to address it
    forms: dict = field(default_factory=dict)
    roles: set = field(default_factory=set)  # (stream name, "publisher"|"subscriber")
    last_seq: dict = field(default_factory=dict)  # stream name -> last inbound seq
    srv_seq: dict = field(default_factory=dict)  # stream form -> next broker seq
    pings: dict = field(default_factory=dict)  # (stream name, role) -> [urls]
    closed: bool = False


class BrokerCore:
    def __init__(
        self,
        clock: Clock,
        policy: BrokerPolicy | None = None,
        webhook_sender: WebhookSender | None = None,
    ):
        self.clock = clock
        self.policy = policy or BrokerPolicy()
        self.webhook_sender = webhook_sender
        self.streams: dict[str, StreamRecord] = {}
        self.hash_index: dict[str, str] = {}
        self.sessions: dict[str, _Session] = {}
        self._next_id = 1
        self._gc_handles: dict[str, object] = {}
        self.stats = {
            "accepted": 0,
            "relayed": 0,
            "errors": 0,
            "dropped_dups": 0,
            "overflows": 0,
            "webhooks": 0,
            "gc_removed": 0,
        }

    # -- transport surface ----------------------------------------------

    def check_token(self, provided: Optional[str]) -> bool:
        return self.policy.token is None or provided == self.policy.token

    def accept(self, notify: Callable[[], None], on_close: Callable[[], None] | None = None) -> str:
        ep = f"ep-{self._next_id}"
        self._next_id += 1
        sess = _Session(ep=ep, notify=notify, on_close=on_close)
        self.sessions[ep] = sess
        self.stats["accepted"] += 1
        self._event(sess, SYS_STREAM, {"event": "welcome", "endpoint": ep})
        return ep

    def take(self, ep: str) -> list[bytes]:
        sess = self.sessions.get(ep)
        if sess is None:
            return []
        out = list(sess.outbox)
        sess.outbox.clear()
        return out

    def handle_line(self, ep: str, line: bytes | str) -> None:
        sess = self.sessions.get(ep)
        if sess is None or sess.closed:
            return
        try:
            env = decode(line)
        except DecodeError as e:
            self.stats["errors"] += 1
            self._error(sess, SYS_STREAM, type(e).__name__, str(e))
            return
        if env.sender != ep:
            self.stats["errors"] += 1
            self._error(sess, env.stream, "ValidationError", "from must equal the session id")
            return
        try:
            self._dispatch(sess, env)
        except (ValidationError, MembershipError, RoleError, StreamUnknown) as e:
            self.stats["errors"] += 1
            self._error(sess, env.stream, type(e).__name__, self._scrub(env.stream, str(e)))
        except PublisherConflict as e:
            self.stats["errors"] += 1
            self._error(sess, env.stream, "PublisherConflict", self._scrub(env.stream, str(e)))

    def disconnect(self, ep: str) -> None:
        sess = self.sessions.pop(ep, None)
        if sess is None:
            return
        sess.closed = True
        for stream, role in sorted(sess.roles):
            self._detach_role(sess, stream, role, notify_self=False)
        if sess.on_close is not None:
            sess.on_close()

    # -- registry helpers ------------------------------------------------

    def _resolve(self, ref: str, create: bool = False) -> str:
        if not is_hashed_ref(ref):
            if create and ref not in self.streams:
                self.streams[ref] = StreamRecord(ref)
                self.hash_index[hash_name(ref)] = ref
            if ref not in self.streams and not create:
                raise StreamUnknown(f"no stream named {ref!r}")
            return ref
        name = self.hash_index.get(ref)
        if name is None:
            raise StreamUnknown("no stream for that hashed ref")
        return name

    def _store(self, rec: StreamRecord) -> None:
        self.streams[rec.name] = rec
        self.hash_index.setdefault(rec.hashed, rec.name)
        if rec.is_empty():
            self._schedule_gc(rec.name)

    def _schedule_gc(self, name: str) -> None:
        if name in self._gc_handles:
            return

        def collect():
            self._gc_handles.pop(name, None)
            rec = self.streams.get(name)
            if rec is not None and rec.is_empty():
                del self.streams[name]
                self.hash_index.pop(rec.hashed, None)
                self.stats["gc_removed"] += 1

        delay_ms = int(self.policy.idle_gc_seconds * 1000)
        self._gc_handles[name] = self.clock.call_later(delay_ms, collect)

    def _touch(self, name: str) -> None:
        handle = self._gc_handles.pop(name, None)
        if handle is not None:
            handle.cancel()

    # -- outbound --------------------------------------------------------

    def _form_for(self, sess: _Session, stream: str) -> str:
        return sess.forms.get(stream, stream)

    def _enqueue(self, sess: _Session, env: SignalEnvelope) -> None:
        if sess.closed:
            return
        if len(sess.outbox) >= self.policy.queue_limit:
            self.stats["overflows"] += 1
            sess.outbox.clear()
            sess.outbox.append(
                encode(self._srv_envelope(sess, SYS_STREAM, MessageKind.ERROR,
                                          {"code": "overflow", "detail": "outbound queue full"}))
            )
            sess.closed = True
            sess.notify()
            self.clock.call_later(0, self.disconnect, sess.ep)
            return
        sess.outbox.append(encode(env))
        sess.notify()

    def _srv_envelope(self, sess: _Session, stream_form: str, kind: MessageKind, payload: dict) -> SignalEnvelope:
        seq = sess.srv_seq.get(stream_form, 0)
        sess.srv_seq[stream_form] = seq + 1
        return SignalEnvelope(
            stream=stream_form,
            sender=SRV_SENDER,
            to=sess.ep,
            kind=kind,
            seq=seq,
            payload=json.dumps(payload),
        )

    def _event(self, sess: _Session, stream: str, payload: dict) -> None:
        form = self._form_for(sess, stream) if stream != SYS_STREAM else SYS_STREAM
        self._enqueue(sess, self._srv_envelope(sess, form, MessageKind.EVENT, payload))

    def _scrub(self, form: str, detail: str) -> str:
        """A session that addressed a stream by hashed reference must not
        receive the raw name anywhere, error details included."""
        if not is_hashed_ref(form):
            return detail
        name = self.hash_index.get(form)
        if name is None:
            return detail
        return detail.replace(name, form)

    def _error(self, sess: _Session, stream_form: str, code: str, detail: str) -> None:
        self._enqueue(
            sess,
            self._srv_envelope(sess, stream_form, MessageKind.ERROR, {"code": code, "detail": detail}),
        )

    def _relay(self, env: SignalEnvelope, stream: str, targets) -> None:
        for ep in targets:
            target = self.sessions.get(ep)
            if target is None:
                continue
            rewritten = SignalEnvelope(
                stream=self._form_for(target, stream),
                sender=env.sender,
                to=env.to,
                kind=env.kind,
                seq=env.seq,
                payload=env.payload,  # byte-identical pass-through
            )
            self._enqueue(target, rewritten)
            self.stats["relayed"] += 1

    # -- webhooks --------------------------------------------------------

    def _fire_webhooks(self, sess: _Session, stream: str, role: str, event: str) -> None:
        urls = sess.pings.get((stream, role), [])
        if not urls or self.webhook_sender is None:
            return
        body = {
            "event": event,
            "stream": self._form_for(sess, stream),
            "endpoint": sess.ep,
            "ts": self.clock.now_ms(),
        }
        for url in urls:
            self.stats["webhooks"] += 1
            self.webhook_sender(url, dict(body))

    # -- dispatch --------------------------------------------------------

    def _dispatch(self, sess: _Session, env: SignalEnvelope) -> None:
        if env.kind in (MessageKind.EVENT,):
            raise ValidationError("EVENT is broker-originated")
        if env.kind is MessageKind.ERROR:
            log.info("client error report from %s: %s", sess.ep, env.payload[:200])
            return
        if env.kind is MessageKind.PUBLISH:
            self._on_publish(sess, env)
            return
        if env.kind is MessageKind.SUBSCRIBE:
            self._on_subscribe(sess, env)
            return
        if env.kind is MessageKind.STOP:
            self._on_stop(sess, env)
            return
        self._on_relay_kind(sess, env)

    def _payload_dict(self, env: SignalEnvelope) -> dict:
        if not env.payload:
            return {}
        try:
            value = json.loads(env.payload)
        except json.JSONDecodeError as e:
            raise ValidationError(f"payload must be a JSON object for {env.kind.value}: {e}")
        if not isinstance(value, dict):
            raise ValidationError(f"payload must be a JSON object for {env.kind.value}")
        return value

    def _dedup(self, sess: _Session, stream: str, env: SignalEnvelope) -> bool:
        last = sess.last_seq.get(stream)
        if last is not None and env.seq <= last:
            self.stats["dropped_dups"] += 1
            return True
        sess.last_seq[stream] = env.seq
        return False

    def _on_publish(self, sess: _Session, env: SignalEnvelope) -> None:
        body = self._payload_dict(env)
        name = self._resolve(env.stream) if is_hashed_ref(env.stream) else env.stream
        if self._dedup(sess, name, env):
            return
        self._resolve(name, create=True)
        self._touch(name)
        tracks = tuple(TrackDescriptor.from_dict(d) for d in body.get("tracks", []))
        rec = attach_publisher(self.streams[name], sess.ep, tracks=tracks)
        self._store(rec)
        sess.forms.setdefault(name, env.stream)
        sess.roles.add((name, "publisher"))
        if body.get("ping"):
            sess.pings[(name, "publisher")] = str(body["ping"]).split()
        self._fire_webhooks(sess, name, "publisher", "publish")
        track_dicts = [t.to_dict() for t in rec.tracks]
        for sub_ep in sorted(rec.subscribers):
            self._event(sess, name, {"event": "subscriber-joined", "endpoint": sub_ep})
            target = self.sessions.get(sub_ep)
            if target is not None:
                self._event(
                    target, name,
                    {"event": "publisher-live", "endpoint": sess.ep, "tracks": track_dicts},
                )

    def _on_subscribe(self, sess: _Session, env: SignalEnvelope) -> None:
        body = self._payload_dict(env)
        if is_hashed_ref(env.stream):
            name = self._resolve(env.stream)  # StreamUnknown if unmapped
        else:
            name = env.stream
        if self._dedup(sess, name, env):
            return
        self._resolve(name, create=True)
        self._touch(name)
        rec = attach_subscriber(self.streams[name], sess.ep)
        self._store(rec)
        sess.forms.setdefault(name, env.stream)
        sess.roles.add((name, "subscriber"))
        if body.get("ping"):
            sess.pings[(name, "subscriber")] = str(body["ping"]).split()
        self._fire_webhooks(sess, name, "subscriber", "subscribe")
        if rec.publisher is not None:
            pub = self.sessions.get(rec.publisher)
            if pub is not None:
                self._event(pub, name, {"event": "subscriber-joined", "endpoint": sess.ep})
            self._event(
                sess, name,
                {
                    "event": "publisher-live",
                    "endpoint": rec.publisher,
                    "tracks": [t.to_dict() for t in rec.tracks],
                },
            )

    def _on_stop(self, sess: _Session, env: SignalEnvelope) -> None:
        name = self._resolve(env.stream)
        if self._dedup(sess, name, env):
            return
        for role in ("publisher", "subscriber"):
            if (name, role) in sess.roles:
                self._detach_role(sess, name, role, notify_self=True)

    def _detach_role(self, sess: _Session, name: str, role: str, notify_self: bool) -> None:
        rec = self.streams.get(name)
        if rec is None:
            sess.roles.discard((name, role))
            return
        was_publisher = role == "publisher" and rec.publisher == sess.ep
        rec = detach(rec, sess.ep)
        self._store(rec)
        sess.roles.discard((name, role))
        self._fire_webhooks(sess, name, role, "stop")
        sess.pings.pop((name, role), None)
        if was_publisher:
            for sub_ep in sorted(rec.subscribers):
                target = self.sessions.get(sub_ep)
                if target is not None:
                    self._event(target, name, {"event": "peer-gone", "endpoint": sess.ep})
        elif rec.publisher is not None:
            pub = self.sessions.get(rec.publisher)
            if pub is not None:
                self._event(pub, name, {"event": "peer-gone", "endpoint": sess.ep})

    def _on_relay_kind(self, sess: _Session, env: SignalEnvelope) -> None:
        name = self._resolve(env.stream)
        rec = self.streams[name]
        if self._dedup(sess, name, env):
            return
        if env.kind in LINK_KINDS:
            if env.to is None:
                raise ValidationError(f"{env.kind.value} requires an explicit to")
            if sess.ep not in rec.members:
                raise MembershipError(f"{sess.ep} is not a member of {env.stream!r}")
        targets = route_rule(env.kind, rec, sess.ep, to=env.to)
        targets = {t for t in targets if t in rec.members}
        if env.kind is MessageKind.TRACKS_ADDED:
            body = self._payload_dict(env)
            tracks = tuple(TrackDescriptor.from_dict(d) for d in body.get("tracks", []))
            self._store(add_tracks(rec, tracks))
        elif env.kind is MessageKind.TRACKS_REMOVED:
            body = self._payload_dict(env)
            labels = tuple(body.get("labels", []))
            try:
                self._store(remove_tracks(rec, labels))
            except Exception:
                pass  # registry may already have dropped them
        self._relay(env, name, targets)

    # -- audit -----------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "streams": {
                name: {
                    "publisher": rec.publisher,
                    "subscribers": sorted(rec.subscribers),
                    "tracks": [t.to_dict() for t in rec.tracks],
                    "status": rec.status,
                }
                for name, rec in sorted(self.streams.items())
            },
            "sessions": sorted(self.sessions),
            "stats": dict(self.stats),
        }

    def check_invariants(self) -> list[str]:
        problems = []
        for name, rec in self.streams.items():
            if (rec.status == "live") != (rec.publisher is not None):
                problems.append(f"{name}: status/publisher mismatch")
            if hash_name(name) != rec.hashed or self.hash_index.get(rec.hashed) != name:
                problems.append(f"{name}: hash index inconsistent")
        for ep, sess in self.sessions.items():
            for stream, role in sess.roles:
                rec = self.streams.get(stream)
                if rec is None:
                    problems.append(f"{ep}: role on missing stream {stream}")
                elif role == "publisher" and rec.publisher != ep:
                    problems.append(f"{ep}: claims publisher of {stream}")
                elif role == "subscriber" and ep not in rec.subscribers:
                    problems.append(f"{ep}: claims subscriber of {stream}")
        return problems
