"""Single-process stream service: the base named-stream for tests and demos.

One :class:`MemoryService` owns the stream records; each session attaches
through a :class:`MemoryConnector`. Signaling payloads hop through the
service on the next clock turn, so ordering matches the distributed
connectors while staying fully deterministic.
"""

from __future__ import annotations

import itertools

from ..clocks import Clock
from ..core import (
    StreamRecord,
    add_tracks,
    attach_publisher,
    attach_subscriber,
    detach,
    hash_name,
    is_hashed_ref,
    remove_tracks,
)
from ..errors import PublisherConflict, StreamUnknown
from .base import Connector


class MemoryService:
    """In-process registry wiring publishers to subscribers."""

    def __init__(self, clock: Clock):
        self.clock = clock
        self.streams: dict[str, StreamRecord] = {}
        self.hash_index: dict[str, str] = {}
        self.sessions: dict[str, object] = {}
        self._ids = itertools.count(1)

    def _bind(self, sess) -> str:
        for ep, existing in self.sessions.items():
            if existing is sess:
                return ep
        ep = f"mem-{next(self._ids)}"
        self.sessions[ep] = sess
        sess.bind_endpoint_id(ep)
        return ep

    def _resolve(self, ref: str) -> str:
        if not is_hashed_ref(ref):
            return ref
        name = self.hash_index.get(ref)
        if name is None:
            raise StreamUnknown(f"no stream for hashed ref {ref[:18]}...")
        return name

    def _record(self, name: str) -> StreamRecord:
        if name not in self.streams:
            self.streams[name] = StreamRecord(name)
            self.hash_index[hash_name(name)] = name
        return self.streams[name]

    def _store(self, rec: StreamRecord) -> None:
        if rec.is_empty():
            self.streams.pop(rec.name, None)
            self.hash_index.pop(rec.hashed, None)
        else:
            self.streams[rec.name] = rec

    def _deliver(self, to_ep: str, payload: str, reply_router) -> None:
        sess = self.sessions.get(to_ep)
        if sess is not None:
            self.clock.call_later(0, sess.apply, payload, reply_router)

    def _router_for(self, from_ep: str):
        def route(to_ep: str, kind: str, payload: str) -> None:
            self._deliver(to_ep, payload, self._router_for(to_ep))

        return route

    def publish(self, sess) -> None:
        ep = self._bind(sess)
        name = sess.stream_local
        rec = attach_publisher(self._record(name), ep, tracks=sess.tracks)
        self._store(rec)
        for sub_ep in rec.subscribers:
            self._link(sess, ep, sub_ep)

    def subscribe(self, sess) -> None:
        ep = self._bind(sess)
        name = self._resolve(sess.stream_local)
        rec = attach_subscriber(self._record(name), ep)
        self._store(rec)
        if rec.publisher is not None:
            self._link(self.sessions[rec.publisher], rec.publisher, ep)

    def _link(self, pub_sess, pub_ep: str, sub_ep: str) -> None:
        self.clock.call_later(
            0, pub_sess.create_peer_link, sub_ep, self._router_for(pub_ep), None, pub_ep
        )

    def stop(self, sess) -> None:
        ep = self._ep_of(sess)
        if ep is None:
            return
        for name, rec in list(self.streams.items()):
            if rec.publisher == ep:
                self._store(detach(rec, ep))
                for sub_ep in rec.subscribers:
                    self._notify_gone(sub_ep, ep)
            elif ep in rec.subscribers:
                self._store(detach(rec, ep))
                if rec.publisher is not None:
                    self._notify_gone(rec.publisher, ep)

    def _notify_gone(self, to_ep: str, gone_ep: str) -> None:
        sess = self.sessions.get(to_ep)
        if sess is not None:
            self.clock.call_later(0, sess.peer_gone, gone_ep)

    def add_tracks(self, sess, tracks) -> None:
        ep = self._ep_of(sess)
        for name, rec in self.streams.items():
            if rec.publisher == ep:
                self.streams[name] = add_tracks(rec, tuple(tracks))

    def remove_tracks(self, sess, labels) -> None:
        ep = self._ep_of(sess)
        for name, rec in self.streams.items():
            if rec.publisher == ep:
                self.streams[name] = remove_tracks(rec, tuple(labels))

    def _ep_of(self, sess) -> str | None:
        for ep, existing in self.sessions.items():
            if existing is sess:
                return ep
        return None

    def record(self, ref: str) -> StreamRecord | None:
        try:
            return self.streams.get(self._resolve(ref))
        except StreamUnknown:
            return None


class MemoryConnector(Connector):
    def __init__(self, service: MemoryService):
        self.service = service

    def publish(self, sess) -> None:
        self.service.publish(sess)

    def subscribe(self, sess) -> None:
        self.service.subscribe(sess)

    def stop(self, sess) -> None:
        self.service.stop(sess)

    def add_tracks(self, sess, tracks) -> None:
        self.service.add_tracks(sess, tracks)

    def remove_tracks(self, sess, labels) -> None:
        self.service.remove_tracks(sess, labels)


__all__ = ["MemoryConnector", "MemoryService", "PublisherConflict"]
