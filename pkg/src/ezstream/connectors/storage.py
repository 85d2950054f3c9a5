"""Shared-storage rendezvous: sessions discover each other and exchange
signaling through a watched hierarchical store, then mesh up exactly as
with the broker.

Layout, one JSON document per path::

    /streams/<name>/publisher            publisher presence {ep, tracks}
    /streams/<name>/subscribers/<ep>     subscriber presence {ep}
    /streams/<name>/msgs/<ep>/<n>        signaling message for <ep>
    /streams-h/<hashed>/...              mirror namespace for hashed refs

The publisher bridges both namespaces (it knows the raw name and its
hash); a hashed-ref subscriber reads and writes only hashed paths, so no
raw-name byte can reach it. Message paths are write-once and deleted by
their recipient; watchers deduplicate by (sender, seq) because watch
delivery is at-least-once.
"""

from __future__ import annotations

import itertools
import json
from pathlib import Path
from typing import Callable

from ..clocks import Clock, TimerHandle
from ..core import TrackDescriptor, is_hashed_ref
from ..errors import PublisherConflict, StreamUnknown
from ..media import MediaFabric
from .base import Connector, StorageApi

DEFAULT_POLL_MS = 50

WatchFn = Callable[[str, dict | None], None]


class MemoryStorage(StorageApi):
    """In-process store; notifications ride the owning clock, one turn late.

    ``refire`` redelivers a path's current value to every watcher, which is
    how tests inject the at-least-once duplicates the contract allows.
    """

    def __init__(self, clock: Clock):
        self.clock = clock
        self.data: dict[str, dict] = {}
        self._watchers: dict[int, tuple[str, WatchFn]] = {}
        self._ids = itertools.count()

    def put(self, path: str, value: dict) -> None:
        self.data[path] = dict(value)
        self._notify(path, dict(value))

    def get(self, path: str) -> dict | None:
        value = self.data.get(path)
        return dict(value) if value is not None else None

    def delete(self, path: str) -> None:
        if self.data.pop(path, None) is not None:
            self._notify(path, None)

    def list_paths(self, prefix: str = "") -> list[str]:
        return sorted(p for p in self.data if p.startswith(prefix))

    def watch(self, prefix: str, fn: WatchFn) -> Callable[[], None]:
        wid = next(self._ids)
        self._watchers[wid] = (prefix, fn)
        for path in self.list_paths(prefix):
            self.clock.call_later(0, fn, path, dict(self.data[path]))
        return lambda: self._watchers.pop(wid, None)

    def refire(self, path: str) -> None:
        if path in self.data:
            self._notify(path, dict(self.data[path]))

    def _notify(self, path: str, value: dict | None) -> None:
        for wid in sorted(self._watchers):
            prefix, fn = self._watchers[wid]
            if path.startswith(prefix):
                self.clock.call_later(0, fn, path, value)


class FileStorage(StorageApi):
    """One file per path under a root directory; watches poll on the owning
    clock every ``poll_ms``, so two processes sharing the directory see each
    other within one poll interval."""

    def __init__(self, root: str | Path, clock: Clock, poll_ms: int = DEFAULT_POLL_MS):
        self.root = Path(root)
        self.clock = clock
        self.poll_ms = int(poll_ms)
        self.root.mkdir(parents=True, exist_ok=True)

    def _file(self, path: str) -> Path:
        rel = path.lstrip("/")
        if ".." in rel.split("/"):
            raise ValueError(f"path may not traverse upward: {path!r}")
        return self.root / rel

    def put(self, path: str, value: dict) -> None:
        target = self._file(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_text(json.dumps(value, sort_keys=True), encoding="utf-8")
        tmp.replace(target)

    def get(self, path: str) -> dict | None:
        try:
            return json.loads(self._file(path).read_text(encoding="utf-8"))
        except (FileNotFoundError, json.JSONDecodeError):
            return None

    def delete(self, path: str) -> None:
        try:
            self._file(path).unlink()
        except FileNotFoundError:
            pass

    def list_paths(self, prefix: str = "") -> list[str]:
        out = []
        for file in self.root.rglob("*"):
            if not file.is_file() or file.name.endswith(".tmp"):
                continue
            path = "/" + file.relative_to(self.root).as_posix()
            if path.startswith(prefix):
                out.append(path)
        return sorted(out)

    def watch(self, prefix: str, fn: WatchFn) -> Callable[[], None]:
        known: dict[str, str] = {}
        stopped = [False]
        handle: list[TimerHandle | None] = [None]

        def poll() -> None:
            if stopped[0]:
                return
            current: dict[str, str] = {}
            for path in self.list_paths(prefix):
                try:
                    current[path] = self._file(path).read_text(encoding="utf-8")
                except FileNotFoundError:
                    continue
            for path in sorted(current):
                if known.get(path) != current[path]:
                    known[path] = current[path]
                    try:
                        value = json.loads(current[path])
                    except json.JSONDecodeError:
                        continue
                    fn(path, value)
            for path in sorted(set(known) - set(current)):
                del known[path]
                fn(path, None)
            handle[0] = self.clock.call_later(self.poll_ms, poll)

        handle[0] = self.clock.call_later(0, poll)

        def unwatch() -> None:
            stopped[0] = True
            if handle[0] is not None:
                handle[0].cancel()

        return unwatch


class _Binding:
    """One session's storage footprint: presence entries, watches, dedup."""

    def __init__(self, ep: str):
        self.ep = ep
        self.unwatchers: list[Callable[[], None]] = []
        self.seen: set[tuple] = set()
        self.out_seq = itertools.count()
        self.sub_ns: dict[str, str] = {}  # subscriber ep -> namespace root
        self.pub_ep: str | None = None

    def release(self) -> None:
        for unwatch in self.unwatchers:
            unwatch()
        self.unwatchers.clear()


class StorageConnector(Connector):
    """Mesh links negotiated through a :class:`StorageApi` backend."""

    def __init__(self, storage: StorageApi, clock: Clock, fabric: MediaFabric, ident: str = "st"):
        self.storage = storage
        self.clock = clock
        self.fabric = fabric
        self.ident = ident
        self._n = itertools.count(1)
        self._bindings: dict[int, _Binding] = {}

    # -- helpers ---------------------------------------------------------

    def _bind(self, sess) -> _Binding:
        if sess.endpoint_id is None:
            sess.bind_endpoint_id(f"{self.ident}-{next(self._n)}")
        binding = _Binding(sess.endpoint_id)
        self._bindings[id(sess)] = binding
        return binding

    @staticmethod
    def _roots(sess) -> tuple[str | None, str]:
        """(raw namespace or None for hashed-ref sessions, hashed namespace)."""
        hashed_root = f"/streams-h/{sess.stream_tag}"
        if is_hashed_ref(sess.stream_local):
            return None, hashed_root
        return f"/streams/{sess.stream_local}", hashed_root

    def _router(self, binding: _Binding, ns_root: str, to_ep: str):
        def route(target_ep: str, kind: str, payload: str) -> None:
            n = next(binding.out_seq)
            self.storage.put(
                f"{ns_root}/msgs/{target_ep}/{n:08d}",
                {"from": binding.ep, "seq": n, "kind": kind, "payload": payload},
            )

        return route

    @staticmethod
    def _split(ns_root: str, path: str) -> list[str]:
        if not path.startswith(ns_root + "/"):
            return []
        return path[len(ns_root) + 1 :].split("/")

    def _handle_msg(self, sess, binding: _Binding, ns_root: str, parts: list[str], value: dict | None) -> None:
        if value is None or len(parts) != 3 or parts[1] != binding.ep:
            return
        key = (ns_root, value.get("from"), value.get("seq"))
        if key in binding.seen:
            return
        binding.seen.add(key)
        sess.apply(
            str(value.get("payload", "")),
            router=self._router(binding, ns_root, str(value.get("from"))),
            origin=self,
        )
        self.storage.delete(f"{ns_root}/{'/'.join(parts)}")

    # -- connector surface -----------------------------------------------

    def publish(self, sess) -> None:
        raw_root, hashed_root = self._roots(sess)
        if raw_root is None:
            raise StreamUnknown("publish requires the raw stream name")
        existing = self.storage.get(f"{raw_root}/publisher")
        binding = self._bind(sess)
        if existing is not None and existing.get("ep") != binding.ep:
            self._bindings.pop(id(sess), None)
            raise PublisherConflict(sess.stream_local, str(existing.get("ep")), binding.ep)
        presence = {"ep": binding.ep, "tracks": [t.to_dict() for t in sess.tracks]}
        self.storage.put(f"{raw_root}/publisher", presence)
        self.storage.put(f"{hashed_root}/publisher", presence)

        for ns_root in (raw_root, hashed_root):
            fn = self._publisher_watch(sess, binding, ns_root)
            binding.unwatchers.append(self.storage.watch(ns_root + "/", fn))

    def _publisher_watch(self, sess, binding: _Binding, ns_root: str) -> WatchFn:
        def on_change(path: str, value: dict | None) -> None:
            if self._bindings.get(id(sess)) is not binding:
                return
            parts = self._split(ns_root, path)
            if not parts:
                return
            if parts[0] == "subscribers" and len(parts) == 2:
                sub_ep = parts[1]
                if value is not None and sub_ep not in binding.sub_ns:
                    binding.sub_ns[sub_ep] = ns_root
                    sess.create_peer_link(
                        sub_ep,
                        router=self._router(binding, ns_root, sub_ep),
                        origin=self,
                        self_ep=binding.ep,
                    )
                elif value is None and binding.sub_ns.pop(sub_ep, None) is not None:
                    sess.peer_gone(sub_ep)
            elif parts[0] == "msgs":
                self._handle_msg(sess, binding, ns_root, parts, value)
            elif parts == ["publisher"] and value is not None and value.get("ep") != binding.ep:
                sess.service_error("PublisherConflict", f"presence overwritten by {value.get('ep')}")

        return on_change

    def subscribe(self, sess) -> None:
        raw_root, hashed_root = self._roots(sess)
        ns_root = raw_root if raw_root is not None else hashed_root
        if raw_root is None and self.storage.get(f"{hashed_root}/publisher") is None:
            raise StreamUnknown("no live publisher for that hashed ref")
        binding = self._bind(sess)
        self.storage.put(f"{ns_root}/subscribers/{binding.ep}", {"ep": binding.ep})
        fn = self._subscriber_watch(sess, binding, ns_root)
        binding.unwatchers.append(self.storage.watch(ns_root + "/", fn))

    def _subscriber_watch(self, sess, binding: _Binding, ns_root: str) -> WatchFn:
        def on_change(path: str, value: dict | None) -> None:
            if self._bindings.get(id(sess)) is not binding:
                return
            parts = self._split(ns_root, path)
            if not parts:
                return
            if parts == ["publisher"]:
                if value is not None:
                    binding.pub_ep = str(value.get("ep"))
                    tracks = value.get("tracks")
                    if tracks:
                        sess.set_remote_tracks([TrackDescriptor.from_dict(d) for d in tracks])
                elif binding.pub_ep is not None:
                    gone, binding.pub_ep = binding.pub_ep, None
                    sess.peer_gone(gone)
            elif parts[0] == "msgs":
                self._handle_msg(sess, binding, ns_root, parts, value)

        return on_change

    def stop(self, sess) -> None:
        binding = self._bindings.pop(id(sess), None)
        if binding is None:
            return
        binding.release()
        raw_root, hashed_root = self._roots(sess)
        if sess.role == "publisher" and raw_root is not None:
            self.storage.delete(f"{raw_root}/publisher")
            self.storage.delete(f"{hashed_root}/publisher")
            roots = (raw_root, hashed_root)
        else:
            ns_root = raw_root if raw_root is not None else hashed_root
            self.storage.delete(f"{ns_root}/subscribers/{binding.ep}")
            roots = (ns_root,)
        for root in roots:
            for path in self.storage.list_paths(f"{root}/msgs/{binding.ep}/"):
                self.storage.delete(path)

    def add_tracks(self, sess, tracks: tuple[TrackDescriptor, ...]) -> None:
        self._refresh_presence(sess)

    def remove_tracks(self, sess, labels: tuple[str, ...]) -> None:
        self._refresh_presence(sess)

    def _refresh_presence(self, sess) -> None:
        binding = self._bindings.get(id(sess))
        if binding is None or sess.role != "publisher":
            return
        raw_root, hashed_root = self._roots(sess)
        presence = {"ep": binding.ep, "tracks": [t.to_dict() for t in sess.tracks]}
        if raw_root is not None:
            self.storage.put(f"{raw_root}/publisher", presence)
        self.storage.put(f"{hashed_root}/publisher", presence)
