"""The simulated world: one clock, one media fabric, one service backend,
and the endpoint sessions a scenario spawns into it.

Connector specs are ``<scheme>:<locator>[?params]``:

- ``mem:local`` -- in-process service registry (the default)
- ``rtclite:sim`` -- simulated broker; ``rtclite:ws://host:port/...`` runs
  against a live broker over real websockets (wall clock, nondeterministic)
- ``storage:mem`` -- shared key-value rendezvous; ``storage:<dir>`` uses a
  directory of files polled every ``?poll-ms=`` milliseconds
- ``sfu:local`` -- simulated forwarding server; sessions sharing a party
  label (the part before the first dot) share one server link
"""

from __future__ import annotations

import time
from typing import Optional
from urllib.parse import parse_qsl

from ..addresses import ws_endpoint_for
from ..broker.core import BrokerCore, BrokerPolicy
from ..clocks import VirtualClock, WallClock
from ..connectors.broker import BrokerConnector
from ..connectors.memory import MemoryConnector, MemoryService
from ..connectors.sfu import SfuConnector
from ..connectors.storage import FileStorage, MemoryStorage, StorageConnector
from ..core import TrackDescriptor, hash_name, is_hashed_ref
from ..endpoint import EndpointSession
from ..errors import EzStreamError, ParamError
from ..media import MediaFabric, SyntheticSource
from ..sfu import SfuCore

_SPAWN_FLAGS = {"autopause"}


def parse_connector_spec(spec: str) -> tuple[str, str, dict[str, str]]:
    scheme, sep, rest = spec.partition(":")
    if not sep:
        rest = "local" if scheme in ("mem", "sfu") else ""
    locator, _, query = rest.partition("?")
    if scheme not in ("mem", "rtclite", "storage", "sfu"):
        raise ParamError(f"unknown connector scheme {scheme!r} in {spec!r}")
    return scheme, locator, dict(parse_qsl(query))


def parse_tracks(spec: str) -> tuple[TrackDescriptor, ...]:
    out = []
    for part in spec.split(","):
        kind, sep, label = part.partition(":")
        if not sep or not kind or not label:
            raise ParamError(f"track spec wants <kind>:<label>, got {part!r}")
        out.append(TrackDescriptor(kind, label))
    return tuple(out)


class SimWorld:
    """Hosts sessions and the service they rendezvous through."""

    def __init__(self, connector: str = "mem:local", seed: int = 1):
        self.connector_spec = connector
        self.seed = seed
        scheme, locator, params = parse_connector_spec(connector)
        self.scheme = scheme
        self.live = scheme == "rtclite" and locator.startswith(("ws://", "wss://"))
        self.clock = WallClock() if self.live else VirtualClock()
        self.fabric = MediaFabric(self.clock, seed=f"w:{seed}")

        self.memory: Optional[MemoryService] = None
        self.broker: Optional[BrokerCore] = None
        self.sfu: Optional[SfuCore] = None
        self.storage = None
        self._live_streams_url: Optional[str] = None
        self._conn = None
        self._sfu_conns: dict[str, SfuConnector] = {}

        if scheme == "mem":
            self.memory = MemoryService(self.clock)
            self._conn = MemoryConnector(self.memory)
        elif scheme == "rtclite" and not self.live:
            self.broker = BrokerCore(self.clock, policy=BrokerPolicy(token=params.get("token")))
            self._conn = BrokerConnector.sim(self.broker, self.clock, token=params.get("token"))
        elif scheme == "rtclite":
            ws_url = ws_endpoint_for(locator)
            self._live_streams_url = (
                ws_url.replace("ws://", "http://").replace("wss://", "https://")[: -len("/ws")]
                + "/streams"
            )
            self._conn = BrokerConnector.live(ws_url, self.clock, token=params.get("token"))
        elif scheme == "storage":
            if locator in ("mem", "local", ""):
                self.storage = MemoryStorage(self.clock)
            else:
                self.storage = FileStorage(locator, self.clock, poll_ms=int(params.get("poll-ms", 50)))
            self._conn = StorageConnector(self.storage, self.clock, self.fabric)
        else:
            self.sfu = SfuCore(self.clock)

        self.actors: dict[str, EndpointSession] = {}
        self.notes: list[tuple[int, str, str, str]] = []  # (ms, actor, kind, detail)

    # -- wiring ----------------------------------------------------------

    @staticmethod
    def party_of(label: str) -> str:
        return label.split(".", 1)[0]

    def connector_for(self, label: str):
        if self.sfu is None:
            return self._conn
        party = self.party_of(label)
        if party not in self._sfu_conns:
            self._sfu_conns[party] = SfuConnector(self.sfu, self.clock, self.fabric, party)
        return self._sfu_conns[party]

    def note(self, actor: str, kind: str, detail: str = "") -> None:
        self.notes.append((self.clock.now_ms(), actor, kind, detail))

    # -- scenario actions ------------------------------------------------

    def spawn(self, label: str, args: tuple[str, ...]) -> EndpointSession:
        if label in self.actors:
            raise ParamError(f"actor {label!r} already spawned")
        sess = EndpointSession(label, self.clock, self.fabric, keep_all_frames=True)
        flags = [a for a in args if a in _SPAWN_FLAGS]
        specs = [a for a in args if a not in _SPAWN_FLAGS]
        if len(specs) > 1:
            raise ParamError(f"spawn takes one media spec, got {specs!r}")
        if specs:
            spec = specs[0]
            if spec.startswith("forward:"):
                upstream = spec[len("forward:"):]
                if upstream not in self.actors:
                    raise ParamError(f"forward source {upstream!r} not spawned")
                sess.set_input(self.actors[upstream])
            else:
                sess.set_local_media(
                    SyntheticSource(parse_tracks(spec), seed=f"{self.seed}:{label}")
                )
        if "autopause" in flags:
            sess.autopause = True
        self.actors[label] = sess
        return sess

    def _actor(self, label: str) -> EndpointSession:
        if label not in self.actors:
            raise ParamError(f"unknown actor {label!r}")
        return self.actors[label]

    def apply(self, actor: str, action: str, args: tuple[str, ...]) -> None:
        """Run one scenario action. Stream-level errors (conflicts, unknown
        streams) land in the transcript instead of aborting the run."""
        if action == "spawn":
            self.spawn(actor, args)
            return
        sess = self._actor(actor)
        try:
            if action == "publish":
                sess.publish(args[0], self.connector_for(actor))
            elif action == "subscribe":
                sess.subscribe(args[0], self.connector_for(actor))
            elif action == "stop":
                sess.stop()
            elif action == "send":
                sess.send(args[0])
            elif action == "pause":
                sess.set_playing(False)
            elif action == "resume":
                sess.set_playing(True)
            elif action == "add_tracks":
                sess.add_tracks(parse_tracks(args[0]))
            elif action == "remove_tracks":
                sess.remove_tracks(tuple(args[0].split(",")))
            elif action == "drop_transport":
                conn = self.connector_for(actor)
                if not hasattr(conn, "kill_transport"):
                    raise ParamError(f"drop_transport unsupported on {self.scheme!r}")
                conn.kill_transport(sess)
            else:
                raise ParamError(f"unknown action {action!r}")
        except EzStreamError as e:
            self.note(actor, "step-error", f"{action} {type(e).__name__}")

    # -- run -------------------------------------------------------------

    def run_until(self, end_ms: int) -> None:
        if self.live:
            deadline = time.monotonic() + max(0, end_ms - self.clock.now_ms()) / 1000.0
            while time.monotonic() < deadline:
                time.sleep(0.02)
        else:
            self.clock.run_until(end_ms)

    def close(self) -> None:
        for sess in self.actors.values():
            try:
                sess.stop()
            except EzStreamError:
                pass

    # -- observations ----------------------------------------------------

    def sessions_in_scope(self, scope: str) -> list[EndpointSession]:
        if scope == "world":
            return list(self.actors.values())
        return [
            s
            for label, s in self.actors.items()
            if label == scope or self.party_of(label) == scope
        ]

    def link_count(self, scope: str) -> int:
        ids = set()
        for sess in self.sessions_in_scope(scope):
            ids.update(l.link_id for l in sess.links if l.state == "connected")
        return len(ids)

    def stream_status(self, name: str) -> str:
        if self.memory is not None:
            rec = self.memory.streams.get(name)
            return rec.status if rec is not None else "unknown"
        if self.broker is not None:
            rec = self.broker.streams.get(name)
            return rec.status if rec is not None else "unknown"
        if self.sfu is not None:
            tag = name if is_hashed_ref(name) else hash_name(name)
            room = self.sfu.rooms.get(tag)
            if room is None:
                return "unknown"
            return "live" if room.publisher is not None else "idle"
        if self.storage is not None:
            if self.storage.get(f"/streams/{name}/publisher") is not None:
                return "live"
            if self.storage.list_paths(f"/streams/{name}/"):
                return "idle"
            return "unknown"
        if self._live_streams_url is not None:
            import httpx

            data = httpx.get(self._live_streams_url, timeout=5).json()
            return data["broker"]["streams"].get(name, {}).get("status", "unknown")
        return "unknown"

    def transcript(self, scope: str = "world") -> list[tuple[int, str, str, str]]:
        """Merged (ms, actor, kind, detail) rows, time ordered with stable
        per-actor ordering inside one instant."""
        rows: list[tuple[int, str, str, str]] = []
        labels = (
            list(self.actors)
            if scope == "world"
            else [l for l in self.actors if l == scope or self.party_of(l) == scope]
        )
        for label in labels:
            rows += [(ms, label, kind, detail) for ms, kind, detail in self.actors[label].timeline]
        if scope == "world":
            rows += self.notes
        else:
            rows += [r for r in self.notes if r[1] in labels]
        rows.sort(key=lambda r: r[0])
        return rows
