"""Selective forwarding relay.

Each party attaches once and multiplexes every stream it publishes or
subscribes over that single attachment; the relay keeps per-stream rooms
keyed by hashed tag and forwards frames publisher-to-subscribers and text
subscriber-to-publisher. It never reads frame payloads, so sealed frames
pass through unopened, and it never learns raw stream names, only tags.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

from .clocks import Clock
from .errors import PublisherConflict, StateError
from .media import LinkMessage

# notify(event_dict) -> None; events: publisher-live, publisher-gone
NotifyFn = Callable[[dict], None]
SendFn = Callable[[LinkMessage], None]


@dataclass
class _Party:
    party_id: str
    send: SendFn
    notify: NotifyFn | None = None


@dataclass
class _Room:
    tag: str
    publisher: str | None = None  # party id
    publisher_ep: str | None = None
    subscribers: set[str] = field(default_factory=set)
    last_tracks: LinkMessage | None = None
    last_hint: LinkMessage | None = None

    def is_empty(self) -> bool:
        return self.publisher is None and not self.subscribers


class SfuCore:
    """Transport-agnostic relay state: attach parties, declare roles, pump
    link messages through :meth:`handle`."""

    def __init__(self, clock: Clock):
        self.clock = clock
        self.parties: dict[str, _Party] = {}
        self.rooms: dict[str, _Room] = {}
        self.stats = {"frames_relayed": 0, "controls_relayed": 0, "dropped": 0}

    # -- party lifecycle -------------------------------------------------

    def attach_party(self, party_id: str, send: SendFn, notify: NotifyFn | None = None) -> None:
        if party_id in self.parties:
            raise StateError(f"party {party_id} already attached")
        self.parties[party_id] = _Party(party_id, send, notify)

    def detach_party(self, party_id: str) -> None:
        self.parties.pop(party_id, None)
        for tag in list(self.rooms):
            room = self.rooms[tag]
            if room.publisher == party_id:
                self.retract_publisher(party_id, tag)
            if party_id in room.subscribers:
                self.retract_subscriber(party_id, tag)

    # -- declarations ----------------------------------------------------

    def _room(self, tag: str) -> _Room:
        if tag not in self.rooms:
            self.rooms[tag] = _Room(tag)
        return self.rooms[tag]

    def declare_publisher(self, party_id: str, tag: str, ep: str) -> None:
        room = self._room(tag)
        if room.publisher is not None:
            raise PublisherConflict(tag, room.publisher_ep or room.publisher, ep)
        room.publisher = party_id
        room.publisher_ep = ep
        for sub in sorted(room.subscribers):
            self._notify(sub, {"event": "publisher-live", "stream": tag, "endpoint": ep})

    def declare_subscriber(self, party_id: str, tag: str, ep: str) -> None:
        room = self._room(tag)
        room.subscribers.add(party_id)
        if room.publisher is not None:
            self._notify(
                party_id,
                {"event": "publisher-live", "stream": tag, "endpoint": room.publisher_ep},
            )
            # Late join: replay the newest track advertisement (and a still
            # standing pause hint) so it precedes any forwarded frame.
            party = self.parties.get(party_id)
            if party is not None:
                if room.last_tracks is not None:
                    party.send(room.last_tracks)
                if room.last_hint is not None and room.last_hint.kind == "pause":
                    party.send(room.last_hint)

    def retract_publisher(self, party_id: str, tag: str) -> None:
        room = self.rooms.get(tag)
        if room is None or room.publisher != party_id:
            return
        ep = room.publisher_ep
        room.publisher = None
        room.publisher_ep = None
        room.last_tracks = None
        room.last_hint = None
        for sub in sorted(room.subscribers):
            self._notify(sub, {"event": "publisher-gone", "stream": tag, "endpoint": ep})
        self._drop_if_empty(tag)

    def retract_subscriber(self, party_id: str, tag: str) -> None:
        room = self.rooms.get(tag)
        if room is None:
            return
        room.subscribers.discard(party_id)
        self._drop_if_empty(tag)

    def _drop_if_empty(self, tag: str) -> None:
        room = self.rooms.get(tag)
        if room is not None and room.is_empty():
            del self.rooms[tag]

    def _notify(self, party_id: str, event: dict) -> None:
        party = self.parties.get(party_id)
        if party is not None and party.notify is not None:
            self.clock.call_later(0, party.notify, dict(event))

    # -- forwarding ------------------------------------------------------

    def handle(self, party_id: str, msg: LinkMessage) -> None:
        """Route one inbound link message from a party."""
        if msg.kind == "frame" and msg.frame is not None:
            self._forward_from_publisher(party_id, msg.frame.stream, msg, media=True)
            return
        try:
            tag = json.loads(msg.data)["stream"]
        except (json.JSONDecodeError, KeyError, TypeError):
            self.stats["dropped"] += 1
            return
        room = self.rooms.get(tag)
        if room is None:
            self.stats["dropped"] += 1
            return
        if msg.kind == "text" and party_id in room.subscribers:
            if room.publisher is None:
                self.stats["dropped"] += 1
                return
            self._send(room.publisher, msg)
            self.stats["controls_relayed"] += 1
            return
        if room.publisher != party_id:
            self.stats["dropped"] += 1
            return
        if msg.kind == "tracks":
            room.last_tracks = msg
        elif msg.kind in ("pause", "play"):
            room.last_hint = msg
        self._forward_from_publisher(party_id, tag, msg, media=False)

    def _forward_from_publisher(self, party_id: str, tag: str, msg: LinkMessage, media: bool) -> None:
        room = self.rooms.get(tag)
        if room is None or room.publisher != party_id:
            self.stats["dropped"] += 1
            return
        for sub in sorted(room.subscribers):
            if sub == party_id:
                continue
            if self._send(sub, msg):
                self.stats["frames_relayed" if media else "controls_relayed"] += 1

    def _send(self, party_id: str, msg: LinkMessage) -> bool:
        party = self.parties.get(party_id)
        if party is None:
            self.stats["dropped"] += 1
            return False
        party.send(msg)
        return True

    # -- introspection ---------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "rooms": {
                tag: {
                    "publisher": r.publisher,
                    "subscribers": sorted(r.subscribers),
                }
                for tag, r in sorted(self.rooms.items())
            },
            "parties": sorted(self.parties),
            "stats": dict(self.stats),
        }
