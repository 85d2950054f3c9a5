"""Connector that routes a party's streams through a forwarding relay.

Every session handed to one connector instance shares a single fabric link
to the relay (one per party, however many streams that party publishes or
subscribes), which is what makes star topologies cheaper than a mesh: a
three-way conference needs three relay links against six mesh links.
"""

from __future__ import annotations

import itertools
import json

from ..clocks import Clock
from ..endpoint import EndpointSession
from ..media import ANSWERER, LinkMessage, MediaFabric, OFFERER
from ..sfu import SfuCore
from .base import Connector


class SfuConnector(Connector):
    """One relay attachment per party; sessions multiplex by stream tag."""

    def __init__(self, core: SfuCore, clock: Clock, fabric: MediaFabric, party: str):
        self.core = core
        self.clock = clock
        self.fabric = fabric
        self.party = party
        self.link_id = f"sfu:{party}"
        self._attached = False
        self._by_tag: dict[str, list[EndpointSession]] = {}
        self._ep_counter = itertools.count(1)

    # -- party attachment ------------------------------------------------

    def _ensure_attached(self) -> None:
        if self._attached:
            return
        self.fabric.attach(self.link_id, OFFERER, self._on_inbound)
        self.fabric.attach(
            self.link_id, ANSWERER, lambda msg: self.core.handle(self.party, msg)
        )
        self.core.attach_party(
            self.party,
            send=lambda msg: self.fabric.send(self.link_id, ANSWERER, msg),
            notify=self._on_notify,
        )
        self._attached = True

    def _bind(self, sess: EndpointSession) -> None:
        if sess.endpoint_id is None:
            sess.bind_endpoint_id(f"{self.party}.{next(self._ep_counter)}")

    def _register(self, sess: EndpointSession) -> None:
        self._by_tag.setdefault(sess.stream_tag, []).append(sess)

    # -- connector surface -----------------------------------------------

    def publish(self, sess: EndpointSession) -> None:
        self._ensure_attached()
        self._bind(sess)
        self.core.declare_publisher(self.party, sess.stream_tag, sess.endpoint_id)
        self._register(sess)
        sess.adopt_shared_link(self.link_id, OFFERER, "sfu", origin=self)

    def subscribe(self, sess: EndpointSession) -> None:
        self._ensure_attached()
        self._bind(sess)
        self._register(sess)
        self.core.declare_subscriber(self.party, sess.stream_tag, sess.endpoint_id)

    def stop(self, sess: EndpointSession) -> None:
        tag = sess.stream_tag
        sessions = self._by_tag.get(tag, [])
        if sess in sessions:
            sessions.remove(sess)
        if not sessions:
            self._by_tag.pop(tag, None)
        if sess.role == "publisher":
            self.core.retract_publisher(self.party, tag)
        elif sess.role == "subscriber":
            self.core.retract_subscriber(self.party, tag)

    # -- relay traffic ---------------------------------------------------

    def _on_notify(self, event: dict) -> None:
        tag = event.get("stream", "")
        ep = event.get("endpoint", "")
        if event.get("event") == "publisher-live":
            for sess in self._subscribers(tag):
                if not any(l.shared for l in sess.links):
                    sess.adopt_shared_link(self.link_id, OFFERER, ep, origin=self)
        elif event.get("event") == "publisher-gone":
            for sess in self._subscribers(tag):
                sess.peer_gone(ep)

    def _on_inbound(self, msg: LinkMessage) -> None:
        if msg.kind == "frame" and msg.frame is not None:
            for sess in self._subscribers(msg.frame.stream):
                sess.handle_link_message(self._facade(sess), msg)
            return
        try:
            tag = json.loads(msg.data)["stream"]
        except (json.JSONDecodeError, KeyError, TypeError):
            return
        if msg.kind == "text":
            targets = list(self._by_tag.get(tag, ()))
        else:
            targets = self._subscribers(tag)
        for sess in targets:
            sess.handle_link_message(self._facade(sess), msg)

    def _subscribers(self, tag: str) -> list[EndpointSession]:
        return [s for s in self._by_tag.get(tag, ()) if s.role == "subscriber"]

    @staticmethod
    def _facade(sess: EndpointSession):
        return next((l for l in sess.links if l.shared), None)
