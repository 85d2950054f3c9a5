"""Composite connector publishing one session through several child streams.

Subscribers attach to individual children; the split only fans out the
publisher side. A child failing (say its stream already has a publisher)
is recorded and does not disturb the remaining children.
"""

from __future__ import annotations

from ..errors import ValidationError
from .base import Connector


class SplitConnector(Connector):
    def __init__(self, children: list[Connector]):
        if len(children) < 2:
            raise ValidationError("split needs at least two children")
        self.children = list(children)
        self.last_status: dict[int, str] = {}

    @property
    def partial(self) -> bool:
        values = set(self.last_status.values())
        return "ok" in values and len(values) > 1

    def _fan(self, op: str, sess, *args) -> None:
        self.last_status = {}
        failures = []
        for index, child in enumerate(self.children):
            try:
                getattr(child, op)(sess, *args)
                self.last_status[index] = "ok"
            except Exception as e:  # per-child isolation
                self.last_status[index] = f"error:{type(e).__name__}"
                failures.append(e)
        if len(failures) == len(self.children):
            raise failures[0]

    def publish(self, sess) -> None:
        self._fan("publish", sess)

    def subscribe(self, sess) -> None:
        # A subscriber belongs to exactly one child stream; subscribing
        # through the split means the first child that accepts it.
        last = None
        for index, child in enumerate(self.children):
            try:
                child.subscribe(sess)
                self.last_status[index] = "ok"
                return
            except Exception as e:
                self.last_status[index] = f"error:{type(e).__name__}"
                last = e
        raise last if last is not None else ValidationError("no children")

    def stop(self, sess) -> None:
        self._fan("stop", sess)

    def add_tracks(self, sess, tracks) -> None:
        self._fan("add_tracks", sess, tracks)

    def remove_tracks(self, sess, labels) -> None:
        self._fan("remove_tracks", sess, labels)
