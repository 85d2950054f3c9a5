"""Contracts every stream service binding implements.

A connector carries one endpoint session's publish/subscribe lifecycle to a
specific service. The five operations all take the calling session; the
session invokes them and the connector drives the session back through its
service surface (``bind_endpoint_id``, ``create_peer_link``, ``apply``,
``peer_gone``, ``service_error``).
"""

from __future__ import annotations

import abc
from typing import Callable

from ..core import TrackDescriptor


class Connector(abc.ABC):
    """Service binding: publish/subscribe/stop plus live track updates."""

    @abc.abstractmethod
    def publish(self, sess) -> None:
        """Attach ``sess`` as the publisher of its stream."""

    @abc.abstractmethod
    def subscribe(self, sess) -> None:
        """Attach ``sess`` as a subscriber of its stream."""

    @abc.abstractmethod
    def stop(self, sess) -> None:
        """Detach ``sess`` from whatever role it holds."""

    def add_tracks(self, sess, tracks: tuple[TrackDescriptor, ...]) -> None:
        """Record new/updated tracks on the live publish. Optional: the
        in-band track control already satisfies the subscriber-visible
        postcondition, so the default is a registry no-op."""

    def remove_tracks(self, sess, labels: tuple[str, ...]) -> None:
        """Record track removal on the live publish. Optional, as above."""


class StorageApi(abc.ABC):
    """Hierarchical shared store with change notifications.

    Paths are ``/``-separated. ``watch`` delivers every change under a
    prefix at-least-once, in per-path order; watchers must deduplicate.
    """

    @abc.abstractmethod
    def put(self, path: str, value: dict) -> None: ...

    @abc.abstractmethod
    def get(self, path: str) -> dict | None: ...

    @abc.abstractmethod
    def delete(self, path: str) -> None: ...

    @abc.abstractmethod
    def list_paths(self, prefix: str = "") -> list[str]:
        """All stored paths under ``prefix``, sorted."""

    @abc.abstractmethod
    def watch(self, prefix: str, fn: Callable[[str, dict | None], None]) -> Callable[[], None]:
        """Call ``fn(path, value_or_None)`` on every change under ``prefix``
        (None = deletion), starting with a snapshot of existing entries.
        Delivery is at-least-once; watchers must deduplicate. Returns an
        unwatch function."""
