"""Stream address grammar.

Two forms are accepted:

- full URL-handler form: ``web+ezpub:<scheme>:<locator>`` to publish and
  ``web+ezsub:<scheme>:<locator>`` to subscribe, e.g.
  ``web+ezpub:rtclite:wss://example.com/str/15``;
- connector-local short form: ``id:<name>?<params>``.

For websocket locators the stream name is the URL path without its leading
slash, so ``wss://example.com/str/15`` names the stream ``str/15`` on the
service at ``example.com``. The stream may also be a hashed ``h:<hex>``
reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from urllib.parse import parse_qsl, unquote, urlsplit

from .core import validate_stream_ref
from .errors import ParseError

PUBLISH_PREFIX = "web+ezpub:"
SUBSCRIBE_PREFIX = "web+ezsub:"

# Connector schemes this build knows how to construct.
KNOWN_SCHEMES = ("rtclite", "mem", "storage", "sfu")


@dataclass(frozen=True)
class StreamAddress:
    """A parsed stream locator: which connector, where, and which stream."""

    connector_scheme: str
    locator: str
    stream: str
    params: dict[str, str] = field(default_factory=dict)
    mode: str | None = None  # "publish" | "subscribe" | None (short form)


def parse_stream_url(text: str) -> StreamAddress:
    """Strict parse of the ``web+ezpub``/``web+ezsub`` grammar."""
    if text.startswith(PUBLISH_PREFIX):
        mode, rest = "publish", text[len(PUBLISH_PREFIX):]
    elif text.startswith(SUBSCRIBE_PREFIX):
        mode, rest = "subscribe", text[len(SUBSCRIBE_PREFIX):]
    elif text.startswith("id:"):
        return _parse_short_form(text)
    else:
        raise ParseError(f"unknown stream URL prefix: {text!r}")
    scheme, sep, locator = rest.partition(":")
    if not sep or not locator:
        raise ParseError(f"expected <scheme>:<locator> after prefix in {text!r}")
    if scheme not in KNOWN_SCHEMES:
        raise ParseError(f"unknown connector scheme {scheme!r} (known: {', '.join(KNOWN_SCHEMES)})")
    stream, params = _stream_from_locator(locator)
    return StreamAddress(connector_scheme=scheme, locator=locator, stream=stream, params=params, mode=mode)


def _parse_short_form(text: str) -> StreamAddress:
    body = text[len("id:"):]
    name, _, query = body.partition("?")
    if not name:
        raise ParseError(f"short-form address has no stream name: {text!r}")
    stream = _check_stream(unquote(name))
    return StreamAddress(
        connector_scheme="local",
        locator=body,
        stream=stream,
        params=dict(parse_qsl(query)),
        mode=None,
    )


def _stream_from_locator(locator: str) -> tuple[str, dict[str, str]]:
    if locator.startswith(("ws://", "wss://")):
        parts = urlsplit(locator)
        stream = unquote(parts.path.lstrip("/"))
        if not stream:
            raise ParseError(f"locator has no stream path: {locator!r}")
        return _check_stream(stream), dict(parse_qsl(parts.query))
    # Non-URL locators carry the stream directly: <name>[?params]
    name, _, query = locator.partition("?")
    if not name:
        raise ParseError(f"locator has no stream name: {locator!r}")
    return _check_stream(unquote(name)), dict(parse_qsl(query))


def _check_stream(stream: str) -> str:
    try:
        return validate_stream_ref(stream)
    except Exception as e:
        raise ParseError(f"invalid stream reference {stream!r}: {e}") from e


def ws_endpoint_for(locator: str) -> str:
    """The broker websocket endpoint serving a stream locator:
    ``wss://host/str/15`` connects at ``wss://host/ws``."""
    parts = urlsplit(locator)
    if parts.scheme not in ("ws", "wss"):
        raise ParseError(f"not a websocket locator: {locator!r}")
    return f"{parts.scheme}://{parts.netloc}/ws"
