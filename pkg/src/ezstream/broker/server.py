"""Live websocket host for the signaling broker and the forwarding relay.

Routes:
  /ws      broker signaling; one text frame per wire-grammar line
  /sfu     forwarding relay; wire envelopes plus ``{"frame": {...}}`` lines
  /healthz liveness probe
  /streams registry snapshot (debug audit)
  /demo    static demo page, when a built frontend directory is present

The cores are single-threaded state machines, so every entry point (socket
handlers, GC timers, reconnect timers) funnels through one lock.
"""

from __future__ import annotations

import argparse
import asyncio
import itertools
import json
import logging
import threading
from pathlib import Path

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from ..clocks import WallClock
from ..media import LinkMessage, MediaFrame
from ..sfu import SfuCore
from ..wire import DecodeError, MessageKind, SignalEnvelope, decode, encode
from .core import BrokerCore, BrokerPolicy, DEFAULT_IDLE_GC_SECONDS
from .webhooks import HttpWebhookSender

log = logging.getLogger("ezstream.broker.server")

PLACEHOLDER_DEMO = """<!doctype html>
<html><head><title>ezstream broker</title></head>
<body><h1>ezstream broker</h1>
<p>The demo frontend is not built. Run <code>npm run build</code> in
<code>frontend/</code> and restart with that directory available.</p>
</body></html>"""


class LockedClock(WallClock):
    """Wall clock whose timer callbacks run under the server lock, so GC
    and deferred disconnects serialize with the socket handlers."""

    def __init__(self, lock: threading.RLock, unix_time: bool = True):
        super().__init__(unix_time=unix_time)
        self._lock = lock

    def call_later(self, delay_ms, fn, *args):
        def locked():
            with self._lock:
                fn(*args)

        return super().call_later(delay_ms, locked)


def default_demo_dir() -> Path:
    return Path(__file__).resolve().parents[3] / "frontend" / "dist"


def create_app(
    token: str | None = None,
    idle_gc_seconds: float = DEFAULT_IDLE_GC_SECONDS,
    demo_dir: str | Path | None = None,
    webhook_sender=None,
) -> FastAPI:
    lock = threading.RLock()
    clock = LockedClock(lock)
    core = BrokerCore(
        clock,
        policy=BrokerPolicy(token=token, idle_gc_seconds=idle_gc_seconds),
        webhook_sender=webhook_sender if webhook_sender is not None else HttpWebhookSender(),
    )
    sfu = SfuCore(clock)
    app = FastAPI(title="ezstream broker")
    app.state.core = core
    app.state.sfu = sfu
    app.state.lock = lock
    app.state.clock = clock
    app.state.party_ids = itertools.count(1)

    @app.get("/healthz")
    async def healthz():
        return {"ok": True, "now_ms": clock.now_ms()}

    @app.get("/streams")
    async def streams():
        with lock:
            return JSONResponse({"broker": core.snapshot(), "sfu": sfu.snapshot()})

    @app.websocket("/ws")
    async def ws_signaling(ws: WebSocket):
        if not core.check_token(ws.query_params.get("token")):
            await ws.close(code=4401)
            return
        await ws.accept()
        loop = asyncio.get_running_loop()
        wake = asyncio.Event()
        closing = asyncio.Event()

        def notify() -> None:
            loop.call_soon_threadsafe(wake.set)

        def on_close() -> None:
            loop.call_soon_threadsafe(closing.set)
            loop.call_soon_threadsafe(wake.set)

        with lock:
            ep = core.accept(notify, on_close)

        async def pump_out() -> None:
            while True:
                await wake.wait()
                wake.clear()
                with lock:
                    lines = core.take(ep)
                for line in lines:
                    await ws.send_text(line.decode("utf-8"))
                if closing.is_set():
                    await ws.close()
                    return

        out_task = asyncio.create_task(pump_out())
        try:
            while True:
                data = await ws.receive_text()
                with lock:
                    core.handle_line(ep, data)
        except WebSocketDisconnect:
            pass
        finally:
            out_task.cancel()
            with lock:
                core.disconnect(ep)

    @app.websocket("/sfu")
    async def ws_relay(ws: WebSocket):
        if not core.check_token(ws.query_params.get("token")):
            await ws.close(code=4401)
            return
        await ws.accept()
        loop = asyncio.get_running_loop()
        party = f"party-{next(app.state.party_ids)}"
        outq: asyncio.Queue = asyncio.Queue()

        def send_text(text: str) -> None:
            # Single writer task keeps sends FIFO whichever thread queued them.
            loop.call_soon_threadsafe(outq.put_nowait, text)

        async def writer() -> None:
            while True:
                await ws.send_text(await outq.get())

        adapter = _WsParty(party, sfu, send_text)
        with lock:
            sfu.attach_party(party, adapter.send_link_message, adapter.notify)
        writer_task = asyncio.create_task(writer())
        try:
            while True:
                data = await ws.receive_text()
                with lock:
                    adapter.on_line(data)
        except WebSocketDisconnect:
            pass
        finally:
            writer_task.cancel()
            with lock:
                sfu.detach_party(party)

    demo_path = Path(demo_dir) if demo_dir is not None else default_demo_dir()
    if demo_path.is_dir():
        app.mount("/demo", StaticFiles(directory=str(demo_path), html=True), name="demo")
    else:

        @app.get("/demo")
        async def demo_placeholder():
            return HTMLResponse(PLACEHOLDER_DEMO)

    return app


class _WsParty:
    """Translates between one relay websocket and the SfuCore party surface.

    Inbound lines are either wire envelopes (declarations and in-band
    controls) or ``{"frame": {...}}`` media lines; outbound link messages
    and notifications are rendered back into the same shapes.
    """

    def __init__(self, party: str, sfu: SfuCore, send_text):
        self.party = party
        self.sfu = sfu
        self.send_text = send_text
        self._seq = itertools.count()

    # -- inbound ---------------------------------------------------------

    def on_line(self, line: str) -> None:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            self._error("DecodeError", "not a JSON line")
            return
        if isinstance(obj, dict) and "frame" in obj:
            try:
                frame = MediaFrame.from_wire(obj["frame"])
            except (KeyError, TypeError, ValueError) as e:
                self._error("DecodeError", f"bad frame line: {e}")
                return
            self.sfu.handle(self.party, LinkMessage(kind="frame", frame=frame))
            return
        try:
            env = decode(line)
        except DecodeError as e:
            self._error(type(e).__name__, str(e))
            return
        self._dispatch(env)

    def _dispatch(self, env: SignalEnvelope) -> None:
        kind = env.kind
        if kind == MessageKind.PUBLISH:
            try:
                self.sfu.declare_publisher(self.party, env.stream, env.sender)
            except Exception as e:  # noqa: BLE001 - reported to the peer
                self._error(type(e).__name__, str(e), stream=env.stream)
            return
        if kind == MessageKind.SUBSCRIBE:
            self.sfu.declare_subscriber(self.party, env.stream, env.sender)
            return
        if kind == MessageKind.STOP:
            self.sfu.retract_publisher(self.party, env.stream)
            self.sfu.retract_subscriber(self.party, env.stream)
            return
        data = json.dumps({"stream": env.stream, "from": env.sender, "data": env.payload})
        if kind == MessageKind.TEXT:
            self.sfu.handle(self.party, LinkMessage(kind="text", data=data))
        elif kind == MessageKind.PAUSE_HINT and env.payload in ("pause", "play"):
            self.sfu.handle(self.party, LinkMessage(kind=env.payload, data=data))
        elif kind in (MessageKind.TRACKS_ADDED, MessageKind.TRACKS_REMOVED):
            self.sfu.handle(self.party, LinkMessage(kind="tracks", data=data))
        else:
            self._error("ValidationError", f"kind {kind.value} not accepted by the relay")

    # -- outbound --------------------------------------------------------

    def send_link_message(self, msg: LinkMessage) -> None:
        if msg.kind == "frame" and msg.frame is not None:
            self.send_text(json.dumps({"frame": msg.frame.to_wire()}))
            return
        try:
            data = json.loads(msg.data)
        except json.JSONDecodeError:
            return
        kind = {
            "text": MessageKind.TEXT,
            "pause": MessageKind.PAUSE_HINT,
            "play": MessageKind.PAUSE_HINT,
            "tracks": MessageKind.TRACKS_ADDED,
        }.get(msg.kind)
        if kind is None:
            return
        payload = msg.kind if msg.kind in ("pause", "play") else str(data.get("data", ""))
        env = SignalEnvelope(
            stream=str(data.get("stream", "sys")),
            sender=str(data.get("from", "srv")),
            kind=kind,
            seq=next(self._seq),
            payload=payload,
        )
        self.send_text(encode(env).decode("utf-8"))

    def notify(self, event: dict) -> None:
        env = SignalEnvelope(
            stream=str(event.get("stream", "sys")),
            sender="srv",
            kind=MessageKind.EVENT,
            seq=next(self._seq),
            payload=json.dumps(event),
        )
        self.send_text(encode(env).decode("utf-8"))

    def _error(self, code: str, detail: str, stream: str = "sys") -> None:
        env = SignalEnvelope(
            stream=stream,
            sender="srv",
            kind=MessageKind.ERROR,
            seq=next(self._seq),
            payload=json.dumps({"code": code, "detail": detail}),
        )
        self.send_text(encode(env).decode("utf-8"))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ezstream-broker", description=__doc__)
    parser.add_argument("--listen", default="127.0.0.1:8787", metavar="addr:port")
    parser.add_argument("--token", default=None)
    parser.add_argument("--idle-gc-seconds", type=float, default=DEFAULT_IDLE_GC_SECONDS)
    parser.add_argument("--log-level", default="info",
                        choices=["critical", "error", "warning", "info", "debug"])
    parser.add_argument("--demo-dir", default=None, help="directory with the built demo page")
    args = parser.parse_args(argv)

    host, _, port = args.listen.rpartition(":")
    logging.basicConfig(level=args.log_level.upper())
    app = create_app(
        token=args.token,
        idle_gc_seconds=args.idle_gc_seconds,
        demo_dir=args.demo_dir,
    )

    import uvicorn

    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level=args.log_level)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
