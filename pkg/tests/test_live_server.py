"""End-to-end checks against a real uvicorn-hosted broker: websocket
signaling, the relay endpoint, webhooks, and the debug routes."""

import base64
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import httpx
import pytest
import uvicorn
from websockets.sync.client import connect as ws_connect

from ezstream.broker.server import create_app
from ezstream.clocks import WallClock
from ezstream.connectors.broker import BrokerConnector
from ezstream.core import TrackDescriptor, hash_name
from ezstream.endpoint import EndpointSession
from ezstream.media import MediaFabric, SyntheticSource
from ezstream.wire import MessageKind, SignalEnvelope, decode, encode

TOKEN = "hunter2"
CAM = (TrackDescriptor("video", "cam"),)


def wait_until(cond, timeout=8.0, step=0.05):
    deadline = time.time() + timeout
    while time.time() < deadline:
        if cond():
            return True
        time.sleep(step)
    return False


@pytest.fixture(scope="module")
def server():
    app = create_app(token=TOKEN, demo_dir="/nonexistent-demo-dir")
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    srv = uvicorn.Server(config)
    thread = threading.Thread(target=srv.run, daemon=True)
    thread.start()
    assert wait_until(lambda: srv.started, timeout=10)
    port = srv.servers[0].sockets[0].getsockname()[1]
    yield f"127.0.0.1:{port}"
    srv.should_exit = True
    thread.join(timeout=5)


@pytest.fixture()
def webhook_sink():
    hits = []

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            n = int(self.headers.get("Content-Length", 0))
            hits.append(json.loads(self.rfile.read(n)))
            self.send_response(200)
            self.end_headers()

        def log_message(self, *args):
            pass

    httpd = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{httpd.server_port}/hook", hits
    httpd.shutdown()


def env_line(stream, sender, kind, seq, payload=""):
    return encode(
        SignalEnvelope(stream=stream, sender=sender, kind=kind, seq=seq, payload=payload)
    ).decode("utf-8")


def test_healthz_and_streams(server):
    r = httpx.get(f"http://{server}/healthz")
    assert r.status_code == 200 and r.json()["ok"] is True
    r = httpx.get(f"http://{server}/streams")
    body = r.json()
    assert "broker" in body and "sfu" in body


def test_demo_placeholder_served(server):
    r = httpx.get(f"http://{server}/demo")
    assert r.status_code == 200
    assert "frontend" in r.text


def test_ws_rejects_bad_token(server):
    with pytest.raises(Exception):
        with ws_connect(f"ws://{server}/ws?token=nope", open_timeout=5) as ws:
            ws.recv(timeout=2)


def test_live_publish_subscribe_text_and_stop(server, webhook_sink):
    sink_url, hits = webhook_sink
    clock = WallClock()
    fabric = MediaFabric(clock, seed="live")
    conn = BrokerConnector.live(f"ws://{server}/ws", clock, token=TOKEN)

    pub = EndpointSession("pub", clock, fabric)
    pub.set_local_media(SyntheticSource(CAM, seed="live-pub"))
    pub.ping = sink_url
    sub = EndpointSession("sub", clock, fabric, keep_all_frames=True)

    pub.publish("live/1", conn)
    sub.subscribe("live/1", conn)
    assert wait_until(lambda: sub.remote_media.total() > 3)

    clock.call_later(0, pub.send, "hello from live")
    assert wait_until(lambda: any(k == "message" for _, k, _d in sub.timeline))
    assert [d for _, k, d in sub.timeline if k == "message"] == ["hello from live"]

    got = []
    pub.on("message", lambda text, frm: got.append(text))
    clock.call_later(0, sub.send, "reply")
    assert wait_until(lambda: got == ["reply"])

    seqs = [f.seq for f in sub.remote_media.frames]
    assert seqs == sorted(seqs)

    assert wait_until(lambda: any(h.get("event") == "publish" for h in hits))
    publish_hit = next(h for h in hits if h.get("event") == "publish")
    assert publish_hit["stream"] == "live/1"

    clock.call_later(0, pub.stop)
    clock.call_later(0, sub.stop)
    assert wait_until(lambda: pub.role == "unset" and sub.role == "unset")
    assert wait_until(lambda: any(h.get("event") == "stop" for h in hits))


def test_live_hashed_subscriber_privacy(server):
    clock = WallClock()
    fabric = MediaFabric(clock, seed="live2")
    conn = BrokerConnector.live(f"ws://{server}/ws", clock, token=TOKEN)

    pub = EndpointSession("pub", clock, fabric)
    pub.set_local_media(SyntheticSource(CAM, seed="live2-pub"))
    sub = EndpointSession("sub", clock, fabric, keep_all_frames=True)

    pub.publish("secret/live", conn)
    sub.subscribe(hash_name("secret/live"), conn)
    assert wait_until(lambda: sub.remote_media.total() > 3)
    assert "secret/live" not in "\n".join(sub.capture)
    clock.call_later(0, pub.stop)
    clock.call_later(0, sub.stop)
    assert wait_until(lambda: pub.role == "unset" and sub.role == "unset")


def test_sfu_endpoint_relays_frames_and_controls(server):
    tag = hash_name("relay/1")
    with ws_connect(f"ws://{server}/sfu?token={TOKEN}", open_timeout=5) as b:
        b.send(env_line(tag, "cli-b", MessageKind.SUBSCRIBE, 0))
        with ws_connect(f"ws://{server}/sfu?token={TOKEN}", open_timeout=5) as a:
            a.send(env_line(tag, "cli-a", MessageKind.PUBLISH, 0))

            live = decode(b.recv(timeout=5))
            assert live.kind == MessageKind.EVENT
            assert json.loads(live.payload)["event"] == "publisher-live"

            a.send(
                env_line(tag, "cli-a", MessageKind.TRACKS_ADDED, 1,
                         json.dumps([{"kind": "video", "label": "cam", "enabled": True}]))
            )
            tr = decode(b.recv(timeout=5))
            assert tr.kind == MessageKind.TRACKS_ADDED
            assert json.loads(tr.payload)[0]["label"] == "cam"

            payload = base64.b64encode(b"media-bytes").decode("ascii")
            a.send(json.dumps({"frame": {
                "stream": tag, "track": "cam", "seq": 0, "ts": 1,
                "payload": payload, "sealed": False,
            }}))
            frame_line = json.loads(b.recv(timeout=5))
            assert frame_line["frame"]["payload"] == payload
            assert frame_line["frame"]["stream"] == tag

            b.send(env_line(tag, "cli-b", MessageKind.TEXT, 1, "question"))
            txt = decode(a.recv(timeout=5))
            assert txt.kind == MessageKind.TEXT and txt.payload == "question"

            a.send(env_line(tag, "cli-a", MessageKind.PAUSE_HINT, 2, "pause"))
            hint = decode(b.recv(timeout=5))
            assert hint.kind == MessageKind.PAUSE_HINT and hint.payload == "pause"

        gone = decode(b.recv(timeout=5))
        assert gone.kind == MessageKind.EVENT
        assert json.loads(gone.payload)["event"] == "publisher-gone"


def test_sfu_publisher_conflict_reported(server):
    tag = hash_name("relay/conflict")
    with ws_connect(f"ws://{server}/sfu?token={TOKEN}", open_timeout=5) as a:
        a.send(env_line(tag, "cli-a", MessageKind.PUBLISH, 0))
        with ws_connect(f"ws://{server}/sfu?token={TOKEN}", open_timeout=5) as c:
            c.send(env_line(tag, "cli-c", MessageKind.PUBLISH, 0))
            err = decode(c.recv(timeout=5))
            assert err.kind == MessageKind.ERROR
            assert json.loads(err.payload)["code"] == "PublisherConflict"
