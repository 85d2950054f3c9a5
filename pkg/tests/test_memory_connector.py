"""In-process service: pairing, pending subscribers, churn, conflicts."""

import pytest

from ezstream.clocks import VirtualClock
from ezstream.core import TrackDescriptor, hash_name
from ezstream.endpoint import EndpointSession
from ezstream.errors import PublisherConflict, StreamUnknown
from ezstream.media import MediaFabric, SyntheticSource
from ezstream.connectors.memory import MemoryConnector, MemoryService

CAM = (TrackDescriptor("video", "cam"),)


def make_world(seed="m"):
    clk = VirtualClock()
    fab = MediaFabric(clk, seed=seed)
    svc = MemoryService(clk)
    conn = MemoryConnector(svc)

    def spawn(label, keep_all=True, tracks=None):
        s = EndpointSession(label, clk, fab, keep_all_frames=keep_all)
        if tracks is not None:
            s.set_local_media(SyntheticSource(tracks, seed=f"{seed}:{label}"))
        return s

    return clk, svc, conn, spawn


def test_one_publisher_two_subscribers():
    clk, svc, conn, spawn = make_world()
    pub = spawn("p", tracks=CAM)
    s1, s2 = spawn("s1"), spawn("s2")
    pub.publish("s1-name", conn)
    s1.subscribe("s1-name", conn)
    s2.subscribe("s1-name", conn)
    clk.run_until(1000)
    assert s1.remote_media.total() > 0
    assert s2.remote_media.total() > 0
    assert len(pub.links) == 2
    assert svc.record("s1-name").status == "live"
    assert len(svc.record("s1-name").subscribers) == 2


def test_subscribe_before_publish_goes_pending_then_connects():
    clk, svc, conn, spawn = make_world()
    sub = spawn("s")
    sub.subscribe("room/1", conn)
    clk.run_until(300)
    assert svc.record("room/1").status == "idle"
    assert sub.links == []
    pub = spawn("p", tracks=CAM)
    pub.publish("room/1", conn)
    clk.run_until(1300)
    assert [l.state for l in sub.links] == ["connected"]
    assert sub.remote_media.total() > 0


def test_second_publisher_conflicts_and_resets():
    clk, svc, conn, spawn = make_world()
    p1 = spawn("p1", tracks=CAM)
    p2 = spawn("p2", tracks=CAM)
    p1.publish("s1", conn)
    with pytest.raises(PublisherConflict):
        p2.publish("s1", conn)
    assert p2.role == "unset"
    assert svc.record("s1").publisher is not None
    # The loser can retry elsewhere.
    p2.publish("s2", conn)
    assert p2.role == "publisher"


def test_publisher_stop_leaves_subscribers_pending():
    clk, svc, conn, spawn = make_world()
    pub = spawn("p", tracks=CAM)
    s1, s2 = spawn("s1"), spawn("s2")
    pub.publish("s1", conn)
    s1.subscribe("s1", conn)
    s2.subscribe("s1", conn)
    clk.run_until(500)
    pub.stop()
    clk.run_until(800)
    assert svc.record("s1").status == "idle"
    assert len(svc.record("s1").subscribers) == 2
    gone = [d for _, k, d in s1.timeline if k == "peer-gone"]
    assert gone  # subscriber observed the loss
    # Re-publish reconnects both subscribers.
    pub.publish("s1", conn)
    clk.run_until(1800)
    assert [l.state for l in s1.links] == ["connected"]
    assert [l.state for l in s2.links] == ["connected"]


def test_subscriber_stop_prunes_only_its_link():
    clk, svc, conn, spawn = make_world()
    pub = spawn("p", tracks=CAM)
    s1, s2 = spawn("s1"), spawn("s2")
    pub.publish("s1", conn)
    s1.subscribe("s1", conn)
    s2.subscribe("s1", conn)
    clk.run_until(500)
    s1.stop()
    clk.run_until(800)
    assert len(pub.links) == 1
    assert len(svc.record("s1").subscribers) == 1
    count = s2.remote_media.total()
    clk.run_until(1300)
    assert s2.remote_media.total() > count  # s2 unaffected


def test_hashed_subscribe_resolves_live_stream():
    clk, svc, conn, spawn = make_world()
    pub = spawn("p", tracks=CAM)
    sub = spawn("s")
    pub.publish("private/7", conn)
    sub.subscribe(hash_name("private/7"), conn)
    clk.run_until(1000)
    assert sub.remote_media.total() > 0
    assert "private/7" not in "\n".join(sub.capture)


def test_hashed_subscribe_without_mapping_errors():
    clk, svc, conn, spawn = make_world()
    sub = spawn("s")
    with pytest.raises(StreamUnknown):
        sub.subscribe(hash_name("never-published"), conn)
    assert sub.role == "unset"


def test_empty_record_removed():
    clk, svc, conn, spawn = make_world()
    pub = spawn("p", tracks=CAM)
    pub.publish("s1", conn)
    pub.stop()
    assert svc.record("s1") is None


def test_text_fanout_through_service():
    clk, svc, conn, spawn = make_world()
    pub = spawn("p", tracks=CAM)
    subs = [spawn(f"s{i}") for i in range(3)]
    pub.publish("s1", conn)
    for s in subs:
        s.subscribe("s1", conn)
    clk.run_until(500)
    got = []
    for s in subs:
        s.on("message", lambda text, frm, s=s: got.append((s.label, text)))
    pub.send("hello")
    clk.run_until(1000)
    assert sorted(got) == [("s0", "hello"), ("s1", "hello"), ("s2", "hello")]


def test_track_updates_reach_registry_and_subscribers():
    clk, svc, conn, spawn = make_world()
    pub = spawn("p", tracks=CAM)
    sub = spawn("s")
    pub.publish("s1", conn)
    sub.subscribe("s1", conn)
    clk.run_until(500)
    pub.add_tracks((TrackDescriptor("audio", "mic"),))
    clk.run_until(1500)
    assert {t.label for t in svc.record("s1").tracks} == {"cam", "mic"}
    assert {t.label for t in sub.remote_tracks} == {"cam", "mic"}
    assert sub.remote_media.counts["mic"] > 0
    pub.remove_tracks(("mic",))
    clk.run_until(2000)
    assert {t.label for t in svc.record("s1").tracks} == {"cam"}
    assert {t.label for t in sub.remote_tracks} == {"cam"}


def test_late_subscriber_joins_live_stream():
    clk, svc, conn, spawn = make_world()
    pub = spawn("p", tracks=CAM)
    pub.publish("s1", conn)
    clk.run_until(700)
    late = spawn("late")
    late.subscribe("s1", conn)
    clk.run_until(1700)
    assert late.remote_media.total() > 0
    # Joined mid-stream: first received seq is well past zero.
    first = late.remote_media.frames[0]
    assert first.seq > 0
