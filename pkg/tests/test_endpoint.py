"""Endpoint engine: direct cross-wired handshake, in-band ordering, sealing,
track changes, text channel, and fork republish."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ezstream.clocks import VirtualClock
from ezstream.core import TrackDescriptor, hash_name
from ezstream.endpoint import SEND_QUEUE_LIMIT, EndpointSession
from ezstream.errors import LinkUnknown, RoleError, StateError, TrackUnknown
from ezstream.media import MediaFabric, SyntheticSource

AV = (TrackDescriptor("audio", "mic"), TrackDescriptor("video", "cam"))
CAM = (TrackDescriptor("video", "cam"),)


def make_pair(tracks=CAM, seed="t", keep_all=True):
    clk = VirtualClock()
    fab = MediaFabric(clk, seed=seed)
    pub = EndpointSession("v1", clk, fab)
    sub = EndpointSession("v2", clk, fab, keep_all_frames=keep_all)
    pub.on("data", sub.apply)
    sub.on("data", pub.apply)
    pub.set_local_media(SyntheticSource(tracks, seed=seed))
    return clk, pub, sub


def frames_in_timeline(sess):
    return [detail for _, kind, detail in sess.timeline if kind == "frame"]


def test_cross_wired_sessions_connect_without_broker():
    clk, pub, sub = make_pair()
    pub.publish("s1")
    sub.subscribe("s1")
    clk.run_until_idle(2000)
    assert [l.state for l in pub.links] == ["connected"]
    assert [l.state for l in sub.links] == ["connected"]


def test_subscribe_then_publish_same_instant_also_connects():
    clk, pub, sub = make_pair()
    sub.subscribe("s1")
    pub.publish("s1")
    clk.run_until_idle(2000)
    assert [l.state for l in pub.links] == ["connected"]
    assert [l.state for l in sub.links] == ["connected"]


def test_frames_flow_after_connect():
    clk, pub, sub = make_pair(tracks=AV)
    pub.publish("s1")
    sub.subscribe("s1")
    clk.run_until(1000)
    assert sub.remote_media.counts["cam"] > 0
    assert sub.remote_media.counts["mic"] > 0
    assert [t.label for t in sub.remote_tracks] == ["mic", "cam"]
    for f in sub.remote_media.frames:
        assert f.stream == "s1"  # rewritten to the local addressing form


def test_delivered_seq_monotone_per_track():
    clk, pub, sub = make_pair(tracks=AV)
    pub.publish("s1")
    sub.subscribe("s1")
    clk.run_until(2000)
    per = {}
    for f in sub.remote_media.frames:
        per.setdefault(f.track_label, []).append(f.seq)
    for seqs in per.values():
        assert seqs == sorted(seqs)
        assert len(seqs) == len(set(seqs))


def test_answer_before_any_offer_is_state_error():
    clk, pub, sub = make_pair()
    sub.subscribe("s1")
    with pytest.raises(StateError):
        sub.apply(json.dumps({"link": "nope#1", "type": "answer", "n": 0, "from": "x"}))


def test_candidate_for_unknown_link_is_link_unknown():
    clk, pub, sub = make_pair()
    sub.subscribe("s1")
    with pytest.raises(LinkUnknown):
        sub.apply(json.dumps({"link": "nope#1", "type": "candidate", "n": 0, "from": "x"}))


def test_duplicate_offer_dropped_state_unchanged():
    clk, pub, sub = make_pair()
    offers = []
    pub.on("data", lambda p: offers.append(p) if '"offer"' in p else None)
    pub.publish("s1")
    sub.subscribe("s1")
    clk.run_until_idle(2000)
    assert [l.state for l in sub.links] == ["connected"]
    sub.apply(offers[0])  # replay
    assert [l.state for l in sub.links] == ["connected"]
    assert len(sub.links) == 1


def test_apply_before_role_set_is_role_error():
    clk = VirtualClock()
    fab = MediaFabric(clk, seed="t")
    s = EndpointSession("v", clk, fab)
    with pytest.raises(RoleError):
        s.apply(json.dumps({"link": "x#1", "type": "offer", "n": 0, "from": "x"}))


def test_publish_twice_rejected():
    clk, pub, sub = make_pair()
    pub.publish("s1")
    with pytest.raises(RoleError):
        pub.publish("s2")
    sub.subscribe("s1")
    with pytest.raises(RoleError):
        sub.subscribe("s1")


def test_text_both_directions():
    clk, pub, sub = make_pair()
    pub.publish("s1")
    sub.subscribe("s1")
    clk.run_until(500)
    got_sub, got_pub = [], []
    sub.on("message", lambda text, frm: got_sub.append(text))
    pub.on("message", lambda text, frm: got_pub.append(text))
    pub.send("hi")
    sub.send("ack")
    clk.run_until(1000)
    assert got_sub == ["hi"]
    assert got_pub == ["ack"]
    assert pub.channel and sub.channel


def test_send_before_connect_queued_in_order():
    clk, pub, sub = make_pair()
    pub.publish("s1")
    pub.send("one")
    pub.send("two")
    got = []
    sub.on("message", lambda text, frm: got.append(text))
    sub.subscribe("s1")
    clk.run_until_idle(2000)
    assert got == ["one", "two"]


def test_send_queue_bounded_drops_oldest():
    clk, pub, sub = make_pair()
    pub.publish("s1")
    for n in range(SEND_QUEUE_LIMIT + 10):
        pub.send(str(n))
    got = []
    sub.on("message", lambda text, frm: got.append(text))
    sub.subscribe("s1")
    clk.run_until_idle(2000)
    assert len(got) == SEND_QUEUE_LIMIT
    assert got[0] == "10" and got[-1] == str(SEND_QUEUE_LIMIT + 9)


def test_send_without_role_rejected():
    clk = VirtualClock()
    fab = MediaFabric(clk, seed="t")
    s = EndpointSession("v", clk, fab)
    with pytest.raises(RoleError):
        s.send("x")


def test_text_ordered_with_frames():
    clk, pub, sub = make_pair()
    pub.publish("s1")
    sub.subscribe("s1")
    clk.run_until(500)
    pub.send("mark")
    clk.run_until(1000)
    rows = [(kind, detail) for _, kind, detail in sub.timeline if kind in ("frame", "message")]
    mark = rows.index(("message", "mark"))
    before = [d for k, d in rows[:mark] if k == "frame"]
    after = [d for k, d in rows[mark + 1 :] if k == "frame"]
    # The text lands at a single point in the frame order: no frame sent
    # before it arrives after it.
    sent_before = int(before[-1].split("#")[1]) if before else -1
    assert all(int(d.split("#")[1]) > sent_before for d in after)


def test_autopause_hint_before_gap_and_before_resume_frames():
    clk, pub, sub = make_pair()
    pub.autopause = True
    pub.publish("s1")
    sub.subscribe("s1")
    clk.run_until(500)
    pub.set_playing(False)
    clk.run_until(1000)
    pub.set_playing(True)
    clk.run_until(1500)
    rows = [(kind, detail) for _, kind, detail in sub.timeline if kind in ("frame", "pause-hint")]
    pause_at = rows.index(("pause-hint", "pause"))
    play_at = rows.index(("pause-hint", "play"))
    assert pause_at < play_at
    assert all(kind != "frame" for kind, _ in rows[pause_at + 1 : play_at])
    assert any(kind == "frame" for kind, _ in rows[play_at + 1 :])
    assert sub.remote_paused is False


def test_no_hints_without_autopause():
    clk, pub, sub = make_pair()
    pub.publish("s1")
    sub.subscribe("s1")
    clk.run_until(500)
    pub.set_playing(False)
    clk.run_until(900)
    pub.set_playing(True)
    clk.run_until(1300)
    assert not any(kind == "pause-hint" for _, kind, _ in sub.timeline)
    # Frames still stop during the pause window.
    arrivals = [ts for ts, kind, _ in sub.timeline if kind == "frame"]
    assert not [t for t in arrivals if 540 <= t <= 900]


def test_sealed_frames_with_matching_secret_arrive_intact():
    clk, pub, sub = make_pair()
    pub.secret = "k1"
    sub.secret = "k1"
    pub.publish("s1")
    sub.subscribe("s1")
    clk.run_until(1000)
    assert sub.remote_media.total() > 0
    assert sub.integrity_errors == 0
    # Payload identity with an unsealed twin run.
    clk2, pub2, sub2 = make_pair()
    pub2.publish("s1")
    sub2.subscribe("s1")
    clk2.run_until(1000)
    assert sub.remote_media.payloads("cam") == sub2.remote_media.payloads("cam")


def test_mismatched_secret_delivers_zero_and_counts():
    clk, pub, sub = make_pair()
    pub.secret = "k1"
    sub.secret = "different"
    pub.publish("s1")
    sub.subscribe("s1")
    clk.run_until(1000)
    pub.set_playing(False)
    clk.run_until(1100)  # drain in-flight frames
    assert sub.remote_media.total() == 0
    assert sub.integrity_errors == pub.frames_sent > 0


def test_sealed_to_secretless_subscriber_drops():
    clk, pub, sub = make_pair()
    pub.secret = "k1"
    pub.publish("s1")
    sub.subscribe("s1")
    clk.run_until(1000)
    assert sub.remote_media.total() == 0
    assert sub.integrity_errors > 0


def test_add_remove_tracks_propagate_in_band():
    clk, pub, sub = make_pair(tracks=CAM)
    pub.publish("s1")
    sub.subscribe("s1")
    clk.run_until(500)
    pub.add_tracks((TrackDescriptor("video", "screen"),))
    clk.run_until(1500)
    assert {t.label for t in sub.remote_tracks} == {"cam", "screen"}
    assert sub.remote_media.counts["screen"] > 0
    # New-track frames never raced ahead of the descriptor update.
    assert not [d for _, k, d in sub.timeline if k == "frame-dropped" and "screen" in d]
    pub.remove_tracks(("screen",))
    clk.run_until(2500)
    assert {t.label for t in sub.remote_tracks} == {"cam"}
    count_at_removal = sub.remote_media.counts["screen"]
    clk.run_until(3000)
    assert sub.remote_media.counts["screen"] == count_at_removal


def test_track_ops_require_publisher_role():
    clk, pub, sub = make_pair()
    pub.publish("s1")
    sub.subscribe("s1")
    with pytest.raises(RoleError):
        sub.add_tracks((TrackDescriptor("video", "x"),))
    with pytest.raises(RoleError):
        sub.remove_tracks(("cam",))
    with pytest.raises(TrackUnknown):
        pub.remove_tracks(("absent",))


def test_muted_disables_audio_at_source():
    clk, pub, sub = make_pair(tracks=AV)
    pub.publish("s1")
    sub.subscribe("s1")
    clk.run_until(500)
    pub.set_muted(True)
    clk.run_until(1500)
    mic_after_mute = sub.remote_media.counts["mic"]
    clk.run_until(2000)
    assert sub.remote_media.counts["mic"] == mic_after_mute
    assert sub.remote_media.counts["cam"] > mic_after_mute
    mic_desc = [t for t in sub.remote_tracks if t.label == "mic"][0]
    assert mic_desc.enabled is False


def test_stop_and_republish_reconnects():
    clk, pub, sub = make_pair()
    pub.publish("s1")
    sub.subscribe("s1")
    clk.run_until(500)
    count_before = sub.remote_media.total()
    pub.stop()
    assert pub.role == "unset"
    clk.run_until(900)
    stalled = sub.remote_media.total()
    pub.publish("s1")
    clk.run_until(1500)
    assert sub.remote_media.total() > stalled >= count_before
    seqs = [f.seq for f in sub.remote_media.frames if f.track_label == "cam"]
    assert seqs == sorted(seqs)


def test_hashed_ref_subscriber_never_sees_raw_name():
    clk, pub, sub = make_pair()
    pub.publish("secret-room/42")
    sub.subscribe(hash_name("secret-room/42"))
    clk.run_until(1000)
    pub.send("hello")
    clk.run_until(1500)
    assert sub.remote_media.total() > 0
    blob = "\n".join(sub.capture)
    assert "secret-room/42" not in blob
    for f in sub.remote_media.frames:
        assert f.stream == hash_name("secret-room/42")


def test_fork_republishes_upstream_payloads():
    clk = VirtualClock()
    fab = MediaFabric(clk, seed="t")
    a = EndpointSession("a", clk, fab)
    b_sub = EndpointSession("b_sub", clk, fab, keep_all_frames=True)
    b_pub = EndpointSession("b_pub", clk, fab)
    c = EndpointSession("c", clk, fab, keep_all_frames=True)
    a.on("data", b_sub.apply)
    b_sub.on("data", a.apply)
    b_pub.on("data", c.apply)
    c.on("data", b_pub.apply)
    a.set_local_media(SyntheticSource(CAM, seed="t"))
    a.publish("s-a")
    b_sub.subscribe("s-a")
    b_pub.set_input(b_sub)
    b_pub.publish("s-b")
    c.subscribe("s-b")
    clk.run_until(2000)
    assert c.remote_media.total() > 0
    got = c.remote_media.payloads("cam")
    upstream = b_sub.remote_media.payloads("cam")
    # C's frames are a contiguous slice of what B received, same payload bytes.
    assert got == upstream[: len(got)] or got == upstream[len(upstream) - len(got) :]
    for f in c.remote_media.frames:
        assert f.stream == "s-b"


def test_fork_halts_when_intermediate_pauses():
    clk = VirtualClock()
    fab = MediaFabric(clk, seed="t")
    a = EndpointSession("a", clk, fab)
    b_sub = EndpointSession("b_sub", clk, fab, keep_all_frames=True)
    b_pub = EndpointSession("b_pub", clk, fab)
    c = EndpointSession("c", clk, fab, keep_all_frames=True)
    a.on("data", b_sub.apply)
    b_sub.on("data", a.apply)
    b_pub.on("data", c.apply)
    c.on("data", b_pub.apply)
    a.set_local_media(SyntheticSource(CAM, seed="t"))
    a.publish("s-a")
    b_sub.subscribe("s-a")
    b_pub.set_input(b_sub)
    b_pub.publish("s-b")
    c.subscribe("s-b")
    clk.run_until(1000)
    b_sub.set_playing(False)  # pause the intermediate node's sink
    at_pause = c.remote_media.total()
    upstream_at_pause = b_sub.remote_media.total()
    clk.run_until(2000)
    assert c.remote_media.total() <= at_pause + 1  # one frame may be in flight
    assert b_sub.remote_media.total() == upstream_at_pause
    # A's own delivery is unaffected upstream of the pause.
    assert a.frames_sent > upstream_at_pause


def test_set_input_rejected_for_subscriber():
    clk, pub, sub = make_pair()
    pub.publish("s1")
    sub.subscribe("s1")
    with pytest.raises(RoleError):
        sub.set_input(SyntheticSource(CAM, seed="x"))


@given(st.lists(st.sampled_from(["pause", "play"]), min_size=1, max_size=8), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_autopause_invariant_under_random_toggles(toggles, seed):
    clk, pub, sub = make_pair(seed=str(seed))
    pub.autopause = True
    pub.publish("s1")
    sub.subscribe("s1")
    at = 300
    for t in toggles:
        clk.run_until(at)
        pub.set_playing(t == "play")
        at += 137
    clk.run_until(at + 1000)
    # Between any pause hint and the next play hint the subscriber saw no frame.
    state = "playing"
    for _, kind, detail in sub.timeline:
        if kind == "pause-hint":
            state = "paused" if detail == "pause" else "playing"
        elif kind == "frame":
            assert state == "playing"
