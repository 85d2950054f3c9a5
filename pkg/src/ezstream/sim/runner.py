"""Scenario executor and report builder.

A run schedules every step on the world clock, lets virtual time play out,
and then freezes a TopologyReport: stream membership, link census, frame
accounting, per-subscriber normalized event sequences, and the outcome of
every ``expect``. Reports serialize canonically, so one (scenario, seed)
pair yields byte-identical text on every run; live-transport worlds relax
that and say so in ``meta.deterministic``.

The normalized event view keeps what a subscribing application observes:
subscription lifecycle, track updates, messages, pause hints, peer
departure, and errors. Link lifecycle entries stay out of it; which links
exist and when they attach is connector topology, not stream content.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from ..core import is_hashed_ref
from .scenario import Scenario, Step
from .world import SimWorld

_EVENT_KINDS = ("subscribed", "tracks", "message", "pause-hint", "peer-gone", "stopped", "error")


@dataclass
class AssertionResult:
    at_ms: int
    actor: str
    check: str
    args: tuple[str, ...]
    ok: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        args = " ".join(self.args)
        tail = f" ({self.detail})" if self.detail and not self.ok else ""
        return f"{status} at {self.at_ms} {self.actor} {self.check} {args}{tail}"


@dataclass
class TopologyReport:
    connector: str
    seed: int
    end_ms: int
    deterministic: bool
    streams: dict = field(default_factory=dict)
    links: dict = field(default_factory=dict)
    frames: dict = field(default_factory=dict)
    frames_consistent: bool = True
    events: dict = field(default_factory=dict)
    assertions: list[AssertionResult] = field(default_factory=list)
    transcript: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(a.ok for a in self.assertions)

    def to_dict(self) -> dict:
        return {
            "meta": {
                "connector": self.connector,
                "seed": self.seed,
                "end_ms": self.end_ms,
                "deterministic": self.deterministic,
            },
            "streams": self.streams,
            "links": self.links,
            "frames": self.frames,
            "frames_consistent": self.frames_consistent,
            "events": self.events,
            "assertions": [
                {
                    "at": a.at_ms,
                    "actor": a.actor,
                    "check": a.check,
                    "args": list(a.args),
                    "ok": a.ok,
                    "detail": a.detail,
                }
                for a in self.assertions
            ],
            "ok": self.ok,
            "transcript": self.transcript,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _normalized_events(timeline: list[tuple[int, str, str]]) -> list[str]:
    out = []
    for _ms, kind, detail in timeline:
        if kind not in _EVENT_KINDS:
            continue
        if kind == "peer-gone":
            out.append("peer-gone")
        elif kind == "error":
            out.append(f"error {detail.split(' ', 1)[0]}")
        else:
            out.append(f"{kind} {detail}".rstrip())
    return out


def _evaluate(world: SimWorld, step: Step) -> AssertionResult:
    check, body = step.args[0], step.args[1:]
    ok, detail = False, ""
    if check == "link-count":
        actual = world.link_count(step.actor)
        ok, detail = actual == int(body[0]), f"got {actual}"
    elif check == "stream-status":
        actual = world.stream_status(body[0])
        ok, detail = actual == body[1], f"got {actual}"
    elif check == "transcript-contains":
        rows = [f"{kind} {d}".strip() for _, _, kind, d in world.transcript(step.actor)]
        ok = any(body[0] in row for row in rows)
        detail = f"{len(rows)} rows searched"
    elif check == "transcript-order":
        rows = [f"{kind} {d}".strip() for _, _, kind, d in world.transcript(step.actor)]
        first = next((i for i, row in enumerate(rows) if body[0] in row), None)
        second = next((i for i, row in enumerate(rows) if body[1] in row), None)
        ok = first is not None and second is not None and first < second
        detail = f"first at {first}, second at {second}"
    elif check == "frame-count-range":
        track, lo, hi = body
        sess = world.actors.get(step.actor)
        sink = sess.remote_media if sess is not None else None
        n = 0 if sink is None else (sink.total() if track == "*" else sink.counts.get(track, 0))
        ok, detail = int(lo) <= n <= int(hi), f"got {n}"
    return AssertionResult(step.at_ms, step.actor, check, body, ok, detail)


def _stream_sections(world: SimWorld) -> dict:
    by_tag: dict[str, dict] = {}
    for label, sess in world.actors.items():
        if sess.stream_tag is None:
            continue
        entry = by_tag.setdefault(
            sess.stream_tag, {"publisher": None, "subscribers": [], "names": []}
        )
        if sess.role == "publisher":
            entry["publisher"] = label
        elif sess.role == "subscriber":
            entry["subscribers"].append(label)
        if sess.stream_local and not is_hashed_ref(sess.stream_local):
            entry["names"].append(sess.stream_local)
    out = {}
    for tag, entry in by_tag.items():
        name = entry["names"][0] if entry["names"] else tag
        out[name] = {
            "publisher": entry["publisher"],
            "subscribers": sorted(entry["subscribers"]),
            "status": world.stream_status(name),
        }
    return out


def _frame_sections(world: SimWorld) -> tuple[dict, bool]:
    sent: dict[str, int] = {}
    delivered: dict[str, int] = {}
    dropped: dict[str, int] = {}
    consistent = True
    for sess in world.actors.values():
        for label, n in sess.frames_sent_per_track.items():
            sent[label] = sent.get(label, 0) + n
        own_dropped: dict[str, int] = {}
        for _ms, kind, detail in sess.timeline:
            if kind == "frame-dropped":
                label = detail.split("#", 1)[0]
                dropped[label] = dropped.get(label, 0) + 1
                own_dropped[label] = own_dropped.get(label, 0) + 1
        if sess.remote_media is not None:
            for label, n in sess.remote_media.counts.items():
                delivered[label] = delivered.get(label, 0) + n
    # No sink may account for more frames than every publisher sent.
    for sess in world.actors.values():
        if sess.remote_media is None:
            continue
        own_dropped = {}
        for _ms, kind, detail in sess.timeline:
            if kind == "frame-dropped":
                label = detail.split("#", 1)[0]
                own_dropped[label] = own_dropped.get(label, 0) + 1
        for label, n in sess.remote_media.counts.items():
            if n + own_dropped.get(label, 0) > sent.get(label, 0):
                consistent = False
    frames = {
        label: {
            "sent": sent.get(label, 0),
            "delivered": delivered.get(label, 0),
            "dropped": dropped.get(label, 0),
        }
        for label in sorted(set(sent) | set(delivered) | set(dropped))
    }
    return frames, consistent


def run_scenario(
    scn: Scenario,
    connector: Optional[str] = None,
    seed: Optional[int] = None,
    report_path: Optional[str] = None,
) -> TopologyReport:
    """Execute a scenario; overrides beat the scenario's own header."""
    report, world = run_with_world(scn, connector=connector, seed=seed, report_path=report_path)
    world.close()
    return report


def run_with_world(
    scn: Scenario,
    connector: Optional[str] = None,
    seed: Optional[int] = None,
    report_path: Optional[str] = None,
) -> tuple[TopologyReport, SimWorld]:
    """Like run_scenario, but also hands back the world for inspection.
    The world is left un-stopped; callers may keep driving its clock."""
    use_connector = connector if connector is not None else scn.connector
    use_seed = seed if seed is not None else scn.seed
    world = SimWorld(connector=use_connector, seed=use_seed)
    results: list[AssertionResult] = []
    t0 = world.clock.now_ms()

    def do(step: Step):
        if step.action == "expect":
            results.append(_evaluate(world, step))
        else:
            world.apply(step.actor, step.action, step.args)

    for step in scn.steps:
        world.clock.call_later(t0 + step.at_ms - world.clock.now_ms(), do, step)
    world.run_until(t0 + scn.end_ms)

    frames, consistent = _frame_sections(world)
    report = TopologyReport(
        connector=use_connector,
        seed=use_seed,
        end_ms=scn.end_ms,
        deterministic=not world.live,
        streams=_stream_sections(world),
        frames=frames,
        frames_consistent=consistent,
        assertions=results,
    )
    link_states: dict[str, str] = {}
    for sess in world.actors.values():
        for link in sess.links:
            link_states[link.link_id] = link.state
    report.links = {"count": len(link_states), "states": dict(sorted(link_states.items()))}
    report.events = {
        label: _normalized_events(sess.timeline)
        for label, sess in world.actors.items()
        if any(kind == "subscribed" for _, kind, _ in sess.timeline)
    }
    report.transcript = [
        f"{ms:>6} {actor} {kind} {detail}".rstrip()
        for ms, actor, kind, detail in world.transcript()
    ]
    if report_path:
        with open(report_path, "w", encoding="utf-8") as f:
            f.write(report.to_json())
    return report, world
