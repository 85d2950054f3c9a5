"""Scenario model: a seeded, timed script of endpoint actions.

File format is line oriented and diff friendly::

    # optional headers before the first step
    seed 42
    connector mem:local
    settle 600

    at 0 a.pub spawn audio:mic,video:cam autopause
    at 10 a.pub publish room/1
    at 20 b.sub subscribe room/1
    at 500 a.pub send "hello there"
    at 900 b.sub expect frame-count-range cam 1 10000

Every step is ``at <ms> <actor> <action> <args...>``; arguments with spaces
are quoted. Actor labels may be dotted (``a.pub``, ``a.sub``): the part
before the first dot names the party, which relay connectors use to group
sessions onto one shared server link.

``expect`` steps are assertions evaluated at their timestamp. The assertion
language is deliberately small:

- ``expect link-count <n>`` -- distinct connected link ids in scope (the
  actor's party, or every session when the actor is ``world``)
- ``expect stream-status <name> <live|idle|unknown>``
- ``expect transcript-contains <needle>`` -- scope as above
- ``expect transcript-order <first> <second>`` -- first occurrence of one
  needle precedes the other's
- ``expect frame-count-range <track> <min> <max>`` -- received frames on the
  actor's sink; track ``*`` totals every track
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field, replace

from ..errors import ParamError

ACTIONS = frozenset(
    {
        "spawn",
        "publish",
        "subscribe",
        "stop",
        "send",
        "pause",
        "resume",
        "add_tracks",
        "remove_tracks",
        "drop_transport",
        "expect",
    }
)

# check name -> (min args, max args)
EXPECT_CHECKS = {
    "link-count": (1, 1),
    "stream-status": (2, 2),
    "transcript-contains": (1, 1),
    "transcript-order": (2, 2),
    "frame-count-range": (3, 3),
}

# action -> (min args, max args); None = unbounded
_ACTION_ARITY = {
    "spawn": (0, None),
    "publish": (1, 1),
    "subscribe": (1, 1),
    "stop": (0, 0),
    "send": (1, 1),
    "pause": (0, 0),
    "resume": (0, 0),
    "add_tracks": (1, 1),
    "remove_tracks": (1, 1),
    "drop_transport": (0, 0),
    "expect": (2, None),
}

DEFAULT_CONNECTOR = "mem:local"
DEFAULT_SETTLE_MS = 600


@dataclass(frozen=True)
class Step:
    at_ms: int
    actor: str
    action: str
    args: tuple[str, ...] = ()

    def to_line(self) -> str:
        parts = ["at", str(self.at_ms), self.actor, self.action]
        parts += [shlex.quote(a) for a in self.args]
        return " ".join(parts)


@dataclass
class Scenario:
    seed: int = 1
    connector: str = DEFAULT_CONNECTOR
    settle_ms: int = DEFAULT_SETTLE_MS
    steps: list[Step] = field(default_factory=list)

    @property
    def end_ms(self) -> int:
        last = max((s.at_ms for s in self.steps), default=0)
        return last + self.settle_ms

    def to_text(self) -> str:
        lines = [
            f"seed {self.seed}",
            f"connector {self.connector}",
            f"settle {self.settle_ms}",
            "",
        ]
        lines += [s.to_line() for s in self.steps]
        return "\n".join(lines) + "\n"


def _check_step(at_ms: int, actor: str, action: str, args: tuple[str, ...], where: str) -> Step:
    if at_ms < 0:
        raise ParamError(f"{where}: negative time {at_ms}")
    if not actor:
        raise ParamError(f"{where}: empty actor label")
    if action not in ACTIONS:
        raise ParamError(f"{where}: unknown action {action!r}")
    lo, hi = _ACTION_ARITY[action]
    if len(args) < lo or (hi is not None and len(args) > hi):
        raise ParamError(f"{where}: {action} takes {lo}..{hi if hi is not None else 'n'} args")
    if action == "expect":
        check = args[0]
        if check not in EXPECT_CHECKS:
            raise ParamError(
                f"{where}: unknown check {check!r} (known: {', '.join(sorted(EXPECT_CHECKS))})"
            )
        clo, chi = EXPECT_CHECKS[check]
        body = args[1:]
        if len(body) < clo or len(body) > chi:
            raise ParamError(f"{where}: expect {check} takes {clo}..{chi} args")
    return Step(at_ms=at_ms, actor=actor, action=action, args=args)


def parse_scenario(text: str) -> Scenario:
    """Parse scenario text. Header lines (seed/connector/settle) must come
    before the first step; ``#`` starts a comment; blanks are ignored."""
    scn = Scenario()
    seen_step = False
    for n, raw in enumerate(text.splitlines(), start=1):
        where = f"line {n}"
        try:
            tokens = shlex.split(raw, comments=True)
        except ValueError as e:
            raise ParamError(f"{where}: {e}") from e
        if not tokens:
            continue
        head = tokens[0]
        if head in ("seed", "connector", "settle"):
            if seen_step:
                raise ParamError(f"{where}: header {head!r} after steps")
            if len(tokens) != 2:
                raise ParamError(f"{where}: {head} takes one value")
            if head == "connector":
                scn.connector = tokens[1]
            else:
                try:
                    setattr(scn, "seed" if head == "seed" else "settle_ms", int(tokens[1]))
                except ValueError as e:
                    raise ParamError(f"{where}: {head} wants an integer") from e
            continue
        if head != "at":
            raise ParamError(f"{where}: expected 'at <ms> <actor> <action> ...', got {head!r}")
        if len(tokens) < 4:
            raise ParamError(f"{where}: step needs at least 'at <ms> <actor> <action>'")
        try:
            at_ms = int(tokens[1])
        except ValueError as e:
            raise ParamError(f"{where}: bad timestamp {tokens[1]!r}") from e
        scn.steps.append(_check_step(at_ms, tokens[2], tokens[3], tuple(tokens[4:]), where))
        seen_step = True
    return scn


def _step(at_ms: int, actor: str, action: str, *args: str) -> Step:
    return _check_step(at_ms, actor, action, tuple(args), "builder")


def _is_star(connector: str) -> bool:
    return connector.partition(":")[0] == "sfu"


# -- canonical topologies -------------------------------------------------


def build_call(a: str = "a", b: str = "b", connector: str = DEFAULT_CONNECTOR, seed: int = 1) -> Scenario:
    """Two-party call: exactly two streams. Each party publishes its own
    stream and subscribes to the other's, via one publisher session and one
    subscriber session per party."""
    end = 900
    steps = [
        _step(0, f"{a}.pub", "spawn", "audio:mic,video:cam"),
        _step(0, f"{b}.pub", "spawn", "audio:mic,video:cam"),
        _step(0, f"{a}.sub", "spawn"),
        _step(0, f"{b}.sub", "spawn"),
        _step(10, f"{a}.pub", "publish", f"call/{a}"),
        _step(10, f"{b}.pub", "publish", f"call/{b}"),
        _step(20, f"{a}.sub", "subscribe", f"call/{b}"),
        _step(20, f"{b}.sub", "subscribe", f"call/{a}"),
        _step(end, "world", "expect", "stream-status", f"call/{a}", "live"),
        _step(end, "world", "expect", "stream-status", f"call/{b}", "live"),
        # 2 streams x 1 subscriber on mesh; 2 parties x 1 server link on star.
        _step(end, "world", "expect", "link-count", "2"),
        _step(end, f"{a}.sub", "expect", "frame-count-range", "cam", "1", "100000"),
        _step(end, f"{b}.sub", "expect", "frame-count-range", "cam", "1", "100000"),
    ]
    return Scenario(seed=seed, connector=connector, steps=steps)


def build_conference(n: int, connector: str = DEFAULT_CONNECTOR, seed: int = 1) -> Scenario:
    """N-party conference: n streams; each party publishes one stream and
    subscribes to the other n-1."""
    if n < 2:
        raise ParamError(f"conference needs at least 2 parties, got {n}")
    end = 900
    steps = []
    for i in range(1, n + 1):
        steps.append(_step(0, f"p{i}.pub", "spawn", "audio:mic,video:cam"))
        for j in range(1, n + 1):
            if j != i:
                steps.append(_step(0, f"p{i}.sub{j}", "spawn"))
    for i in range(1, n + 1):
        steps.append(_step(10, f"p{i}.pub", "publish", f"conf/{i}"))
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if j != i:
                steps.append(_step(20, f"p{i}.sub{j}", "subscribe", f"conf/{j}"))
    for i in range(1, n + 1):
        steps.append(_step(end, "world", "expect", "stream-status", f"conf/{i}", "live"))
    links = n if _is_star(connector) else n * (n - 1)
    steps.append(_step(end, "world", "expect", "link-count", str(links)))
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if j != i:
                steps.append(
                    _step(end, f"p{i}.sub{j}", "expect", "frame-count-range", "cam", "1", "100000")
                )
    return Scenario(seed=seed, connector=connector, steps=steps)


def tree_nodes(depth: int, fanout: int) -> list[str]:
    """Node labels of the full tree, breadth first: r, r1, r2, r11, ..."""
    if depth < 1 or fanout < 1:
        raise ParamError(f"tree needs depth >= 1 and fanout >= 1, got {depth}/{fanout}")
    level = ["r"]
    out = ["r"]
    for _ in range(depth):
        level = [f"{node}{i}" for node in level for i in range(1, fanout + 1)]
        out += level
    return out


def tree_parent(node: str) -> str:
    return node[:-1] if len(node) > 1 else ""


def build_broadcast_tree(
    depth: int, fanout: int, connector: str = DEFAULT_CONNECTOR, seed: int = 1
) -> Scenario:
    """Serverless cascade: the root publishes; every internal node
    subscribes to its parent's stream and republishes the received frames
    as its own stream; leaves only subscribe."""
    nodes = tree_nodes(depth, fanout)
    internal = [x for x in nodes if len(x) - 1 < depth]  # label length encodes level
    steps = [
        _step(0, "r.pub", "spawn", "video:cam"),
        _step(10, "r.pub", "publish", "tree/r"),
    ]
    for node in nodes[1:]:
        level = len(node) - 1
        t = 20 + 30 * (level - 1)
        steps.append(_step(t, f"{node}.sub", "spawn"))
        steps.append(_step(t + 1, f"{node}.sub", "subscribe", f"tree/{tree_parent(node)}"))
        if node in internal:
            # Forwarding source taps the subscriber session just created.
            steps.append(_step(t + 2, f"{node}.pub", "spawn", f"forward:{node}.sub"))
            steps.append(_step(t + 3, f"{node}.pub", "publish", f"tree/{node}"))
    end = 30 * depth + 1200
    for node in internal:
        steps.append(_step(end, "world", "expect", "stream-status", f"tree/{node}", "live"))
    # One link per subscribing node on mesh; one per party on star.
    links = len(nodes) if _is_star(connector) else len(nodes) - 1
    steps.append(_step(end, "world", "expect", "link-count", str(links)))
    for node in nodes[1:]:
        if node not in internal:
            steps.append(_step(end, f"{node}.sub", "expect", "frame-count-range", "cam", "1", "100000"))
    return Scenario(seed=seed, connector=connector, steps=steps, settle_ms=300)


def canonical_scenario(connector: str = DEFAULT_CONNECTOR, seed: int = 1) -> Scenario:
    """The connector-interchangeability script: one publisher, two
    subscribers, text both ways, pause/resume, track add/remove, stop."""
    steps = [
        _step(0, "p.pub", "spawn", "audio:mic,video:cam", "autopause"),
        _step(0, "q.sub", "spawn"),
        _step(0, "r.sub", "spawn"),
        _step(10, "p.pub", "publish", "room/main"),
        _step(30, "q.sub", "subscribe", "room/main"),
        _step(40, "r.sub", "subscribe", "room/main"),
        _step(400, "p.pub", "send", "welcome"),
        _step(500, "q.sub", "send", "hi from q"),
        _step(600, "p.pub", "pause"),
        _step(800, "p.pub", "resume"),
        _step(1000, "p.pub", "add_tracks", "data:captions"),
        _step(1200, "p.pub", "remove_tracks", "captions"),
        _step(1500, "p.pub", "stop"),
    ]
    return Scenario(seed=seed, connector=connector, steps=steps)
