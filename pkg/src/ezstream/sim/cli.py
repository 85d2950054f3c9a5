"""Command line front end for the simulator.

``sim run <scenario-file>`` executes a script; ``sim call``, ``sim conf``
and ``sim tree`` build and run the canonical topologies; ``sim parse-url``
checks a stream URL. Exit status is 0 only when every expectation passed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from typing import Optional

from ..addresses import parse_stream_url
from ..errors import EzStreamError
from .runner import TopologyReport, run_scenario
from .scenario import (
    Scenario,
    build_broadcast_tree,
    build_call,
    build_conference,
    parse_scenario,
)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--connector", help="override connector spec, e.g. mem:local or sfu:local")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--report", help="write the JSON report to this path")
    p.add_argument(
        "--print-scenario",
        action="store_true",
        help="print the scenario text instead of running it",
    )


def _finish(scn: Scenario, args: argparse.Namespace) -> int:
    if args.print_scenario:
        sys.stdout.write(scn.to_text())
        return 0
    report = run_scenario(scn, connector=args.connector, seed=args.seed, report_path=args.report)
    return _print_outcome(report)


def _print_outcome(report: TopologyReport) -> int:
    for a in report.assertions:
        print(a.line())
    n_ok = sum(1 for a in report.assertions if a.ok)
    print(
        f"{'ok' if report.ok else 'FAILED'}: {n_ok}/{len(report.assertions)} expectations, "
        f"{report.links['count']} links, {len(report.streams)} streams"
    )
    return 0 if report.ok else 1


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="sim", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("scenario", help="path to a scenario script")
    _add_run_flags(p_run)

    p_call = sub.add_parser("call", help="two-party call")
    p_call.add_argument("a", nargs="?", default="a")
    p_call.add_argument("b", nargs="?", default="b")
    _add_run_flags(p_call)

    p_conf = sub.add_parser("conf", help="n-party conference")
    p_conf.add_argument("n", type=int)
    _add_run_flags(p_conf)

    p_tree = sub.add_parser("tree", help="broadcast tree")
    p_tree.add_argument("depth", type=int)
    p_tree.add_argument("fanout", type=int)
    _add_run_flags(p_tree)

    p_url = sub.add_parser("parse-url", help="parse a stream URL")
    p_url.add_argument("url")

    args = parser.parse_args(argv)
    try:
        if args.cmd == "parse-url":
            addr = parse_stream_url(args.url)
            print(json.dumps(dataclasses.asdict(addr), sort_keys=True, indent=2))
            return 0
        connector = args.connector or "mem:local"
        seed = args.seed if args.seed is not None else 1
        if args.cmd == "run":
            with open(args.scenario, encoding="utf-8") as f:
                scn = parse_scenario(f.read())
        elif args.cmd == "call":
            scn = build_call(args.a, args.b, connector=connector, seed=seed)
        elif args.cmd == "conf":
            scn = build_conference(args.n, connector=connector, seed=seed)
        else:
            scn = build_broadcast_tree(args.depth, args.fanout, connector=connector, seed=seed)
        return _finish(scn, args)
    except (EzStreamError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
