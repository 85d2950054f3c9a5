"""Sweep conference sizes and print mesh vs star link counts.

Usage: python3 scripts/topology_sweep.py [--max-n 6] [--seed 1]
"""

import argparse

from ezstream.sim import build_conference, run_with_world


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--max-n", type=int, default=6)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    print(f"{'n':>3} {'streams':>8} {'mesh links':>11} {'star links':>11} {'mesh formula':>13}")
    for n in range(2, args.max_n + 1):
        row = {}
        for spec in ("mem:local", "sfu:local"):
            report, world = run_with_world(build_conference(n, connector=spec, seed=args.seed))
            if not report.ok:
                for a in report.assertions:
                    if not a.ok:
                        print("unexpected failure:", a.line())
                return 1
            row[spec] = (len(report.streams), world.link_count("world"))
        streams, mesh = row["mem:local"]
        _, star = row["sfu:local"]
        print(f"{n:>3} {streams:>8} {mesh:>11} {star:>11} {n * (n - 1):>13}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
