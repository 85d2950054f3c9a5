"""Run the canonical one-pub/two-sub script on every connector and diff the
normalized subscriber event sequences.

Usage: python3 scripts/interchangeability.py [--seed 7]
"""

import argparse

from ezstream.sim import canonical_scenario, run_scenario

SPECS = ("mem:local", "rtclite:sim", "storage:mem", "sfu:local")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    events = {}
    for spec in SPECS:
        report = run_scenario(canonical_scenario(connector=spec, seed=args.seed))
        events[spec] = report.events
        print(f"== {spec}")
        for actor in sorted(report.events):
            print(f"   {actor}:")
            for e in report.events[actor]:
                print(f"      {e}")
    base = events[SPECS[0]]
    mismatched = [spec for spec in SPECS[1:] if events[spec] != base]
    if mismatched:
        print("MISMATCH:", ", ".join(mismatched))
        return 1
    print(f"identical subscriber views on all {len(SPECS)} connectors")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
