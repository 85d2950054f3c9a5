"""Start the real broker as a subprocess and run a wall-clock scenario
against it over real websockets.

Usage: python3 scripts/live_broker_roundtrip.py [--port 8787] [--token s3]
"""

import argparse
import subprocess
import sys
import time

import httpx

from ezstream.sim import parse_scenario, run_scenario

SCENARIO = """
at 0 p.pub spawn audio:mic,video:cam autopause
at 0 q.sub spawn
at 100 p.pub publish live/demo
at 300 q.sub subscribe live/demo
at 1500 p.pub send "over a real websocket"
at 2500 p.pub pause
at 3000 p.pub resume
at 4500 q.sub expect transcript-contains "message over a real websocket"
at 4500 q.sub expect transcript-contains "pause-hint pause"
at 4500 q.sub expect frame-count-range cam 10 100000
at 4500 world expect stream-status live/demo live
"""


def wait_healthy(base: str, deadline_s: float = 10.0) -> None:
    end = time.monotonic() + deadline_s
    while time.monotonic() < end:
        try:
            if httpx.get(f"{base}/healthz", timeout=1).status_code == 200:
                return
        except httpx.HTTPError:
            time.sleep(0.1)
    raise RuntimeError(f"broker at {base} never became healthy")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--port", type=int, default=8787)
    ap.add_argument("--token", default=None)
    args = ap.parse_args()

    cmd = [sys.executable, "-m", "ezstream.broker.server", "--listen", f"127.0.0.1:{args.port}"]
    if args.token:
        cmd += ["--token", args.token]
    proc = subprocess.Popen(cmd, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    try:
        base = f"http://127.0.0.1:{args.port}"
        wait_healthy(base)
        spec = f"rtclite:ws://127.0.0.1:{args.port}/live/demo"
        if args.token:
            spec += f"?token={args.token}"
        scn = parse_scenario(SCENARIO)
        report = run_scenario(scn, connector=spec)
        for a in report.assertions:
            print(a.line())
        # run_scenario closed the world, so the broker should show a clean registry
        print("registry after shutdown:", httpx.get(f"{base}/streams", timeout=5).json()["broker"]["streams"])
        return 0 if report.ok else 1
    finally:
        proc.terminate()
        proc.wait(timeout=10)


if __name__ == "__main__":
    raise SystemExit(main())
