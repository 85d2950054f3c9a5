"""Millisecond schedulers behind one small interface.

:class:`VirtualClock` drives the deterministic simulator: time advances only
when told to, and callbacks due at the same instant run in posting order.
:class:`WallClock` provides the same interface over real time for live
transports. Engine and connector code only ever sees the interface.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from typing import Any, Callable, Protocol


class TimerHandle:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class Clock(Protocol):
    def now_ms(self) -> int: ...

    def call_later(self, delay_ms: int, fn: Callable[..., Any], *args: Any) -> TimerHandle: ...


class VirtualClock:
    """Deterministic event loop over virtual time, 1 ms resolution."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms
        self._heap: list[tuple[int, int, TimerHandle, Callable, tuple]] = []
        self._tie = itertools.count()

    def now_ms(self) -> int:
        return self._now

    def call_later(self, delay_ms: int, fn: Callable[..., Any], *args: Any) -> TimerHandle:
        return self.call_at(self._now + max(0, int(delay_ms)), fn, *args)

    def call_at(self, ts_ms: int, fn: Callable[..., Any], *args: Any) -> TimerHandle:
        if ts_ms < self._now:
            ts_ms = self._now
        handle = TimerHandle()
        heapq.heappush(self._heap, (int(ts_ms), next(self._tie), handle, fn, args))
        return handle

    def post(self, fn: Callable[..., Any], *args: Any) -> TimerHandle:
        return self.call_at(self._now, fn, *args)

    def pending(self) -> int:
        return sum(1 for (_, _, h, _, _) in self._heap if not h.cancelled)

    def next_due(self) -> int | None:
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def run_until(self, ts_ms: int) -> None:
        """Run every callback due at or before ``ts_ms``, then land there.

        Callbacks may schedule more work; newly due work is executed in the
        same pass, so the loop reaches quiescence at each instant before
        moving on.
        """
        while True:
            due = self.next_due()
            if due is None or due > ts_ms:
                break
            _, _, handle, fn, args = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            self._now = max(self._now, due)
            fn(*args)
        self._now = max(self._now, ts_ms)

    def run_for(self, delta_ms: int) -> None:
        self.run_until(self._now + int(delta_ms))

    def run_until_idle(self, limit_ms: int = 1 << 30) -> None:
        """Drain the queue completely, up to a safety horizon."""
        while True:
            due = self.next_due()
            if due is None or due > limit_ms:
                break
            self.run_until(due)


class WallClock:
    """Real-time scheduler backed by one daemon timer thread.

    ``unix_time=True`` reports absolute epoch milliseconds (for externally
    visible timestamps); the default counts from construction.
    """

    def __init__(self, unix_time: bool = False):
        self._start = time.monotonic()
        self._unix = unix_time
        self._heap: list[tuple[float, int, TimerHandle, Callable, tuple]] = []
        self._tie = itertools.count()
        self._cond = threading.Condition()
        self._thread: threading.Thread | None = None
        self._stopped = False

    def now_ms(self) -> int:
        if self._unix:
            return int(time.time() * 1000)
        return int((time.monotonic() - self._start) * 1000)

    def call_at(self, ts_ms: int, fn: Callable[..., Any], *args: Any) -> TimerHandle:
        return self.call_later(ts_ms - self.now_ms(), fn, *args)

    def call_later(self, delay_ms: int, fn: Callable[..., Any], *args: Any) -> TimerHandle:
        handle = TimerHandle()
        due = time.monotonic() + max(0, delay_ms) / 1000.0
        with self._cond:
            heapq.heappush(self._heap, (due, next(self._tie), handle, fn, args))
            if self._thread is None:
                self._thread = threading.Thread(target=self._run, name="ezstream-wallclock", daemon=True)
                self._thread.start()
            self._cond.notify()
        return handle

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify()

    def _run(self) -> None:
        while True:
            with self._cond:
                if self._stopped:
                    return
                while self._heap and self._heap[0][2].cancelled:
                    heapq.heappop(self._heap)
                if not self._heap:
                    self._cond.wait(timeout=1.0)
                    continue
                due = self._heap[0][0]
                now = time.monotonic()
                if due > now:
                    self._cond.wait(timeout=due - now)
                    continue
                _, _, handle, fn, args = heapq.heappop(self._heap)
            if not handle.cancelled:
                try:
                    fn(*args)
                except Exception:  # noqa: BLE001 - timer callbacks must not kill the loop
                    import logging

                    logging.getLogger(__name__).exception("timer callback failed")
