"""Background HTTP delivery for lifecycle notification pings.

Delivery is at-most-once per firing: a POST that reaches the server counts
as delivered regardless of status code, and only a connection-level failure
earns a single retry.  All network work happens on a worker thread so the
signaling path never blocks on a slow or dead receiver.
"""

from __future__ import annotations

import logging
import queue
import threading
import time

import httpx

log = logging.getLogger("ezstream.broker.webhooks")

REQUEST_TIMEOUT_S = 3.0
RETRY_DELAY_S = 0.05

_STOP = object()


class HttpWebhookSender:
    """Queue-backed POST sender usable as a ``BrokerCore`` webhook_sender."""

    def __init__(self, timeout: float = REQUEST_TIMEOUT_S, transport: httpx.BaseTransport | None = None):
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._queue: queue.Queue = queue.Queue()
        self.delivered = 0
        self.failed = 0
        self._thread = threading.Thread(target=self._run, name="webhook-sender", daemon=True)
        self._thread.start()

    def __call__(self, url: str, body: dict) -> None:
        self._queue.put((url, body))

    def flush(self) -> None:
        """Block until every queued POST has been attempted."""
        self._queue.join()

    def close(self) -> None:
        self._queue.put(_STOP)
        self._thread.join(timeout=5)
        self._client.close()

    # -- worker ----------------------------------------------------------

    def _run(self) -> None:
        while True:
            item = self._queue.get()
            if item is _STOP:
                self._queue.task_done()
                return
            url, body = item
            try:
                self._post(url, body)
            finally:
                self._queue.task_done()

    def _post(self, url: str, body: dict) -> None:
        for attempt in (0, 1):
            try:
                self._client.post(url, json=body)
                self.delivered += 1
                return
            except (httpx.ConnectError, httpx.ConnectTimeout) as exc:
                if attempt:
                    self.failed += 1
                    log.warning("webhook to %s failed after retry: %s", url, exc)
                    return
                time.sleep(RETRY_DELAY_S)
            except httpx.HTTPError as exc:
                # Reached the wire but the exchange broke mid-flight; the
                # receiver may have seen it, so no second attempt.
                self.failed += 1
                log.warning("webhook to %s failed: %s", url, exc)
                return
