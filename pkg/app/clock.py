from __future__ import annotations

import heapq
import itertools
import logging
import threading
from datetime import datetime, timezone
from typing import Any, Hashable, List, Optional, Tuple

logger = logging.getLogger(__name__)

TimerToken = Tuple[Hashable, ...]


class Clock:
    """Instant source plus a set of scheduled timers.

    `now()` never decreases. Timers are (instant, token) pairs; the service pops due
    timers in (instant, insertion) order and fires them.
    """

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._timers: List[Tuple[datetime, int, TimerToken]] = []
        self._seq = itertools.count()

    def now(self) -> datetime:
        raise NotImplementedError

    def schedule(self, at: datetime, token: TimerToken) -> None:
        with self._lock:
            heapq.heappush(self._timers, (at, next(self._seq), token))

    def cancel(self, predicate) -> int:
        with self._lock:
            kept = [t for t in self._timers if not predicate(t[2])]
            dropped = len(self._timers) - len(kept)
            heapq.heapify(kept)
            self._timers = kept
            return dropped

    def pop_due(self, until: datetime) -> Optional[Tuple[datetime, TimerToken]]:
        with self._lock:
            if self._timers and self._timers[0][0] <= until:
                at, _, token = heapq.heappop(self._timers)
                return at, token
            return None

    def scheduled(self) -> List[Tuple[datetime, TimerToken]]:
        with self._lock:
            return [(at, tok) for at, _, tok in sorted(self._timers)]


class VirtualClock(Clock):
    """Forward-only clock; time moves only when the service sets it."""

    def __init__(self, start: datetime) -> None:
        super().__init__()
        if start.tzinfo is None:
            start = start.replace(tzinfo=timezone.utc)
        self._now = start

    def now(self) -> datetime:
        with self._lock:
            return self._now

    def set(self, instant: datetime) -> None:
        with self._lock:
            if instant > self._now:
                self._now = instant


class SystemClock(Clock):
    """Wall time, clamped so that successive readings never decrease."""

    def __init__(self) -> None:
        super().__init__()
        self._last = datetime.now(timezone.utc).replace(microsecond=0)

    def now(self) -> datetime:
        with self._lock:
            current = datetime.now(timezone.utc)
            if current > self._last:
                self._last = current
            return self._last

    def set(self, instant: datetime) -> None:
        # wall time cannot be steered; due timers are fired at their own instant
        return None


def build_clock(kind: str, start: datetime) -> Clock:
    if kind == "system":
        return SystemClock()
    return VirtualClock(start)


class Ticker(threading.Thread):
    """Background driver for SystemClock: fires due timers once a second."""

    def __init__(self, tick: Any, interval: float = 1.0) -> None:
        super().__init__(name="sps-clock-ticker", daemon=True)
        self._tick = tick
        self._interval = interval
        self._stop_evt = threading.Event()

    def run(self) -> None:
        while not self._stop_evt.wait(self._interval):
            try:
                self._tick()
            except Exception as ex:
                logger.exception("clock.tick: failed err=%s", ex)

    def stop(self) -> None:
        self._stop_evt.set()
