"""Deterministic discrete-event core.

Simulated time is integer nanoseconds. Events fire in nondecreasing time
order; equal-time events fire in the order they were scheduled (insertion
ordinal), which makes whole runs reproducible without any global priority
scheme. A single 100-ns pulse timer fans out to bandwidth throttlers.
"""

import heapq
from typing import Callable, NamedTuple

PULSE_NS = 100


class SimulationError(Exception):
    """A model bug: an operation violated the engine's contract."""


class Event(NamedTuple):
    time: int
    seq: int
    action: Callable[[], None]


class Simulator:
    def __init__(self):
        self.now = 0
        self._queue: list[Event] = []
        self._seq = 0
        # When set to a list, every dispatch appends (time, seq); used by
        # determinism checks.
        self.dispatch_log: list | None = None

    def schedule(self, time: int, action: Callable[[], None]) -> Event:
        """Enqueue `action` to fire exactly once at `time`."""
        if time < self.now:
            raise SimulationError(f"schedule at t={time} is in the past (now={self.now})")
        event = Event(time, self._seq, action)
        self._seq += 1
        heapq.heappush(self._queue, event)
        return event

    def after(self, delay: int, action: Callable[[], None]) -> Event:
        return self.schedule(self.now + delay, action)

    def run_until(self, t: int) -> None:
        """Dispatch every event with time <= t, then set now to t."""
        if t < self.now:
            raise SimulationError(f"run_until({t}) is in the past (now={self.now})")
        queue = self._queue
        log = self.dispatch_log
        while queue and queue[0].time <= t:
            event = heapq.heappop(queue)
            self.now = event.time
            if log is not None:
                log.append((event.time, event.seq))
            event.action()
        self.now = t

    def run(self) -> None:
        """Drain the queue completely (no time bound)."""
        queue = self._queue
        log = self.dispatch_log
        while queue:
            event = heapq.heappop(queue)
            self.now = event.time
            if log is not None:
                log.append((event.time, event.seq))
            event.action()

    def start_pulse_timer(self, period: int = PULSE_NS, subscribers=()) -> "PulseTimer":
        timer = PulseTimer(self, period)
        for sink in subscribers:
            timer.subscribe(sink)
        return timer


class PulseTimer:
    """Periodic tick fan-out on an absolute grid (t = k * period, k >= 1).

    The timer only keeps an event in flight while it has subscribers, so
    unthrottled runs pay nothing for it; subscribing mid-run keeps the
    absolute phase.
    """

    def __init__(self, sim: Simulator, period: int = PULSE_NS):
        if period <= 0:
            raise SimulationError("pulse period must be positive")
        self.sim = sim
        self.period = period
        self._sinks: list[Callable[[], None]] = []
        self._next_time: int | None = None

    def subscribe(self, sink: Callable[[], None]) -> None:
        self._sinks.append(sink)
        if self._next_time is None:
            self._arm()

    def unsubscribe(self, sink: Callable[[], None]) -> None:
        self._sinks.remove(sink)

    def _arm(self):
        t = (self.sim.now // self.period + 1) * self.period
        self._next_time = t
        self.sim.schedule(t, self._fire)

    def _fire(self):
        self._next_time = None
        for sink in list(self._sinks):
            sink()
        if self._sinks:
            self._arm()
