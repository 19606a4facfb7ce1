"""Discrete-event kernel and seeded random streams."""

from __future__ import annotations

import enum
import heapq
import itertools
import math
import zlib
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np


class EventKind(enum.Enum):
    PACKET_GENERATED = "PacketGenerated"
    UPLINK_DONE = "UplinkDone"
    SERVICE_START = "ServiceStart"
    SERVICE_DONE = "ServiceDone"
    DOWNLINK_DONE = "DownlinkDone"
    MOBILITY_UPDATE = "MobilityUpdate"
    SIM_END = "SimEnd"


@dataclass(order=True, frozen=True)
class Event:
    time: float
    sequence: int
    kind: EventKind = field(compare=False)
    payload: Any = field(compare=False, default=None)


class SimulationError(RuntimeError):
    """A handler failed while dispatching an event."""

    def __init__(self, event: Event, cause: BaseException):
        self.event = event
        super().__init__(f"handler for {event.kind.value} at t={event.time!r} failed: {cause!r}")


class Simulator:
    """Event list ordered by (time, insertion sequence).

    Handlers are registered per :class:`EventKind` and receive the
    simulator and the event.
    """

    def __init__(self):
        self.clock = 0.0
        self._queue: list[Event] = []
        self._seq = itertools.count()
        self._handlers: dict[EventKind, Callable[["Simulator", Event], None]] = {}
        self.scheduled = 0
        self.dispatched = 0

    def on(self, kind: EventKind, handler: Callable[["Simulator", Event], None]) -> None:
        self._handlers[kind] = handler

    def schedule(self, time: float, kind: EventKind, payload: Any = None) -> Event:
        if not time >= self.clock:
            raise ValueError(f"cannot schedule {kind.value} at t={time!r} before clock {self.clock!r}")
        event = Event(time, next(self._seq), kind, payload)
        heapq.heappush(self._queue, event)
        self.scheduled += 1
        return event

    def schedule_in(self, delay: float, kind: EventKind, payload: Any = None) -> Event:
        return self.schedule(self.clock + delay, kind, payload)

    @property
    def pending(self) -> int:
        return len(self._queue)

    def peek(self) -> Optional[Event]:
        return self._queue[0] if self._queue else None

    def step(self) -> Event:
        event = heapq.heappop(self._queue)
        self.clock = event.time
        self.dispatched += 1
        handler = self._handlers.get(event.kind)
        if handler is not None:
            try:
                handler(self, event)
            except SimulationError:
                raise
            except Exception as exc:
                raise SimulationError(event, exc) from exc
        return event

    def run_until(self, t_end: float) -> int:
        """Dispatch every event with time <= t_end; return how many ran."""
        if not t_end >= self.clock:
            raise ValueError(f"t_end={t_end!r} is before clock {self.clock!r}")
        count = 0
        while self._queue and self._queue[0].time <= t_end:
            self.step()
            count += 1
        self.clock = t_end
        return count

    def pending_events(self):
        return sorted(self._queue)


def purpose_code(tag: str) -> int:
    # crc32 is stable across processes and platforms, unlike hash().
    return zlib.crc32(tag.encode("utf-8"))


class RngStream:
    """Random stream keyed by (root seed, repetition, vehicle, purpose).

    Backed by PCG64 seeded through ``SeedSequence`` so a given key yields
    the same samples on every platform, and vehicles never share draws.
    """

    def __init__(self, root_seed: int, repetition: int = 0, vehicle: int = 0, purpose: str = ""):
        if root_seed < 0:
            raise ValueError("root_seed must be non-negative")
        self.root_seed = int(root_seed)
        self.stream_key = (int(repetition), int(vehicle), purpose)
        seq = np.random.SeedSequence(self.root_seed, spawn_key=(int(repetition), int(vehicle), purpose_code(purpose)))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def __repr__(self):
        return f"RngStream(root_seed={self.root_seed}, stream_key={self.stream_key})"


def sample_exp(s: RngStream, mean: float, size=None):
    if not (mean > 0 and math.isfinite(mean)):
        raise ValueError("exponential mean must be finite and > 0")
    return s.generator.exponential(mean, size)


def sample_uniform(s: RngStream, lo: float, hi: float, size=None):
    if not lo <= hi:
        raise ValueError("uniform bounds need lo <= hi")
    if lo == hi:
        return lo if size is None else np.full(size, float(lo))
    return s.generator.uniform(lo, hi, size)


def sample_poisson_interarrival(s: RngStream, rate_hz: float, size=None):
    if not (rate_hz > 0 and math.isfinite(rate_hz)):
        raise ValueError("rate must be finite and > 0")
    return s.generator.exponential(1.0 / rate_hz, size)


def poisson_arrivals(s: RngStream, rate_hz: float, horizon: float, chunk: int = 4096) -> np.ndarray:
    """Arrival epochs of a Poisson process on [0, horizon).

    Draws interarrivals in chunks from ``s``; the consumed prefix of the
    stream is the same as drawing them one at a time.
    """
    if horizon <= 0:
        return np.empty(0)
    parts = []
    t0 = 0.0
    while True:
        gaps = sample_poisson_interarrival(s, rate_hz, chunk)
        gaps[0] += t0
        times = np.cumsum(gaps)
        if times[-1] >= horizon:
            parts.append(times[times < horizon])
            break
        parts.append(times)
        t0 = times[-1]
    return np.concatenate(parts)
