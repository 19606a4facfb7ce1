"""Packet pipeline: uplink, per-vehicle edge application, downlink.

Every vehicle owns one uplink FIFO, one downlink FIFO and one application
instance (``MecApp``) holding an equal share of the edge CPU. Requests flow

    generated -> uplink queue -> edge FIFO -> response copies -> downlink queues

Two interchangeable drivers produce the same trajectory from the same
random streams:

* :func:`simulate_events` dispatches every step through the event kernel.
  It is the reference and is practical for small runs.
* :func:`simulate_batch` exploits the feed-forward structure and evaluates
  each FIFO with a vectorized Lindley recursion. Sweeps use this one.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .engine import (
    EventKind,
    RngStream,
    Simulator,
    poisson_arrivals,
    sample_exp,
    sample_poisson_interarrival,
    sample_uniform,
)
from .mobility import Trajectories
from .scenario import Behavior, ServiceSpec

# Rows of the position matrix evaluated at once when building dissemination sets.
_NEIGHBOR_CHUNK = 16384


class Accounting(str, enum.Enum):
    PER_COPY = "per_copy"
    PER_REQUEST = "per_request"


@dataclass(frozen=True)
class LinkModel:
    uplink_capacity_bps: float = 400e6
    downlink_capacity_bps: float = 400e6
    base_latency_s: float = 0.001

    def __post_init__(self):
        if not self.uplink_capacity_bps > 0:
            raise ValueError("uplink_capacity_bps must be > 0")
        if not self.downlink_capacity_bps > 0:
            raise ValueError("downlink_capacity_bps must be > 0")
        if not (self.base_latency_s >= 0 and math.isfinite(self.base_latency_s)):
            raise ValueError("base_latency_s must be finite and >= 0")


@dataclass
class Request:
    source_vehicle: int
    seq: int
    created_at: float
    payload_bytes: int
    ipr_mi: float
    mec_arrival: float = math.nan
    service_start: float = math.nan
    service_end: float = math.nan
    copies: int = 0
    delivered: int = 0

    @property
    def id(self):
        return (self.source_vehicle, self.seq)


@dataclass(frozen=True)
class DelayRecord:
    source: int
    seq: int
    destination: int
    created_at: float
    uplink_s: float
    mec_queue_s: float
    mec_processing_s: float
    downlink_s: float
    e2e_s: float
    deadline_met: bool


def payload_bytes(raw):
    """Whole bytes, rounded up, never below one."""
    return np.maximum(1, np.ceil(raw)).astype(np.int64) if np.ndim(raw) else max(1, math.ceil(raw))


class FifoLink:
    """Single FIFO transmitter of fixed rate plus a constant propagation delay."""

    def __init__(self, rate_bps: float, base_latency_s: float):
        self.rate_bps = rate_bps
        self.base_latency_s = base_latency_s
        self.free_at = 0.0

    def transmit(self, t: float, size_bytes: int) -> float:
        """Enqueue at ``t``; return the arrival time at the far end."""
        if size_bytes < 1:
            raise ValueError("payload must be at least one byte")
        start = t if t > self.free_at else self.free_at
        self.free_at = start + size_bytes * 8 / self.rate_bps
        return self.free_at + self.base_latency_s


class LinkBank:
    """One :class:`FifoLink` per vehicle, each with an equal share of the cell."""

    def __init__(self, capacity_bps: float, n_vehicles: int, base_latency_s: float):
        if n_vehicles < 1:
            raise ValueError("n_vehicles must be >= 1")
        self.per_vehicle_bps = capacity_bps / n_vehicles
        self.links = [FifoLink(self.per_vehicle_bps, base_latency_s) for _ in range(n_vehicles)]

    def transmit(self, vehicle: int, t: float, size_bytes: int) -> float:
        return self.links[vehicle].transmit(t, size_bytes)


def transmit_uplink(bank: LinkBank, r: Request) -> float:
    return bank.transmit(r.source_vehicle, r.created_at, r.payload_bytes)


def transmit_downlink(bank: LinkBank, destination: int, t: float, size_bytes: int) -> float:
    return bank.transmit(destination, t, size_bytes)


@dataclass
class MecApp:
    owner_vehicle: int
    allocated_mips: float
    queue: deque = field(default_factory=deque)
    busy_until: float = 0.0
    busy: bool = False
    busy_time: float = 0.0
    served: int = 0

    def service_time(self, r: Request) -> float:
        return r.ipr_mi / self.allocated_mips


def mec_enqueue_and_serve(app: MecApp, r: Request, arrival: float) -> tuple:
    """Serve ``r`` FIFO on ``app`` without an event loop; return (start, end)."""
    start = arrival if arrival > app.busy_until else app.busy_until
    end = start + app.service_time(r)
    app.busy_until = end
    app.busy_time += end - start
    app.served += 1
    r.mec_arrival, r.service_start, r.service_end = arrival, start, end
    return start, end


def dispatch_response(r: Request, spec: ServiceSpec, t: float, trajectories: Trajectories, radius_stream: RngStream) -> list:
    """Destinations of the response copies, source first."""
    if spec.behavior is Behavior.CLIENT_SERVER:
        return [r.source_vehicle]
    radius = sample_uniform(radius_stream, 0.0, spec.dissemination_radius_max_m)
    return [r.source_vehicle] + sorted(trajectories.neighbors_within(r.source_vehicle, radius, t))


@dataclass(frozen=True)
class RunSetup:
    spec: ServiceSpec
    n_vehicles: int
    allocated_mips: float
    link: LinkModel
    trajectories: Trajectories
    seed: int
    horizon: float
    repetition: int = 0

    def __post_init__(self):
        if self.n_vehicles < 1:
            raise ValueError("n_vehicles must be >= 1")
        if len(self.trajectories) < self.n_vehicles:
            raise ValueError("fewer trajectories than vehicles")
        if not self.allocated_mips > 0:
            raise ValueError("allocated_mips must be > 0")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")

    def stream(self, vehicle: int, purpose: str) -> RngStream:
        return RngStream(self.seed, self.repetition, vehicle, purpose)


@dataclass
class DelayTable:
    """Columnar delay records; one row per delivered response copy."""

    source: np.ndarray
    seq: np.ndarray
    destination: np.ndarray
    created_at: np.ndarray
    uplink_s: np.ndarray
    mec_queue_s: np.ndarray
    mec_processing_s: np.ndarray
    downlink_s: np.ndarray
    e2e_s: np.ndarray
    deadline_met: np.ndarray

    @classmethod
    def empty(cls):
        return cls.from_columns(*(np.empty(0) for _ in range(8)), d_req=1.0)

    @classmethod
    def from_columns(cls, source, seq, destination, created_at, uplink, queue, processing, downlink, d_req):
        uplink = np.asarray(uplink, dtype=float)
        queue = np.asarray(queue, dtype=float)
        processing = np.asarray(processing, dtype=float)
        downlink = np.asarray(downlink, dtype=float)
        e2e = uplink + queue + processing + downlink
        return cls(
            np.asarray(source, dtype=np.int64),
            np.asarray(seq, dtype=np.int64),
            np.asarray(destination, dtype=np.int64),
            np.asarray(created_at, dtype=float),
            uplink, queue, processing, downlink, e2e,
            e2e <= d_req,
        )

    def __len__(self):
        return len(self.e2e_s)

    def __iter__(self):
        cols = [getattr(self, f.name).tolist() for f in fields(self)]
        for row in zip(*cols):
            yield DelayRecord(*row)

    def take(self, index) -> "DelayTable":
        return DelayTable(*(getattr(self, f.name)[index] for f in fields(self)))

    def sorted(self) -> "DelayTable":
        return self.take(np.lexsort((self.destination, self.seq, self.source)))


@dataclass
class RequestTable:
    """Per-request timeline. ``copies`` is -1 for requests not dispatched by the horizon."""

    source: np.ndarray
    seq: np.ndarray
    created_at: np.ndarray
    payload_bytes: np.ndarray
    ipr_mi: np.ndarray
    mec_arrival: np.ndarray
    service_start: np.ndarray
    service_end: np.ndarray
    copies: np.ndarray
    delivered: np.ndarray

    def __len__(self):
        return len(self.created_at)

    def sorted(self) -> "RequestTable":
        order = np.lexsort((self.seq, self.source))
        return RequestTable(*(getattr(self, f.name)[order] for f in fields(self)))

    @property
    def mec_sojourn_s(self) -> np.ndarray:
        return self.service_end - self.mec_arrival


@dataclass
class SimulationOutput:
    setup: RunSetup
    records: DelayTable
    requests: RequestTable
    busy_time_s: np.ndarray
    events_dispatched: Optional[int] = None

    def inflight(self):
        """(created_at, units) of work not finished at the horizon.

        Undispatched requests count once; dispatched ones count each
        undelivered copy.
        """
        req = self.requests
        units = np.where(req.copies < 0, 1, req.copies - req.delivered)
        mask = units > 0
        return req.created_at[mask], units[mask]


def simulate(setup: RunSetup, engine: str = "batch") -> SimulationOutput:
    if engine == "batch":
        return simulate_batch(setup)
    if engine == "event":
        return simulate_events(setup)
    raise ValueError(f"unknown engine {engine!r}")


# -- event-driven reference -------------------------------------------------


def start_vehicle_source(sim: Simulator, setup: RunSetup, vehicle: int, streams: dict) -> None:
    """Schedule the first packet of ``vehicle``'s Poisson source."""
    gap = sample_poisson_interarrival(streams[vehicle, "arrivals"], setup.spec.uplink_rate_hz)
    t = 0.0 + gap
    if t < setup.horizon:
        sim.schedule(t, EventKind.PACKET_GENERATED, (vehicle, 0))


def simulate_events(setup: RunSetup) -> SimulationOutput:
    spec, n, link = setup.spec, setup.n_vehicles, setup.link
    traj = setup.trajectories
    purposes = ("arrivals", "payload", "ipr", "radius")
    streams = {(v, p): setup.stream(v, p) for v in range(n) for p in purposes}
    uplinks = LinkBank(link.uplink_capacity_bps, n, link.base_latency_s)
    downlinks = LinkBank(link.downlink_capacity_bps, n, link.base_latency_s)
    apps = [MecApp(v, setup.allocated_mips) for v in range(n)]
    requests: list[Request] = []
    delivered = []

    def on_generated(sim, ev):
        v, seq = ev.payload
        r = Request(
            v, seq, sim.clock,
            payload_bytes(sample_exp(streams[v, "payload"], spec.uplink_payload_mean_bytes)),
            sample_exp(streams[v, "ipr"], spec.ipr_mean_mi),
        )
        requests.append(r)
        sim.schedule(transmit_uplink(uplinks, r), EventKind.UPLINK_DONE, r)
        t_next = sim.clock + sample_poisson_interarrival(streams[v, "arrivals"], spec.uplink_rate_hz)
        if t_next < setup.horizon:
            sim.schedule(t_next, EventKind.PACKET_GENERATED, (v, seq + 1))

    def on_uplink_done(sim, ev):
        r = ev.payload
        r.mec_arrival = sim.clock
        app = apps[r.source_vehicle]
        app.queue.append(r)
        if not app.busy:
            app.busy = True
            sim.schedule(sim.clock, EventKind.SERVICE_START, app)

    def on_service_start(sim, ev):
        app = ev.payload
        r = app.queue.popleft()
        r.service_start = sim.clock
        sim.schedule(sim.clock + app.service_time(r), EventKind.SERVICE_DONE, r)

    def on_service_done(sim, ev):
        r = ev.payload
        r.service_end = sim.clock
        app = apps[r.source_vehicle]
        app.busy_time += r.service_end - r.service_start
        app.served += 1
        app.busy_until = sim.clock
        dests = dispatch_response(r, spec, sim.clock, traj, streams[r.source_vehicle, "radius"])
        r.copies = len(dests)
        for d in dests:
            t_arr = transmit_downlink(downlinks, d, sim.clock, spec.downlink_payload_bytes)
            sim.schedule(t_arr, EventKind.DOWNLINK_DONE, (r, d))
        if app.queue:
            sim.schedule(sim.clock, EventKind.SERVICE_START, app)
        else:
            app.busy = False

    def on_downlink_done(sim, ev):
        r, d = ev.payload
        r.delivered += 1
        delivered.append((r, d, sim.clock))

    sim = Simulator()
    sim.on(EventKind.PACKET_GENERATED, on_generated)
    sim.on(EventKind.UPLINK_DONE, on_uplink_done)
    sim.on(EventKind.SERVICE_START, on_service_start)
    sim.on(EventKind.SERVICE_DONE, on_service_done)
    sim.on(EventKind.DOWNLINK_DONE, on_downlink_done)
    for v in range(n):
        start_vehicle_source(sim, setup, v, streams)
    sim.schedule(setup.horizon, EventKind.SIM_END)
    sim.run_until(setup.horizon)

    records = DelayTable.from_columns(
        [r.source_vehicle for r, _, _ in delivered],
        [r.seq for r, _, _ in delivered],
        [d for _, d, _ in delivered],
        [r.created_at for r, _, _ in delivered],
        [r.mec_arrival - r.created_at for r, _, _ in delivered],
        [r.service_start - r.mec_arrival for r, _, _ in delivered],
        [r.service_end - r.service_start for r, _, _ in delivered],
        [t - r.service_end for r, _, t in delivered],
        d_req=spec.requirement.d_req,
    )
    dispatched = [not math.isnan(r.service_end) for r in requests]
    req_table = RequestTable(
        np.array([r.source_vehicle for r in requests], dtype=np.int64),
        np.array([r.seq for r in requests], dtype=np.int64),
        np.array([r.created_at for r in requests], dtype=float),
        np.array([r.payload_bytes for r in requests], dtype=np.int64),
        np.array([r.ipr_mi for r in requests], dtype=float),
        np.array([r.mec_arrival for r in requests], dtype=float),
        np.array([r.service_start for r in requests], dtype=float),
        np.array([r.service_end for r in requests], dtype=float),
        np.array([r.copies if ok else -1 for r, ok in zip(requests, dispatched)], dtype=np.int64),
        np.array([r.delivered for r in requests], dtype=np.int64),
    )
    return SimulationOutput(
        setup, records, req_table,
        np.array([a.busy_time for a in apps]),
        events_dispatched=sim.dispatched,
    )


# -- vectorized driver ------------------------------------------------------


def fifo_schedule(arrivals: np.ndarray, service: np.ndarray) -> tuple:
    """Start and end times of a FIFO single server fed in arrival order.

    Closed form of the Lindley recursion ``end_i = max(a_i, end_{i-1}) + s_i``:
    ``end_i = S_i + max_{j<=i}(a_j - S_{j-1})`` with ``S`` the running work.
    """
    if len(arrivals) == 0:
        return np.empty(0), np.empty(0)
    work = np.cumsum(service)
    before = np.concatenate(([0.0], work[:-1]))
    end = work + np.maximum.accumulate(arrivals - before)
    start = np.maximum(end - service, arrivals)
    return start, end


def simulate_batch(setup: RunSetup) -> SimulationOutput:
    spec, n, link = setup.spec, setup.n_vehicles, setup.link
    horizon = setup.horizon
    up_bps = link.uplink_capacity_bps / n
    down_tx = spec.downlink_payload_bytes * 8 / (link.downlink_capacity_bps / n)
    dissemination = spec.behavior is Behavior.DISSEMINATION

    cols = {k: [] for k in ("source", "seq", "created", "payload", "ipr", "arrival", "start", "end", "radius")}
    busy = np.zeros(n)
    for v in range(n):
        created = poisson_arrivals(setup.stream(v, "arrivals"), spec.uplink_rate_hz, horizon)
        m = len(created)
        size = payload_bytes(sample_exp(setup.stream(v, "payload"), spec.uplink_payload_mean_bytes, m))
        ipr = sample_exp(setup.stream(v, "ipr"), spec.ipr_mean_mi, m)
        _, up_end = fifo_schedule(created, size * 8 / up_bps)
        arrival = up_end + link.base_latency_s
        service = ipr / setup.allocated_mips
        start, end = fifo_schedule(arrival, service)
        served = end <= horizon
        busy[v] = float(np.sum((end - start)[served]))
        n_disp = int(np.count_nonzero(served))
        radius = (
            sample_uniform(setup.stream(v, "radius"), 0.0, spec.dissemination_radius_max_m, n_disp)
            if dissemination else np.zeros(n_disp)
        )
        cols["source"].append(np.full(m, v, dtype=np.int64))
        cols["seq"].append(np.arange(m, dtype=np.int64))
        cols["created"].append(created)
        cols["payload"].append(size)
        cols["ipr"].append(ipr)
        cols["arrival"].append(arrival)
        cols["start"].append(start)
        cols["end"].append(end)
        cols["radius"].append(np.concatenate([radius, np.full(m - n_disp, np.nan)]))
    c = {k: np.concatenate(v) if v else np.empty(0) for k, v in cols.items()}
    c["source"] = c["source"].astype(np.int64)
    c["seq"] = c["seq"].astype(np.int64)

    # Requests served inside the horizon emit response copies. Taking them in
    # dispatch order (ties by source, seq, as the event queue breaks them)
    # means a stable sort by destination leaves each downlink queue in FIFO order.
    disp = np.flatnonzero(c["end"] <= horizon)
    disp = disp[np.lexsort((c["seq"][disp], c["source"][disp], c["end"][disp]))]
    if dissemination:
        copy_req, copy_dest = _dissemination_copies(setup.trajectories, n, c["source"][disp], c["end"][disp], c["radius"][disp])
        copy_req = disp[copy_req]
    else:
        copy_req, copy_dest = disp, c["source"][disp]

    by_dest = np.argsort(copy_dest, kind="stable")
    bounds = np.searchsorted(copy_dest[by_dest], np.arange(n + 1))
    delivery = np.empty(len(copy_req))
    for d in range(n):
        idx = by_dest[bounds[d]:bounds[d + 1]]
        if idx.size:
            _, dl_end = fifo_schedule(c["end"][copy_req[idx]], np.full(idx.size, down_tx))
            delivery[idx] = dl_end + link.base_latency_s

    ok = delivery <= horizon
    copies = np.full(len(c["created"]), -1, dtype=np.int64)
    copies[disp] = np.bincount(copy_req, minlength=len(copies))[disp]
    delivered = np.bincount(copy_req[ok], minlength=len(copies)).astype(np.int64)

    q = copy_req[ok]
    records = DelayTable.from_columns(
        c["source"][q], c["seq"][q], copy_dest[ok], c["created"][q],
        c["arrival"][q] - c["created"][q],
        c["start"][q] - c["arrival"][q],
        c["end"][q] - c["start"][q],
        delivery[ok] - c["end"][q],
        d_req=spec.requirement.d_req,
    )
    nan = np.full(len(copies), np.nan)
    undisp = copies < 0
    req_table = RequestTable(
        c["source"], c["seq"], c["created"], c["payload"].astype(np.int64), c["ipr"],
        np.where(c["arrival"] <= horizon, c["arrival"], nan),
        np.where(c["start"] <= horizon, c["start"], nan),
        np.where(undisp, nan, c["end"]),
        copies, delivered,
    )
    return SimulationOutput(setup, records, req_table, busy)


def _dissemination_copies(traj: Trajectories, n: int, source, times, radius):
    """(request index, destination) pairs for every dissemination copy.

    A request reaches its source plus every other vehicle whose distance
    at dispatch time is within the sampled radius.
    """
    req_parts, dest_parts = [], []
    for lo in range(0, len(times), _NEIGHBOR_CHUNK):
        hi = min(lo + _NEIGHBOR_CHUNK, len(times))
        t = times[lo:hi]
        src = source[lo:hi]
        xs = np.empty((n, hi - lo))
        ys = np.empty((n, hi - lo))
        for u in range(n):
            xs[u], ys[u] = traj.xy_at(u, t)
        cols = np.arange(hi - lo)
        xs -= xs[src, cols]
        ys -= ys[src, cols]
        xs *= xs
        ys *= ys
        xs += ys
        r = radius[lo:hi]
        inside = xs <= r * r
        inside[src, cols] = True
        d_idx, r_idx = np.nonzero(inside)
        req_parts.append(r_idx + lo)
        dest_parts.append(d_idx)
    if not req_parts:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(req_parts).astype(np.int64), np.concatenate(dest_parts).astype(np.int64)
