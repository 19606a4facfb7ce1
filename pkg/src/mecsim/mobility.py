"""Vehicle positions over time: synthetic random waypoint or replayed traces.

Both sources expose the same piecewise-linear interface: each vehicle owns
sorted knot times with (x, y) coordinates and positions are interpolated
between knots, held constant outside them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .engine import RngStream, sample_uniform
from .scenario import AREA_SIDE_M

TRACE_HEADER = ["t_s", "vehicle_id", "x_m", "y_m"]


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def distance(self, other: "Position") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class RandomWaypoint:
    v_min: float = 5.0
    v_max: float = 14.0
    pause_max_s: float = 5.0

    def __post_init__(self):
        if not 0 <= self.v_min <= self.v_max:
            raise ValueError("random waypoint needs 0 <= v_min <= v_max")
        if self.pause_max_s < 0:
            raise ValueError("pause_max_s must be >= 0")


@dataclass(frozen=True)
class TraceSource:
    path: str


@dataclass(frozen=True)
class MobilityModel:
    kind: object = RandomWaypoint()
    update_period_s: float = 1.0
    area_side_m: float = AREA_SIDE_M

    def __post_init__(self):
        if not self.update_period_s > 0:
            raise ValueError("update_period_s must be > 0")
        if not self.area_side_m > 0:
            raise ValueError("area_side_m must be > 0")
        if not isinstance(self.kind, (RandomWaypoint, TraceSource)):
            raise TypeError("kind must be RandomWaypoint or TraceSource")


class Trajectories:
    """Per-vehicle knot tables indexed 0..N-1."""

    def __init__(self, knots: Sequence[tuple], labels: Optional[Sequence[str]] = None):
        self._t = []
        self._x = []
        self._y = []
        for t, x, y in knots:
            t = np.asarray(t, dtype=float)
            if t.size == 0:
                raise TraceError("vehicle without positions")
            if np.any(np.diff(t) < 0):
                raise TraceError("knot times must be nondecreasing")
            self._t.append(t)
            self._x.append(np.asarray(x, dtype=float))
            self._y.append(np.asarray(y, dtype=float))
        self.labels = list(labels) if labels is not None else [str(i) for i in range(len(self._t))]

    def __len__(self):
        return len(self._t)

    def _check(self, vehicle):
        if not 0 <= vehicle < len(self._t):
            raise KeyError(f"unknown vehicle {vehicle!r}")

    def xy_at(self, vehicle: int, t) -> tuple:
        """Vectorized positions of one vehicle at times ``t``."""
        self._check(vehicle)
        kt = self._t[vehicle]
        return np.interp(t, kt, self._x[vehicle]), np.interp(t, kt, self._y[vehicle])

    def position_at(self, vehicle: int, t: float) -> Position:
        x, y = self.xy_at(vehicle, t)
        return Position(float(x), float(y))

    def all_xy_at(self, t: float) -> np.ndarray:
        return np.array([[float(v) for v in self.xy_at(i, t)] for i in range(len(self))]).reshape(-1, 2)

    def neighbors_within(self, center: int, radius: float, t: float) -> set:
        if radius < 0:
            raise ValueError("radius must be >= 0")
        xy = self.all_xy_at(t)
        dx = xy[:, 0] - xy[center, 0]
        dy = xy[:, 1] - xy[center, 1]
        # squared form keeps the boundary test identical to the vectorized simulator
        inside = dx * dx + dy * dy <= radius * radius
        inside[center] = False
        return set(np.flatnonzero(inside).tolist())

    def subset(self, n: int) -> "Trajectories":
        if n > len(self):
            raise ValueError(f"need {n} vehicles but only {len(self)} available")
        return Trajectories(
            [(self._t[i], self._x[i], self._y[i]) for i in range(n)], self.labels[:n]
        )

    def sample_rows(self, period: float, horizon: float):
        """Rows (t, label, x, y) every ``period`` seconds, for trace export."""
        times = np.arange(0.0, horizon + period / 2, period)
        rows = []
        for i, label in enumerate(self.labels):
            xs, ys = self.xy_at(i, times)
            rows.extend(zip(times.tolist(), [label] * len(times), xs.tolist(), ys.tolist()))
        rows.sort(key=lambda r: (r[0], r[1]))
        return rows


def random_waypoint(n_vehicles: int, horizon: float, seed: int, model: MobilityModel, repetition: int = 0) -> Trajectories:
    """Generate random-waypoint trajectories covering [0, horizon].

    Every vehicle draws from its own stream, so adding vehicles leaves the
    existing trajectories unchanged. Waypoints are drawn inside the square,
    so straight legs never leave it.
    """
    rw = model.kind
    side = model.area_side_m
    knots = []
    for v in range(n_vehicles):
        s = RngStream(seed, repetition, v, "mobility")
        x, y = sample_uniform(s, 0.0, side), sample_uniform(s, 0.0, side)
        ts, xs, ys = [0.0], [x], [y]
        t = 0.0
        if rw.v_max > 0:
            while t < horizon:
                nx, ny = sample_uniform(s, 0.0, side), sample_uniform(s, 0.0, side)
                speed = sample_uniform(s, rw.v_min, rw.v_max)
                pause = sample_uniform(s, 0.0, rw.pause_max_s)
                if speed <= 0:
                    break
                t += math.hypot(nx - x, ny - y) / speed
                ts.append(t)
                xs.append(nx)
                ys.append(ny)
                if pause > 0:
                    t += pause
                    ts.append(t)
                    xs.append(nx)
                    ys.append(ny)
                x, y = nx, ny
        knots.append((ts, xs, ys))
    return Trajectories(knots)


def load_trace(source) -> Trajectories:
    """Parse a ``t_s,vehicle_id,x_m,y_m`` CSV into per-vehicle trajectories.

    Vehicles are numbered in sorted order of their ids.
    """
    path = Path(source)
    per_vehicle: dict = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TraceError(f"{path}: no vehicles (empty file)")
        if [h.strip() for h in header] != TRACE_HEADER:
            raise TraceError(f"{path}:1: header must be {','.join(TRACE_HEADER)}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise TraceError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                t, x, y = float(row[0]), float(row[2]), float(row[3])
            except ValueError:
                raise TraceError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
            vid = row[1].strip()
            if not vid or not all(map(math.isfinite, (t, x, y))):
                raise TraceError(f"{path}:{lineno}: malformed row {row!r}")
            rows = per_vehicle.setdefault(vid, [])
            if rows and t < rows[-1][0]:
                raise TraceError(f"{path}:{lineno}: timestamp {t} for vehicle {vid} decreases")
            rows.append((t, x, y))
    if not per_vehicle:
        raise TraceError(f"{path}: no vehicles")
    labels = sorted(per_vehicle, key=_natural_key)
    knots = []
    for vid in labels:
        arr = np.array(per_vehicle[vid])
        knots.append((arr[:, 0], arr[:, 1], arr[:, 2]))
    return Trajectories(knots, labels)


def write_trace(rows: Iterable[tuple], dest) -> None:
    with Path(dest).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for t, vid, x, y in rows:
            w.writerow([repr(float(t)), vid, repr(float(x)), repr(float(y))])


def _natural_key(label: str):
    return (0, int(label), "") if label.lstrip("-").isdigit() else (1, 0, label)


def build_trajectories(model: MobilityModel, n_vehicles: int, horizon: float, seed: int) -> Trajectories:
    if isinstance(model.kind, TraceSource):
        return load_trace(model.kind.path).subset(n_vehicles)
    return random_waypoint(n_vehicles, horizon, seed, model)

