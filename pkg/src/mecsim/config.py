"""Experiment configuration: YAML schema, validation and per-run configs.

Schema (all keys optional except ``service`` and ``vehicle_counts``;
unknown keys are rejected)::

    service: remote_driving            # catalog name, or a mapping:
    #   {base: remote_driving, ipr_mean_mi: 600, d_req: 0.03}
    #   {name: x, behavior: client_server, uplink_rate_hz: ..., requirement: {d_req: .., r_req: ..}, ...}
    processors: [id1, id2, {name: custom, mips: 500000}]   # or processor: id4
    vehicle_counts: [1, 2, 3]
    seeds: [1, 2, 3, 4, 5]
    duration_s: 180
    warmup_s: 10
    accounting: per_copy               # or per_request
    engine: batch                      # or event
    link: {uplink_capacity_bps: 4.0e8, downlink_capacity_bps: 4.0e8, base_latency_s: 0.001}
    mobility: {kind: random_waypoint, v_min: 5, v_max: 14, pause_max_s: 5,
               update_period_s: 1, area_side_m: 1000}
    #   or {kind: trace, path: trace.csv}   (path relative to the config file)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .mobility import MobilityModel, RandomWaypoint, TraceSource
from .scenario import (
    PROCESSORS,
    SERVICES,
    Processor,
    ServiceSpec,
    ValidationError,
    apply_overrides,
    load_service,
)
from .simnet import Accounting, LinkModel

TOP_KEYS = {
    "service", "processor", "processors", "vehicle_counts", "seeds", "duration_s",
    "warmup_s", "accounting", "engine", "link", "mobility",
}
ENGINES = ("batch", "event")
DEFAULT_SEEDS = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class ExperimentConfig:
    """One simulation run: a processor, a vehicle count and a seed."""

    spec: ServiceSpec
    processor: Processor
    n_vehicles: int
    seed: int
    duration_s: float = 180.0
    warmup_s: float = 10.0
    link: LinkModel = field(default_factory=LinkModel)
    mobility: MobilityModel = field(default_factory=MobilityModel)
    accounting: Accounting = Accounting.PER_COPY
    engine: str = "batch"

    def __post_init__(self):
        problems = []
        if not (isinstance(self.n_vehicles, int) and self.n_vehicles >= 1):
            problems.append(("n_vehicles", "must be an integer >= 1"))
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            problems.append(("seed", "must be an integer in [0, 2**64)"))
        if not (self.warmup_s >= 0 and math.isfinite(self.warmup_s)):
            problems.append(("warmup_s", "must be finite and >= 0"))
        if not (self.duration_s > 0 and math.isfinite(self.duration_s)):
            problems.append(("duration_s", "must be finite and > 0"))
        elif self.duration_s < self.warmup_s:
            problems.append(("duration_s", "must be >= warmup_s"))
        if self.engine not in ENGINES:
            problems.append(("engine", f"must be one of {ENGINES}"))
        if problems:
            raise ValidationError(problems)

    @property
    def allocated_mips(self) -> float:
        return self.processor.mips / self.n_vehicles


@dataclass(frozen=True)
class SweepConfig:
    spec: ServiceSpec
    processors: tuple
    vehicle_counts: tuple
    seeds: tuple = DEFAULT_SEEDS
    duration_s: float = 180.0
    warmup_s: float = 10.0
    link: LinkModel = field(default_factory=LinkModel)
    mobility: MobilityModel = field(default_factory=MobilityModel)
    accounting: Accounting = Accounting.PER_COPY
    engine: str = "batch"

    def experiment(self, processor: Processor, n_vehicles: int, seed: int) -> ExperimentConfig:
        return ExperimentConfig(
            self.spec, processor, n_vehicles, seed, self.duration_s, self.warmup_s,
            self.link, self.mobility, self.accounting, self.engine,
        )

    def experiments(self):
        for proc in self.processors:
            for n in self.vehicle_counts:
                for seed in self.seeds:
                    yield self.experiment(proc, n, seed)

    def to_dict(self) -> dict:
        kind = self.mobility.kind
        if isinstance(kind, TraceSource):
            mobility = {"kind": "trace", "path": kind.path}
        else:
            mobility = {"kind": "random_waypoint", "v_min": kind.v_min, "v_max": kind.v_max,
                        "pause_max_s": kind.pause_max_s}
        mobility.update(update_period_s=self.mobility.update_period_s, area_side_m=self.mobility.area_side_m)
        return {
            "service": self.spec.to_dict(),
            "processors": [p.to_dict() for p in self.processors],
            "vehicle_counts": list(self.vehicle_counts),
            "seeds": list(self.seeds),
            "duration_s": self.duration_s,
            "warmup_s": self.warmup_s,
            "accounting": self.accounting.value,
            "engine": self.engine,
            "link": {
                "uplink_capacity_bps": self.link.uplink_capacity_bps,
                "downlink_capacity_bps": self.link.downlink_capacity_bps,
                "base_latency_s": self.link.base_latency_s,
            },
            "mobility": mobility,
        }


def load_config(path) -> SweepConfig:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return validate_config(raw, base_dir=path.parent)


def validate_config(raw: Any, base_dir: Optional[Path] = None) -> SweepConfig:
    """Check a parsed config mapping and build a :class:`SweepConfig`.

    All problems are collected and raised together as one
    :class:`ValidationError` whose entries carry the field path.
    """
    if not isinstance(raw, Mapping):
        raise ValidationError([("<root>", "config must be a mapping")])
    problems: list = []
    for key in sorted(set(raw) - TOP_KEYS):
        problems.append((key, "unknown key"))

    spec = _service(raw.get("service"), problems)
    processors = _processors(raw, problems)
    counts = _int_list(raw, "vehicle_counts", None, 1, problems)
    seeds = _int_list(raw, "seeds", list(DEFAULT_SEEDS), 0, problems)
    duration = _number(raw, "duration_s", 180.0, problems, positive=True)
    warmup = _number(raw, "warmup_s", 10.0, problems, positive=False)
    if duration is not None and warmup is not None and duration < warmup:
        problems.append(("duration_s", f"must be >= warmup_s ({warmup})"))
    accounting = _choice(raw, "accounting", [a.value for a in Accounting], "per_copy", problems)
    engine = _choice(raw, "engine", list(ENGINES), "batch", problems)
    link = _link(raw.get("link", {}), problems)
    mobility = _mobility(raw.get("mobility", {}), base_dir, problems)

    if problems:
        raise ValidationError(problems)
    return SweepConfig(
        spec=spec,
        processors=tuple(processors),
        vehicle_counts=tuple(counts),
        seeds=tuple(seeds),
        duration_s=duration,
        warmup_s=warmup,
        link=link,
        mobility=mobility,
        accounting=Accounting(accounting),
        engine=engine,
    )


def _service(raw, problems):
    if raw is None:
        problems.append(("service", "required"))
        return None
    try:
        if isinstance(raw, str):
            return load_service(raw)
        if not isinstance(raw, Mapping):
            problems.append(("service", "must be a catalog name or a mapping"))
            return None
        raw = dict(raw)
        if "base" in raw:
            base = raw.pop("base")
            return load_service(str(base), raw or None)
        return _inline_service(raw)
    except KeyError as exc:
        problems.append(("service", str(exc.args[0])))
    except ValidationError as exc:
        problems.extend(exc.problems)
    return None


def _inline_service(raw):
    required = {"name", "behavior", "uplink_rate_hz", "uplink_payload_mean_bytes",
                "downlink_payload_bytes", "ipr_mean_mi"}
    missing = sorted(required - set(raw))
    if "requirement" not in raw and not {"d_req", "r_req"} <= set(raw):
        missing.append("requirement")
    if missing:
        raise ValidationError([(f"service.{k}", "required") for k in missing])
    # Start from any catalog entry and replace every field.
    template = SERVICES["remote_driving"]
    raw.setdefault("dissemination_radius_max_m", None)
    raw.setdefault("nominal_uplink_bps", None)
    return apply_overrides(template, raw)


def _processor(raw, path, problems):
    if isinstance(raw, str):
        if raw in PROCESSORS:
            return PROCESSORS[raw]
        problems.append((path, f"unknown processor {raw!r}; known: {', '.join(PROCESSORS)}"))
        return None
    if isinstance(raw, Mapping):
        unknown = sorted(set(raw) - {"id", "name", "mips"})
        for k in unknown:
            problems.append((f"{path}.{k}", "unknown key"))
        mips = raw.get("mips")
        if not _is_number(mips) or not mips > 0 or not math.isfinite(mips):
            problems.append((f"{path}.mips", "must be a finite positive number"))
            return None
        if unknown:
            return None
        pid = str(raw.get("id", raw.get("name", f"custom-{mips:g}")))
        return Processor(pid, str(raw.get("name", pid)), mips)
    problems.append((path, "must be a processor id or a mapping with mips"))
    return None


def _processors(raw, problems):
    if "processor" in raw and "processors" in raw:
        problems.append(("processors", "give either processor or processors, not both"))
        return []
    if "processor" in raw:
        p = _processor(raw["processor"], "processor", problems)
        return [p] if p else []
    items = raw.get("processors", list(PROCESSORS))
    if not isinstance(items, list) or not items:
        problems.append(("processors", "must be a non-empty list"))
        return []
    out = [_processor(item, f"processors[{i}]", problems) for i, item in enumerate(items)]
    return [p for p in out if p]


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _number(raw, key, default, problems, positive):
    v = raw.get(key, default)
    if not _is_number(v) or not math.isfinite(v) or (v <= 0 if positive else v < 0):
        problems.append((key, "must be a finite number " + ("> 0" if positive else ">= 0")))
        return None
    return float(v)


def _int_list(raw, key, default, minimum, problems):
    v = raw.get(key, default)
    if v is None:
        problems.append((key, "required"))
        return []
    if not isinstance(v, list) or not v:
        problems.append((key, "must be a non-empty list"))
        return []
    bad = [i for i, x in enumerate(v) if not (isinstance(x, int) and not isinstance(x, bool) and x >= minimum)]
    for i in bad:
        problems.append((f"{key}[{i}]", f"must be an integer >= {minimum}"))
    if len(set(v)) != len(v):
        problems.append((key, "duplicate entries"))
    return list(v)


def _choice(raw, key, options, default, problems):
    v = raw.get(key, default)
    if v not in options:
        problems.append((key, f"must be one of {options}"))
        return None
    return v


def _link(raw, problems):
    if not isinstance(raw, Mapping):
        problems.append(("link", "must be a mapping"))
        return None
    defaults = LinkModel()
    ok = True
    for key in sorted(set(raw) - {"uplink_capacity_bps", "downlink_capacity_bps", "base_latency_s"}):
        problems.append((f"link.{key}", "unknown key"))
        ok = False
    values = {}
    for key in ("uplink_capacity_bps", "downlink_capacity_bps"):
        v = raw.get(key, getattr(defaults, key))
        if not _is_number(v) or not v > 0:
            problems.append((f"link.{key}", "must be > 0 (.inf allowed)"))
            ok = False
        values[key] = v
    v = raw.get("base_latency_s", defaults.base_latency_s)
    if not _is_number(v) or not (v >= 0 and math.isfinite(v)):
        problems.append(("link.base_latency_s", "must be finite and >= 0"))
        ok = False
    values["base_latency_s"] = v
    return LinkModel(**values) if ok else None


def _mobility(raw, base_dir, problems):
    if not isinstance(raw, Mapping):
        problems.append(("mobility", "must be a mapping"))
        return None
    raw = dict(raw)
    kind = raw.pop("kind", "random_waypoint")
    common = {}
    for key, default in (("update_period_s", 1.0), ("area_side_m", 1000.0)):
        v = raw.pop(key, default)
        if not _is_number(v) or not (v > 0 and math.isfinite(v)):
            problems.append((f"mobility.{key}", "must be finite and > 0"))
            return None
        common[key] = float(v)
    if kind == "trace":
        path = raw.pop("path", None)
        for key in sorted(raw):
            problems.append((f"mobility.{key}", "unknown key"))
        if not isinstance(path, str) or not path:
            problems.append(("mobility.path", "required for kind=trace"))
            return None
        p = Path(path)
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        if not p.is_file():
            problems.append(("mobility.path", f"trace file not found: {p}"))
            return None
        return MobilityModel(TraceSource(str(p)), **common)
    if kind != "random_waypoint":
        problems.append(("mobility.kind", "must be random_waypoint or trace"))
        return None
    rw = {}
    for key, default in (("v_min", 5.0), ("v_max", 14.0), ("pause_max_s", 5.0)):
        v = raw.pop(key, default)
        if not _is_number(v) or not (v >= 0 and math.isfinite(v)):
            problems.append((f"mobility.{key}", "must be finite and >= 0"))
            return None
        rw[key] = float(v)
    for key in sorted(raw):
        problems.append((f"mobility.{key}", "unknown key"))
    if rw["v_min"] > rw["v_max"]:
        problems.append(("mobility.v_min", "must be <= v_max"))
        return None
    return MobilityModel(RandomWaypoint(**rw), **common)

