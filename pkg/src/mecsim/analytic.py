"""Closed-form M/M/1 provisioning for per-vehicle edge applications.

Each application instance on the edge node is treated as an M/M/1 queue
whose service rate is its CPU share divided by the mean instruction cost of
a request. The sojourn time of such a queue is exponential with rate
``mu - lambda``, which gives the minimum service rate (and CPU) needed to
meet a latency/reliability target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

from .scenario import Processor, Requirement, ServiceSpec


class UnstableQueueError(ArithmeticError):
    """The arrival rate reaches or exceeds the service rate.

    Sojourn times diverge, so the reliability for any finite deadline is
    reported as 0 via ``reliability``.
    """

    reliability = 0.0

    def __init__(self, params):
        self.params = params
        super().__init__(f"unstable queue: lambda={params.lambda_hz:g}/s >= mu={params.mu_hz:g}/s")


@dataclass(frozen=True)
class Mm1Params:
    lambda_hz: float
    mu_hz: float

    def __post_init__(self):
        if not self.lambda_hz >= 0:
            raise ValueError("lambda_hz must be >= 0")
        if not self.mu_hz > 0:
            raise ValueError("mu_hz must be > 0")

    @property
    def rho(self) -> float:
        return self.lambda_hz / self.mu_hz

    @property
    def stable(self) -> bool:
        return self.mu_hz > self.lambda_hz

    @classmethod
    def from_allocation(cls, lambda_hz: float, allocated_mips: float, ipr_mean_mi: float) -> "Mm1Params":
        return cls(lambda_hz, service_rate(allocated_mips, ipr_mean_mi))


def service_rate(allocated_mips: float, ipr_mean_mi: float) -> float:
    """Packets per second served by a CPU share of ``allocated_mips``."""
    return allocated_mips / ipr_mean_mi


def required_service_rate(lambda_hz: float, req: Requirement) -> float:
    return lambda_hz - math.log1p(-req.r_req) / req.d_req


def cpu_min(spec: ServiceSpec) -> float:
    """Minimum MIPS one application instance needs for ``spec``."""
    return required_service_rate(spec.uplink_rate_hz, spec.requirement) * spec.ipr_mean_mi


def mm1_reliability(p: Mm1Params, d: float, strict: bool = True) -> float:
    """P(sojourn <= d) for a stable M/M/1 queue.

    With ``strict=False`` an unstable queue yields 0.0 instead of raising
    :class:`UnstableQueueError`.
    """
    if d < 0:
        raise ValueError("deadline must be >= 0")
    if not p.stable:
        if strict:
            raise UnstableQueueError(p)
        return 0.0
    return -math.expm1(-(p.mu_hz - p.lambda_hz) * d)


def mm1_mean_sojourn(p: Mm1Params) -> float:
    if not p.stable:
        raise UnstableQueueError(p)
    return 1.0 / (p.mu_hz - p.lambda_hz)


def feasible_vehicle_count(proc: Processor, spec: ServiceSpec) -> int:
    """Largest N for which an equal split of ``proc`` still meets cpu_min."""
    return math.floor(proc.mips / cpu_min(spec))


def display_mips(value: float) -> int:
    """Whole MIPS for tables; a minimum allocation rounds up."""
    return math.ceil(value)


@dataclass(frozen=True)
class PlanResult:
    service: str
    cpu_min_mips: float
    mu_min_hz: float
    max_vehicles: dict = field(default_factory=dict)

    def rows(self, processors: Iterable[Processor]):
        for proc in processors:
            yield {
                "processor": proc.id,
                "processor_name": proc.name,
                "processor_mips": proc.mips,
                "cpu_min_mips": display_mips(self.cpu_min_mips),
                "mu_min_hz": self.mu_min_hz,
                "max_vehicles": self.max_vehicles[proc.id],
            }


def plan(spec: ServiceSpec, procs: Iterable[Processor]) -> PlanResult:
    mu_min = required_service_rate(spec.uplink_rate_hz, spec.requirement)
    return PlanResult(
        service=spec.name,
        cpu_min_mips=cpu_min(spec),
        mu_min_hz=mu_min,
        max_vehicles={p.id: feasible_vehicle_count(p, spec) for p in procs},
    )
