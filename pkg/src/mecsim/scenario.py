"""Domain types and the built-in service / processor catalogs.

Units are fixed across the package: seconds, bytes, meters, million
instructions (MI) and MIPS.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Mapping, Optional


class ValidationError(ValueError):
    """Raised when a value violates a domain invariant.

    ``problems`` is a list of ``(field_path, message)`` pairs.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        text = "; ".join(f"{path}: {msg}" for path, msg in self.problems)
        super().__init__(text or "invalid value")


class Behavior(str, enum.Enum):
    DISSEMINATION = "dissemination"
    CLIENT_SERVER = "client_server"


@dataclass(frozen=True)
class Requirement:
    d_req: float
    r_req: float

    def __post_init__(self):
        problems = _requirement_problems(self, "requirement")
        if problems:
            raise ValidationError(problems)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Requirement":
        return cls(d_req=float(data["d_req"]), r_req=float(data["r_req"]))


def _requirement_problems(req, prefix):
    problems = []
    if not (isinstance(req.d_req, (int, float)) and req.d_req > 0 and math.isfinite(req.d_req)):
        problems.append((f"{prefix}.d_req", "must be a finite positive duration"))
    if not (isinstance(req.r_req, (int, float)) and 0 <= req.r_req < 1):
        problems.append((f"{prefix}.r_req", "must lie in [0, 1)"))
    return problems


@dataclass(frozen=True)
class ServiceSpec:
    name: str
    behavior: Behavior
    uplink_rate_hz: float
    uplink_payload_mean_bytes: float
    downlink_payload_bytes: int
    ipr_mean_mi: float
    requirement: Requirement
    dissemination_radius_max_m: Optional[float] = None
    # Transcribed "Uplink bandwidth" column, kept only to guard the rate/payload pair.
    nominal_uplink_bps: Optional[float] = field(default=None, compare=True)

    def __post_init__(self):
        problems = service_problems(self)
        if problems:
            raise ValidationError(problems)

    @property
    def uplink_bps(self) -> float:
        return self.uplink_rate_hz * self.uplink_payload_mean_bytes * 8

    def to_dict(self) -> dict:
        data = asdict(self)
        data["behavior"] = self.behavior.value
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ServiceSpec":
        data = dict(data)
        data["behavior"] = Behavior(data["behavior"])
        data["requirement"] = Requirement.from_dict(data["requirement"])
        return cls(**data)


def service_problems(spec: ServiceSpec, prefix: str = "service") -> list:
    problems = []
    for name in ("uplink_rate_hz", "uplink_payload_mean_bytes", "ipr_mean_mi", "downlink_payload_bytes"):
        value = getattr(spec, name)
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            problems.append((f"{prefix}.{name}", "must be a finite positive number"))
    if not isinstance(spec.behavior, Behavior):
        problems.append((f"{prefix}.behavior", f"must be one of {[b.value for b in Behavior]}"))
    radius = spec.dissemination_radius_max_m
    if spec.behavior is Behavior.CLIENT_SERVER and radius is not None:
        problems.append((f"{prefix}.dissemination_radius_max_m", "must be absent for client_server"))
    if spec.behavior is Behavior.DISSEMINATION:
        if radius is None:
            problems.append((f"{prefix}.dissemination_radius_max_m", "required for dissemination"))
        elif not (isinstance(radius, (int, float)) and radius >= 0 and math.isfinite(radius)):
            problems.append((f"{prefix}.dissemination_radius_max_m", "must be a finite non-negative distance"))
    if isinstance(spec.requirement, Requirement):
        problems.extend(_requirement_problems(spec.requirement, f"{prefix}.requirement"))
    else:
        problems.append((f"{prefix}.requirement", "must be a Requirement"))
    if not problems and spec.nominal_uplink_bps is not None:
        if abs(spec.uplink_bps - spec.nominal_uplink_bps) > 0.02 * spec.nominal_uplink_bps:
            problems.append((f"{prefix}.uplink_payload_mean_bytes",
                             f"rate x payload x 8 = {spec.uplink_bps:g} b/s disagrees with "
                             f"nominal uplink bandwidth {spec.nominal_uplink_bps:g} b/s by more than 2%"))
    return problems


@dataclass(frozen=True)
class Processor:
    id: str
    name: str
    mips: float

    def __post_init__(self):
        if not (isinstance(self.mips, (int, float)) and math.isfinite(self.mips) and self.mips > 0):
            raise ValidationError([("processor.mips", "must be a finite positive number")])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Processor":
        return cls(id=str(data["id"]), name=str(data["name"]), mips=data["mips"])


REMOTE_DRIVING = ServiceSpec(
    name="remote_driving",
    behavior=Behavior.CLIENT_SERVER,
    uplink_rate_hz=100,
    uplink_payload_mean_bytes=40000,
    downlink_payload_bytes=313,
    ipr_mean_mi=500,
    requirement=Requirement(d_req=0.020, r_req=0.99),
    nominal_uplink_bps=32e6,
)

COOPERATIVE_SENSING = ServiceSpec(
    name="cooperative_sensing",
    behavior=Behavior.DISSEMINATION,
    uplink_rate_hz=100,
    uplink_payload_mean_bytes=12500,
    downlink_payload_bytes=313,
    ipr_mean_mi=200,
    requirement=Requirement(d_req=0.010, r_req=0.95),
    dissemination_radius_max_m=200,
    nominal_uplink_bps=10e6,
)

COOPERATIVE_MANEUVER = ServiceSpec(
    name="cooperative_maneuver",
    behavior=Behavior.DISSEMINATION,
    uplink_rate_hz=10,
    uplink_payload_mean_bytes=16250,
    downlink_payload_bytes=313,
    ipr_mean_mi=500,
    requirement=Requirement(d_req=0.100, r_req=0.99),
    dissemination_radius_max_m=500,
    nominal_uplink_bps=1.3e6,
)

COOPERATIVE_AWARENESS = ServiceSpec(
    name="cooperative_awareness",
    behavior=Behavior.DISSEMINATION,
    uplink_rate_hz=10,
    uplink_payload_mean_bytes=1500,
    downlink_payload_bytes=313,
    ipr_mean_mi=200,
    requirement=Requirement(d_req=0.100, r_req=0.95),
    dissemination_radius_max_m=500,
    nominal_uplink_bps=0.12e6,
)

SERVICES = {
    s.name: s
    for s in (REMOTE_DRIVING, COOPERATIVE_SENSING, COOPERATIVE_MANEUVER, COOPERATIVE_AWARENESS)
}

# Fastest first, matching the row order of the success-rate heatmaps.
PROCESSORS = {
    p.id: p
    for p in (
        Processor("id1", "AMD Ryzen Threadripper", 2356230),
        Processor("id2", "AMD Ryzen 9", 749070),
        Processor("id3", "Intel Core i9-9900K", 412090),
        Processor("id4", "Intel Core i5-11600K", 346350),
    )
}

# Descriptive scenario metadata for the radio setup; not used by the link model.
RADIO_PARAMETERS = {
    "number_of_gnbs": 1,
    "carrier_frequency": "6GHz",
    "bandwidth": "80MHz (100 PRBs)",
    "numerology": 2,
    "fading_and_shadowing": "enabled (Jakes)",
    "gnb_tx_power": "46 dBm",
    "gnb_antenna_gain": "8 dBi",
    "gnb_noise_figure": "5 dB",
    "ue_antenna_gain": "0 dBi",
    "ue_noise_figure": "7 dB",
    "path_loss_model": "3GPP TR 36.873",
}

AREA_SIDE_M = 1000.0


def load_service(name: str, overrides: Optional[Mapping[str, Any]] = None) -> ServiceSpec:
    """Return the catalog service ``name``, optionally with fields replaced.

    Raises ``KeyError`` for an unknown name and ``ValidationError`` when the
    overrides break an invariant.
    """
    key = name.strip().lower().replace("-", "_").replace(" ", "_")
    try:
        base = SERVICES[key]
    except KeyError:
        raise KeyError(f"unknown service {name!r}; known: {', '.join(SERVICES)}") from None
    if not overrides:
        return base
    return apply_overrides(base, overrides)


def apply_overrides(base: ServiceSpec, overrides: Mapping[str, Any], prefix: str = "service") -> ServiceSpec:
    known = {f for f in ServiceSpec.__dataclass_fields__} | {"d_req", "r_req"}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ValidationError([(f"{prefix}.{k}", "unknown key") for k in unknown])
    changes = dict(overrides)
    req = base.requirement
    if "requirement" in changes:
        raw = changes.pop("requirement")
        req = raw if isinstance(raw, Requirement) else _build_requirement(raw, prefix)
    if "d_req" in changes or "r_req" in changes:
        req = _build_requirement(
            {"d_req": changes.pop("d_req", req.d_req), "r_req": changes.pop("r_req", req.r_req)}, prefix
        )
    if "behavior" in changes:
        try:
            changes["behavior"] = Behavior(changes["behavior"])
        except ValueError:
            raise ValidationError([(f"{prefix}.behavior", f"must be one of {[b.value for b in Behavior]}")])
        if changes["behavior"] is Behavior.CLIENT_SERVER:
            changes.setdefault("dissemination_radius_max_m", None)
    # An override that changes the rate/payload pair invalidates the transcribed bandwidth.
    if {"uplink_rate_hz", "uplink_payload_mean_bytes"} & set(changes):
        changes.setdefault("nominal_uplink_bps", None)
    changes["requirement"] = req
    candidate = object.__new__(ServiceSpec)
    for f in ServiceSpec.__dataclass_fields__:
        object.__setattr__(candidate, f, changes.get(f, getattr(base, f)))
    problems = service_problems(candidate, prefix)
    if problems:
        raise ValidationError(problems)
    return replace(base, **changes)


def _build_requirement(raw, prefix):
    try:
        return Requirement(d_req=raw["d_req"], r_req=raw["r_req"])
    except ValidationError as exc:
        raise ValidationError([(p.replace("requirement", f"{prefix}.requirement", 1), m) for p, m in exc.problems])
    except (KeyError, TypeError):
        raise ValidationError([(f"{prefix}.requirement", "needs d_req and r_req")])


def load_processor(key: str) -> Processor:
    try:
        return PROCESSORS[key]
    except KeyError:
        raise KeyError(f"unknown processor {key!r}; known: {', '.join(PROCESSORS)}") from None
