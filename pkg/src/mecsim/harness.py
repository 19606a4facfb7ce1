"""Experiment runner: single runs, reliability, success rates and sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .analytic import Mm1Params, feasible_vehicle_count, mm1_reliability, service_rate
from .config import ExperimentConfig, SweepConfig
from .mobility import build_trajectories
from .simnet import Accounting, DelayTable, RunSetup, SimulationOutput, simulate

log = logging.getLogger(__name__)

CELLS_HEADER = ["service", "processor_mips", "n_vehicles", "seed", "reliability", "mean_e2e_ms", "p99_e2e_ms"]
HEATMAP_HEADER = ["processor_mips", "n_vehicles", "success_rate_pct"]
REDLINE_HEADER = ["processor_mips", "max_vehicles"]


def compute_reliability(records, d_req: float, extra_failures: int = 0) -> Optional[float]:
    """Fraction of delays within ``d_req``; None when there is nothing to count.

    ``records`` is a :class:`DelayTable` or any sequence of end-to-end
    delays in seconds. ``extra_failures`` adds samples that are known to
    have missed the deadline without a delay value (work still in flight).
    """
    e2e = records.e2e_s if isinstance(records, DelayTable) else np.asarray(records, dtype=float)
    total = len(e2e) + extra_failures
    if total == 0:
        return None
    return int(np.count_nonzero(e2e <= d_req)) / total


def success_rate(reliabilities: Sequence[Optional[float]], r_req: float) -> float:
    """Percentage of repetitions whose reliability reaches ``r_req``.

    Repetitions without data count as misses.
    """
    if len(reliabilities) == 0:
        raise ValueError("success_rate needs at least one repetition")
    hits = sum(1 for r in reliabilities if r is not None and r >= r_req)
    return 100.0 * hits / len(reliabilities)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reliability: Optional[float]
    n_samples: int
    n_met: int
    inflight_failures: int
    mean_e2e_ms: float
    p99_e2e_ms: float
    lambda_hz: float
    mu_hz: float
    analytic_mec_reliability: float
    records: DelayTable
    output: Optional[SimulationOutput] = None

    @property
    def unstable(self) -> bool:
        return self.mu_hz <= self.lambda_hz

    @property
    def no_data(self) -> bool:
        return self.reliability is None

    def summary(self) -> "RunSummary":
        c = self.config
        return RunSummary(
            c.spec.name, c.processor.id, c.processor.mips, c.n_vehicles, c.seed,
            self.reliability, self.mean_e2e_ms, self.p99_e2e_ms, self.n_samples, self.unstable,
        )


@dataclass
class RunSummary:
    service: str
    processor_id: str
    processor_mips: float
    n_vehicles: int
    seed: int
    reliability: Optional[float]
    mean_e2e_ms: float
    p99_e2e_ms: float
    n_samples: int
    unstable: bool
    error: Optional[str] = None


def run_experiment(cfg: ExperimentConfig, keep_output: bool = False) -> ExperimentResult:
    """Simulate one (processor, vehicle count, seed) cell and score it.

    Samples created before ``warmup_s`` are dropped. Work still in flight
    at the horizon counts as a miss when its deadline fell inside the run
    and is ignored otherwise.
    """
    spec = cfg.spec
    horizon = cfg.duration_s
    d_req = spec.requirement.d_req
    traj = build_trajectories(cfg.mobility, cfg.n_vehicles, horizon, cfg.seed)
    setup = RunSetup(spec, cfg.n_vehicles, cfg.allocated_mips, cfg.link, traj, cfg.seed, horizon)
    out = simulate(setup, cfg.engine)

    keep = out.records.created_at >= cfg.warmup_s
    records = out.records.take(keep)
    req = out.requests
    late = (req.created_at >= cfg.warmup_s) & (req.created_at + d_req < horizon)

    if cfg.accounting is Accounting.PER_COPY:
        units = np.where(req.copies < 0, 1, req.copies - req.delivered)
        failures = int(units[late].sum())
        met = int(np.count_nonzero(records.deadline_met))
        total = len(records) + failures
    else:
        complete = (req.copies >= 0) & (req.delivered == req.copies)
        failures = int(np.count_nonzero(~complete & late))
        # Every delivered copy of a complete request must be on time.
        key_req = req.source * (int(req.seq.max(initial=0)) + 1) + req.seq
        key_rec = records.source * (int(req.seq.max(initial=0)) + 1) + records.seq
        order = np.argsort(key_req)
        pos = order[np.searchsorted(key_req, key_rec, sorter=order)] if len(key_rec) else np.empty(0, dtype=np.int64)
        misses = np.bincount(pos[~records.deadline_met], minlength=len(req))
        sampled = complete & (req.created_at >= cfg.warmup_s)
        met = int(np.count_nonzero(sampled & (misses == 0)))
        total = int(np.count_nonzero(sampled)) + failures

    reliability = met / total if total else None
    if len(records):
        e2e_ms = records.e2e_s * 1e3
        mean_ms, p99_ms = float(e2e_ms.mean()), float(np.quantile(e2e_ms, 0.99))
    else:
        mean_ms = p99_ms = math.nan
    params = Mm1Params(spec.uplink_rate_hz, service_rate(cfg.allocated_mips, spec.ipr_mean_mi))
    return ExperimentResult(
        config=cfg,
        reliability=reliability,
        n_samples=total,
        n_met=met,
        inflight_failures=failures,
        mean_e2e_ms=mean_ms,
        p99_e2e_ms=p99_ms,
        lambda_hz=params.lambda_hz,
        mu_hz=params.mu_hz,
        analytic_mec_reliability=mm1_reliability(params, d_req, strict=False),
        records=records,
        output=out if keep_output else None,
    )


def _run_cell(cfg: ExperimentConfig) -> RunSummary:
    try:
        return run_experiment(cfg).summary()
    except Exception as exc:  # recorded per cell, the sweep carries on
        log.warning("run failed: %s n=%d seed=%d: %s", cfg.processor.id, cfg.n_vehicles, cfg.seed, exc)
        return RunSummary(cfg.spec.name, cfg.processor.id, cfg.processor.mips, cfg.n_vehicles, cfg.seed,
                          None, math.nan, math.nan, 0, False, error=f"{type(exc).__name__}: {exc}")


@dataclass
class Cell:
    processor_id: str
    processor_mips: float
    n_vehicles: int
    reliabilities: list
    success_rate_pct: float
    errors: list = field(default_factory=list)

    @property
    def mean_reliability(self) -> Optional[float]:
        vals = [r for r in self.reliabilities if r is not None]
        return sum(vals) / len(vals) if vals else None


@dataclass
class SweepResult:
    config: SweepConfig
    runs: list
    cells: dict
    red_line: dict

    @property
    def service(self) -> str:
        return self.config.spec.name

    def cell(self, processor_id: str, n_vehicles: int) -> Cell:
        return self.cells[processor_id, n_vehicles]

    def row(self, processor_id: str) -> list:
        return [self.cells[processor_id, n] for n in self.config.vehicle_counts]


def run_sweep(cfg: SweepConfig, jobs: int = 1) -> SweepResult:
    """Run every (processor, vehicle count, seed) combination of ``cfg``.

    Runs are independent; with ``jobs > 1`` they go to a process pool.
    Results are ordered by the config axes regardless of completion order.
    """
    experiments = list(cfg.experiments())
    if jobs > 1 and len(experiments) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_cell, experiments, chunksize=1))
    else:
        runs = [_run_cell(e) for e in experiments]
    r_req = cfg.spec.requirement.r_req
    cells = {}
    for proc in cfg.processors:
        for n in cfg.vehicle_counts:
            mine = [r for r in runs if r.processor_id == proc.id and r.n_vehicles == n]
            rel = [r.reliability for r in mine]
            cells[proc.id, n] = Cell(proc.id, proc.mips, n, rel, success_rate(rel, r_req),
                                     [r.error for r in mine if r.error])
    red_line = {p.id: feasible_vehicle_count(p, cfg.spec) for p in cfg.processors}
    return SweepResult(cfg, runs, cells, red_line)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        if value.is_integer() and abs(value) < 1e15:
            return str(int(value))
        return repr(value)
    return str(value)


def _jsonable(value):
    """NaN becomes null and infinities become strings, so run.json stays strict JSON."""
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def emit_outputs(result: SweepResult, out_dir) -> list:
    """Write cells.csv, heatmap.csv, redline.csv, run.json and heatmap.gp."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    cfg = result.config
    written = []

    def write_csv(name, header, rows):
        path = out / name
        try:
            with path.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows([[_fmt(v) for v in row] for row in rows])
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)

    write_csv("cells.csv", CELLS_HEADER, [
        [r.service, r.processor_mips, r.n_vehicles, r.seed, r.reliability, r.mean_e2e_ms, r.p99_e2e_ms]
        for r in result.runs
    ])
    write_csv("heatmap.csv", HEATMAP_HEADER, [
        [c.processor_mips, c.n_vehicles, c.success_rate_pct] for c in result.cells.values()
    ])
    write_csv("redline.csv", REDLINE_HEADER, [
        [p.mips, result.red_line[p.id]] for p in cfg.processors
    ])

    meta = {
        "tool": "mecsim",
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": list(cfg.seeds),
        "accounting": cfg.accounting.value,
        "failed_runs": [asdict(r) for r in result.runs if r.error],
    }
    meta = _jsonable(meta)
    path = out / "run.json"
    try:
        path.write_text(json.dumps(meta, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    written.append(path)

    path = out / "heatmap.gp"
    path.write_text(_GNUPLOT.format(service=cfg.spec.name), encoding="utf-8")
    written.append(path)
    return written


def read_outputs(out_dir) -> dict:
    """Parse the CSVs written by :func:`emit_outputs` back into plain rows."""
    out = Path(out_dir)

    def num(text, kind=float):
        return None if text == "" else kind(text)

    with (out / "cells.csv").open(encoding="utf-8") as fh:
        cells = [
            {
                "service": row["service"],
                "processor_mips": num(row["processor_mips"]),
                "n_vehicles": int(row["n_vehicles"]),
                "seed": int(row["seed"]),
                "reliability": num(row["reliability"]),
                "mean_e2e_ms": num(row["mean_e2e_ms"]),
                "p99_e2e_ms": num(row["p99_e2e_ms"]),
            }
            for row in csv.DictReader(fh)
        ]
    with (out / "heatmap.csv").open(encoding="utf-8") as fh:
        heatmap = [
            {"processor_mips": float(r["processor_mips"]), "n_vehicles": int(r["n_vehicles"]),
             "success_rate_pct": float(r["success_rate_pct"])}
            for r in csv.DictReader(fh)
        ]
    with (out / "redline.csv").open(encoding="utf-8") as fh:
        redline = [
            {"processor_mips": float(r["processor_mips"]), "max_vehicles": int(r["max_vehicles"])}
            for r in csv.DictReader(fh)
        ]
    return {"cells": cells, "heatmap": heatmap, "redline": redline}


_GNUPLOT = """\
# gnuplot -e "dir='OUT'" heatmap.gp
if (!exists("dir")) dir = "."
set datafile separator ","
set title "{service}: success rate (%)"
set xlabel "vehicles"
set ylabel "processor MIPS"
set palette gray negative
set cbrange [0:100]
plot dir."/heatmap.csv" skip 1 using 2:1:3 with points pt 5 ps 4 palette notitle, \\
     dir."/redline.csv" skip 1 using 2:1 with steps lc rgb "red" lw 2 title "analytic limit"
"""
