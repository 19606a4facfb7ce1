"""Command line: ``mecsim plan | run | sweep``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys

from .analytic import display_mips, plan
from .config import load_config
from .harness import emit_outputs, run_experiment, run_sweep
from .scenario import PROCESSORS, SERVICES, Processor, ValidationError, load_processor, load_service

PLAN_COLUMNS = ["processor", "processor_mips", "cpu_min_mips", "mu_min_hz", "max_vehicles"]


def _processor_arg(text: str) -> Processor:
    if text in PROCESSORS:
        return load_processor(text)
    try:
        mips = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is neither a processor id ({', '.join(PROCESSORS)}) nor a MIPS value")
    if not mips > 0:
        raise argparse.ArgumentTypeError("MIPS must be > 0")
    return Processor(text, f"{mips:g} MIPS", mips)


def _mips_text(mips: float) -> str:
    return str(int(mips)) if float(mips).is_integer() else f"{mips:g}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mecsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="minimum CPU per application and vehicles per processor")
    p.add_argument("--service", required=True, help=f"one of {', '.join(SERVICES)}")
    p.add_argument("--processors", nargs="+", type=_processor_arg, metavar="ID|MIPS",
                   help="catalog ids or raw MIPS values (default: the catalog)")
    p.add_argument("--format", choices=("text", "csv"), default="text")

    r = sub.add_parser("run", help="simulate every processor/vehicle-count cell for one seed")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="defaults to the first configured seed")

    s = sub.add_parser("sweep", help="full grid with all seeds, written as CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    return parser


def cmd_plan(args, out) -> int:
    spec = load_service(args.service)
    procs = args.processors or list(PROCESSORS.values())
    result = plan(spec, procs)
    rows = [
        [p.id, _mips_text(p.mips), display_mips(result.cpu_min_mips), f"{result.mu_min_hz:.4f}", result.max_vehicles[p.id]]
        for p in procs
    ]
    if args.format == "csv":
        w = csv.writer(out, lineterminator="\n")
        w.writerow(PLAN_COLUMNS)
        w.writerows(rows)
        return 0
    req = spec.requirement
    out.write(f"service {spec.name}: lambda={spec.uplink_rate_hz:g}/s E(IPR)={spec.ipr_mean_mi:g} MI "
              f"D_req={req.d_req * 1e3:g} ms R_req={req.r_req:g}\n")
    widths = [max(len(str(x)) for x in col) for col in zip(PLAN_COLUMNS, *rows)]
    for row in [PLAN_COLUMNS] + rows:
        out.write("  ".join(str(x).rjust(wd) for x, wd in zip(row, widths)) + "\n")
    return 0


def cmd_run(args, out) -> int:
    cfg = load_config(args.config)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    out.write("processor,processor_mips,n_vehicles,seed,reliability,mean_e2e_ms,p99_e2e_ms,samples,unstable\n")
    for proc in cfg.processors:
        for n in cfg.vehicle_counts:
            res = run_experiment(cfg.experiment(proc, n, seed))
            rel = "no-data" if res.no_data else f"{res.reliability:.6f}"
            out.write(f"{proc.id},{_mips_text(proc.mips)},{n},{seed},{rel},{res.mean_e2e_ms:.4f},"
                      f"{res.p99_e2e_ms:.4f},{res.n_samples},{int(res.unstable)}\n")
    return 0


def cmd_sweep(args, out) -> int:
    cfg = load_config(args.config)
    result = run_sweep(cfg, jobs=max(1, args.jobs))
    for path in emit_outputs(result, args.out):
        out.write(f"wrote {path}\n")
    failed = [r for r in result.runs if r.error]
    if failed:
        sys.stderr.write(f"{len(failed)} run(s) failed; see run.json\n")
        return 3
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = {"plan": cmd_plan, "run": cmd_run, "sweep": cmd_sweep}[args.command]
    try:
        return handler(args, sys.stdout)
    except ValidationError as exc:
        for path, msg in exc.problems:
            sys.stderr.write(f"config error: {path}: {msg}\n")
        return 2
    except (KeyError, OSError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
