"""Command-line front end: validate, run, generate, batch.

Exit codes are part of the interface contract:

    0  success
    1  the document parsed but breaks model invariants, or the scenario
       cannot be brought into initial service
    2  the input could not be parsed at all (bad JSON, wrong shape)
    3  an output file could not be written

Output files land in --out-dir, else $LANESIM_OUT_DIR, else the working
directory: metrics.json (machine-readable results), trace.tsv (the event
trace), coverage.csv (per-application coverage step series).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .model import InvalidModel, MalformedDocument
from .reconfig import Outcome
from .scenario import dump_scenario, generate_scenario, load_scenario
from .sim import SimResult, run
from .timebase import US_PER_MS

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_PARSE = 2
EXIT_IO = 3

OUT_DIR_ENV = "LANESIM_OUT_DIR"
TRACE_HEADER = "# format_version=1"


def _ms(us: int | None):
    return None if us is None else us / US_PER_MS


def metrics_document(result: SimResult) -> dict:
    counts = result.outcome_counts()
    records = []
    for rec in result.records:
        records.append({
            "record_id": rec.record_id,
            "app": rec.app_id,
            "outcome": rec.outcome.value,
            "strategy": rec.strategy.value,
            "failed_copies": list(rec.failed_copy_ids),
            "t_f_ms": _ms(rec.t_f_us),
            "t_r_ms": _ms(rec.t_r_us),
            "t_i_ms": _ms(rec.t_i_us),
            "t_s_ms": _ms(rec.t_s_us),
            "t_e_ms": _ms(rec.t_e_us),
            "t_a_ms": _ms(rec.t_a_us),
            "placements": {str(t): [lane, proc]
                           for t, (lane, proc) in sorted(rec.placements.items())},
            "degraded_tasks": list(rec.degraded_tasks),
        })
    risk = {}
    for app_id, report in sorted(result.risk.items()):
        risk[str(app_id)] = {
            "total_ms": _ms(report.total_us),
            "intervals": [
                {"start_ms": _ms(s), "end_ms": _ms(e), "closed": closed}
                for s, e, closed in report.intervals
            ],
            "secondary_hits": [
                {"record_id": rid, "at_ms": _ms(at)}
                for rid, at in report.secondary_hits
            ],
        }
    coverage_final = {
        str(app_id): {"functional": f.label, "zonal": z.label, "peripheral": p.label}
        for app_id, (f, z, p) in sorted(result.final_coverage.items())
    }
    return {
        "format_version": 1,
        "seed": result.seed,
        "horizon_ms": _ms(result.horizon_us),
        "summary": {
            "readmitted": counts[Outcome.READMITTED],
            "degraded": counts[Outcome.DEGRADED_DUPLEX],
            "abandoned": counts[Outcome.ABANDONED],
            "records": len(result.records),
            "deadline_misses": len(result.deadline_misses),
        },
        "records": records,
        "risk": risk,
        "coverage_final": coverage_final,
        "counters": dict(sorted(result.counters.items())),
    }


def trace_lines(result: SimResult):
    yield TRACE_HEADER
    yield "time_us\tkind\tlane\tproc\tapp\ttask\tdetail"
    for ev in result.trace:
        yield "\t".join([
            str(ev.time_us), ev.kind,
            "-" if ev.lane is None else str(ev.lane),
            "-" if ev.proc is None else str(ev.proc),
            "-" if ev.app is None else str(ev.app),
            "-" if ev.task is None else str(ev.task),
            ev.detail or "-",
        ])


def coverage_lines(result: SimResult):
    yield "time_us,app,functional,zonal,peripheral"
    for s in result.samples:
        yield (f"{s.time_us},{s.app_id},{s.functional.label},"
               f"{s.zonal.label},{s.peripheral.label}")


def write_outputs(result: SimResult, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    metrics = out / "metrics.json"
    metrics.write_text(
        json.dumps(metrics_document(result), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    written.append(metrics)
    trace = out / "trace.tsv"
    trace.write_text("\n".join(trace_lines(result)) + "\n", encoding="utf-8")
    written.append(trace)
    coverage = out / "coverage.csv"
    coverage.write_text("\n".join(coverage_lines(result)) + "\n", encoding="utf-8")
    written.append(coverage)
    return written


def _resolve_out_dir(option) -> Path:
    if option:
        return Path(option)
    env = os.environ.get(OUT_DIR_ENV)
    return Path(env) if env else Path(".")


def _apply_overrides(scenario, args):
    changes = {}
    if getattr(args, "horizon_ms", None) is not None:
        changes["horizon_us"] = round(args.horizon_ms * US_PER_MS)
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if changes:
        scenario.settings = dataclasses.replace(scenario.settings, **changes)
    return scenario


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    model = scenario.model
    print(f"{args.scenario}: OK "
          f"({len(model.lanes)} lanes, {len(model.applications)} applications, "
          f"{len(scenario.faults)} faults)")
    return EXIT_OK


def cmd_run(args) -> int:
    scenario = _apply_overrides(load_scenario(args.scenario), args)
    result = run(scenario)
    out_dir = _resolve_out_dir(args.out_dir)
    try:
        written = write_outputs(result, out_dir)
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    print(result.summary())
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_generate(args) -> int:
    doc = generate_scenario(
        lanes=args.lanes, procs=args.procs, apps=args.apps,
        target_utilization=args.util, seed=args.seed,
        infeasible=args.infeasible, faults=args.faults,
        horizon_ms=args.horizon_ms)
    text = dump_scenario(doc)
    if args.output:
        try:
            Path(args.output).write_text(text, encoding="utf-8")
        except OSError as exc:
            print(f"error: cannot write {args.output}: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"wrote {args.output}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_batch(args) -> int:
    root = Path(args.directory)
    paths = sorted(root.glob("*.json"))
    if not paths:
        print(f"error: no scenario files under {root}", file=sys.stderr)
        return EXIT_PARSE
    out_root = _resolve_out_dir(args.out_dir)
    worst = EXIT_OK
    ran = 0
    for path in paths:
        try:
            scenario = _apply_overrides(load_scenario(path), args)
            result = run(scenario)
        except (json.JSONDecodeError, MalformedDocument) as exc:
            print(f"{path.name}: parse error: {exc}")
            worst = max(worst, EXIT_PARSE)
            continue
        except InvalidModel as exc:
            print(f"{path.name}: invalid: {_violation_text(exc)}")
            worst = max(worst, EXIT_INVALID)
            continue
        try:
            write_outputs(result, out_root / path.stem)
        except OSError as exc:
            print(f"error: cannot write outputs for {path.name}: {exc}",
                  file=sys.stderr)
            return EXIT_IO
        ran += 1
        print(f"{path.name}: {result.summary()}")
    print(f"batch: {ran}/{len(paths)} scenarios completed")
    return worst


def _violation_text(exc: InvalidModel) -> str:
    violations = getattr(exc, "violations", None)
    if not violations:
        return str(exc)
    return "; ".join(f"{v.code}: {v.message}" for v in violations)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanesim",
        description="Simulate fault recovery on replicated computing lanes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("scenario")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("run", help="simulate a scenario and write reports")
    p.add_argument("scenario")
    p.add_argument("--out-dir", default=None,
                   help=f"output directory (default ${OUT_DIR_ENV} or .)")
    p.add_argument("--horizon-ms", type=float, default=None,
                   help="override the simulation horizon")
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario seed")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("generate", help="emit a synthetic scenario")
    p.add_argument("--lanes", type=int, default=3)
    p.add_argument("--procs", type=int, default=3,
                   help="processors per lane, one of them the spare")
    p.add_argument("--apps", type=int, default=2)
    p.add_argument("--util", type=float, default=0.5,
                   help="per-processor utilization target")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--infeasible", action="store_true",
                   help="draw an overloaded task set and disable admission")
    p.add_argument("--faults", type=int, default=0,
                   help="number of random fault injections to script")
    p.add_argument("--horizon-ms", type=float, default=None)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("batch", help="run every scenario in a directory")
    p.add_argument("directory")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--horizon-ms", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_batch)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (json.JSONDecodeError, MalformedDocument) as exc:
        print(f"error: cannot parse scenario: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InvalidModel as exc:
        print(f"error: invalid scenario: {_violation_text(exc)}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
