"""
Command-line surface of the toolkit.

    python -m backend.cli simulate --method hh --seed 3 --slots 10 --out results/sim
    python -m backend.cli sweep --vary K --values 2 4 6 8 --methods hh greedy --seeds 20 --out results/k
    python -m backend.cli track-bench --seeds 50 --out results/filters
    python -m backend.cli report --out results/k

Exit codes: 0 on success, 2 on an infeasible or invalid configuration, 1 on
any other error.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd
from dotenv import load_dotenv

from .services import harness
from .utils.config import ScenarioConfig, load_config
from .utils.constants import METHODS
from .utils.errors import EXIT_INFEASIBLE, EXIT_OK, ConfigurationError, exit_code_for

logger = logging.getLogger(__name__)

project_root = Path(__file__).parent.parent


def _overrides(pairs: Optional[Sequence[str]]) -> Dict[str, str]:
    values = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigurationError(f"override {pair!r} is not KEY=VALUE")
        key, value = pair.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _config(args: argparse.Namespace) -> ScenarioConfig:
    overrides = _overrides(args.set)
    solver = os.getenv("ISCSC_SOLVER")
    if solver and "solver" not in overrides:
        overrides["solver"] = solver
    return load_config(args.config or os.getenv("ISCSC_CONFIG") or None, overrides)


def _seeds(args: argparse.Namespace, config: ScenarioConfig) -> List[int]:
    """--seeds N expands to N consecutive seeds starting at --seed (or the config seed)."""
    start = args.seed if args.seed is not None else config.seed
    return list(range(start, start + args.seeds))


def _out_dir(args: argparse.Namespace, default: str) -> Path:
    return Path(args.out or os.getenv("ISCSC_OUTPUT_DIR") or default)


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _config(args)
    seed = args.seed if args.seed is not None else config.seed
    result = harness.run_simulation(config, args.method, seed, args.slots)
    out = _out_dir(args, "results/simulate")
    harness.save_records(result, out)
    summary = {"method": args.method, "seed": seed, "fingerprint": config.fingerprint(),
               "scenario": result.scenario.to_dict(), **result.summary()}
    _write_json(out / f"summary_{args.method}_seed{seed}.json", summary)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _config(args)
    spec = harness.SweepSpec(parameter=args.vary, values=args.values, methods=args.methods,
                             seeds=_seeds(args, config), slots=args.slots)
    result = harness.run_experiment(spec, config, workers=args.workers)
    paths = harness.emit_report(result, _out_dir(args, f"results/sweep_{args.vary}"))
    print(result.summary.to_string(index=False))
    logger.info(f"Wrote {paths['csv']} and {paths['summary']} ({result.failed_runs} failed runs)")
    return EXIT_OK


def cmd_track_bench(args: argparse.Namespace) -> int:
    config = _config(args)
    result = harness.track_bench(config, _seeds(args, config), args.slots, args.particles)
    out = _out_dir(args, "results/track_bench")
    out.mkdir(parents=True, exist_ok=True)
    rows = pd.DataFrame(result.rows).drop(columns=["rmse_x_per_slot", "rmse_y_per_slot"], errors="ignore")
    rows.to_csv(out / "track_bench.csv", index=False)
    _write_json(out / "track_bench_summary.json", {"fingerprint": config.fingerprint(), "summary": result.summary})
    print(pd.DataFrame(result.summary).to_string(index=False))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    """Re-aggregate a sweep directory, or the slot records of simulate runs."""
    out = _out_dir(args, "results")
    if (out / "results.csv").exists():
        result = harness.load_report(out)
        harness.emit_report(result, out)
        print(result.summary.to_string(index=False))
        return EXIT_OK
    record_files = sorted(out.glob("records_*.jsonl"))
    if not record_files:
        raise ConfigurationError(f"no results.csv or records_*.jsonl under {out}")
    rows = []
    for path in record_files:
        records = harness.load_records(path)
        if records:
            rows.append({"method": records[0].method, "seed": records[0].seed,
                         **harness.summarize_records(records)})
    table = pd.DataFrame(rows)
    table.to_csv(out / "records_summary.csv", index=False)
    print(table.to_string(index=False))
    return EXIT_OK


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="scenario file (key = value); defaults when omitted")
    parser.add_argument("--seed", type=int, help="run seed, or first seed of a seed range")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--slots", type=int, help="timeslots per run (slot_count when omitted)")
    parser.add_argument("--set", nargs="*", metavar="KEY=VALUE", help="scenario overrides")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iscsc", description="Near-field ISCSC digital-twin simulations")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="one scenario, full slot records")
    _common(sim)
    sim.add_argument("--method", choices=METHODS, default="hh")
    sim.set_defaults(func=cmd_simulate)

    sweep = sub.add_parser("sweep", help="figure-style parameter sweeps")
    _common(sweep)
    sweep.add_argument("--vary", choices=harness.SWEEP_PARAMETERS, required=True)
    sweep.add_argument("--values", type=float, nargs="+", required=True)
    sweep.add_argument("--methods", "--method", nargs="+", choices=METHODS, default=["hh"])
    sweep.add_argument("--seeds", type=int, default=1, help="number of seeds")
    sweep.add_argument("--workers", type=int, default=1, help="worker processes")
    sweep.set_defaults(func=cmd_sweep)

    bench = sub.add_parser("track-bench", help="PF against EKF and UKF")
    _common(bench)
    bench.add_argument("--seeds", type=int, default=1, help="number of seeds")
    bench.add_argument("--particles", type=int, nargs="+", default=[500, 2000])
    bench.set_defaults(func=cmd_track_bench)

    report = sub.add_parser("report", help="re-aggregate saved results")
    report.add_argument("--out", help="directory holding results.csv or records_*.jsonl")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv(project_root / "config" / ".env")
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        return args.func(args)
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed: {str(e)}", exc_info=code != EXIT_INFEASIBLE)
        return code


if __name__ == "__main__":
    sys.exit(main())
