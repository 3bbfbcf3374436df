"""Command-line entry points.

  cardiowave simulate --config case.json [--out DIR] [--cycles N] [--verbose]
  cardiowave import-network --in table.csv --format radius-table --out net.json
  cardiowave metrics --traces run_traces.csv --period T

Exit codes: 0 success, 2 configuration error, 3 solver failure.
The CARDIOWAVE_WORKERS environment variable sets how many sweep points
run as parallel processes (default 1, sequential).
"""

import argparse
import json
import os
import sys

from .errors import CardiowaveError, ConfigError
from .scenarios import (
    compute_metrics,
    import_network,
    load_config,
    read_traces,
    run_case,
    run_point,
    sweep_points,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _cmd_simulate(args):
    cfg = load_config(args.config)
    out_dir = args.out or cfg.get("output", "dir", default="out")
    workers = int(os.environ.get("CARDIOWAVE_WORKERS", "1"))
    points = sweep_points(cfg)
    if workers > 1 and len(points) > 1:
        import concurrent.futures as cf

        results = []
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {
                pool.submit(
                    run_point, pcfg, label, out_dir, args.cycles, args.verbose
                ): label
                for label, pcfg in points
            }
            for fut in cf.as_completed(futs):
                label = futs[fut]
                try:
                    results.append(fut.result())
                except CardiowaveError as exc:
                    results.append(
                        {"label": label, "status": "failed", "error": str(exc)}
                    )
    else:
        results = run_case(cfg, out_dir=out_dir, n_cycles=args.cycles,
                           verbose=args.verbose)
    failed = [r for r in results if r["status"] != "ok"]
    for r in results:
        if r["status"] == "ok":
            m = r["metrics"]
            print(
                f"[ok]     {r['label']}: EDV {m.EDV * 1e6:.1f} ml, "
                f"ESV {m.ESV * 1e6:.1f} ml, SV {m.SV * 1e6:.1f} ml, "
                f"peak LV {m.peak_lv_pressure / 1e3:.2f} kPa "
                f"({r['stats']['wall_time_s']:.0f} s)"
            )
            for w in m.warnings:
                print(f"         warning: {w}")
        else:
            print(f"[failed] {r['label']}: {r['error']}")
    return EXIT_SOLVER if failed else EXIT_OK


def _cmd_import_network(args):
    model, report = import_network(args.infile, fmt=args.format)
    with open(args.out, "w") as f:
        json.dump(model, f, indent=1)
    print(
        f"imported {report['segments']} segments, {report['junctions']} junctions, "
        f"{report['terminals']} terminals; blood volume "
        f"{report['total_volume_m3'] * 1e6:.1f} ml -> {args.out}"
    )
    return EXIT_OK


def _cmd_metrics(args):
    traces = read_traces(args.traces, period=args.period)
    if args.period is None:
        # treat the whole trace as one cycle
        traces.period = traces.dt * len(traces.columns["t"])
    m = compute_metrics(traces)
    print(json.dumps(m.as_dict(), indent=1))
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(prog="cardiowave", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a case file (with sweeps)")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", default=None)
    p_sim.add_argument("--cycles", type=int, default=None)
    p_sim.add_argument("--verbose", action="store_true")
    p_sim.set_defaults(func=_cmd_simulate)

    p_imp = sub.add_parser("import-network", help="convert a tabular vessel file")
    p_imp.add_argument("--in", dest="infile", required=True)
    p_imp.add_argument("--format", default="radius-table")
    p_imp.add_argument("--out", required=True)
    p_imp.set_defaults(func=_cmd_import_network)

    p_met = sub.add_parser("metrics", help="recompute metrics from a trace CSV")
    p_met.add_argument("--traces", required=True)
    p_met.add_argument("--period", type=float, default=None,
                       help="cycle length; whole trace if omitted")
    p_met.set_defaults(func=_cmd_metrics)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CardiowaveError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
