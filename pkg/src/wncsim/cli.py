"""Command-line front end: run scenarios, sweep grids, compare policies."""

from __future__ import annotations

import argparse
import os
import sys

from . import harness
from .harness import Scenario, ScenarioError
from .transport import POLICY_KINDS


def _parse_int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _parse_float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenario", required=True, help="scenario YAML file")
    parser.add_argument("--seeds", help="comma-separated seeds (default: scenario file)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker processes for multi-seed batches")
    parser.add_argument("--trace", action="store_true",
                        help="dump per-run event traces (run command only)")


def _emit(out_dir: str, rows, results_by_key: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    harness.write_summary_csv(rows, os.path.join(out_dir, "summary.csv"))
    flat = [r for results in results_by_key.values() for r in results]
    harness.write_series_ndjson(flat, os.path.join(out_dir, "series.ndjson"))


def cmd_run(args) -> int:
    sc = harness.load_scenario(args.scenario)
    seeds = _parse_int_list(args.seeds) if args.seeds else sc.seeds
    results = []
    for seed in seeds:
        res = harness.run_experiment(sc, seed, trace=args.trace)
        if args.trace and res.trace is not None:
            os.makedirs(args.out, exist_ok=True)
            harness.write_trace(res.trace,
                                os.path.join(args.out, f"trace-seed{seed}.ndjson"))
            res.trace = None
        results.append(res)
    rows = harness.aggregate(results, harness._label(sc))
    _emit(args.out, rows, {"run": results})
    for row in rows:
        print(f"loop={row['loop']} median={row['median']:.6g} "
              f"q1={row['q1']:.6g} q3={row['q3']:.6g} failed={row['n_failed']}")
    return 0


def cmd_sweep(args) -> int:
    sc = harness.load_scenario(args.scenario)
    seeds = _parse_int_list(args.seeds) if args.seeds else sc.seeds
    if args.lambdas:
        rows, results = harness.threshold_sweep(
            sc, _parse_float_list(args.lambdas), seeds=seeds,
            include_ta=not args.no_ta, workers=args.workers)
    elif args.loops:
        rows, results = harness.loop_count_sweep(
            sc, _parse_int_list(args.loops), seeds=seeds, workers=args.workers)
    else:
        raise ScenarioError("sweep needs --lambdas or --loops")
    _emit(args.out, rows, results)
    print(f"wrote {len(rows)} summary rows to {args.out}/summary.csv")
    return 0


def cmd_compare(args) -> int:
    sc = harness.load_scenario(args.scenario)
    seeds = _parse_int_list(args.seeds) if args.seeds else sc.seeds
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    for p in policies:
        if p not in POLICY_KINDS:
            raise ScenarioError(f"unknown policy {p!r}")
    rows, results = harness.compare_policies(sc, policies, seeds=seeds,
                                             workers=args.workers)
    _emit(args.out, rows, results)
    for row in rows:
        if row["loop"] == "all":
            print(f"{row['policy']:>12}  median={row['median']:.6g}  "
                  f"failed={row['n_failed']}/{row['n_runs']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wncsim",
        description="co-simulate control loops over a shared wireless medium",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario over its seeds")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="threshold or loop-count grid")
    _add_common(p_sweep)
    p_sweep.add_argument("--lambdas", help="comma-separated thresholds")
    p_sweep.add_argument("--no-ta", action="store_true",
                         help="skip the adaptive-threshold column")
    p_sweep.add_argument("--loops", help="comma-separated loop counts")
    p_sweep.set_defaults(func=cmd_sweep)

    p_cmp = sub.add_parser("compare", help="policy set on a shared scenario")
    _add_common(p_cmp)
    p_cmp.add_argument("--policies", required=True,
                       help=f"comma-separated subset of {','.join(POLICY_KINDS)}")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
