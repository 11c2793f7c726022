"""Command-line front door.

Subcommands:
  search        run an orbit-search campaign over prime-power periods
  verify        run every module's invariant suite on the configured system
  bangert-demo  run the pulled-iterate demos and emit slack tables/slices
  index         index report for a serialized loop (JSON from `search`)
  iterate       emit the n-th iterate of a serialized loop
  defaults      print the default configuration

Config files are JSON; `defaults` shows the full tree.  Exit codes:
0 success, 1 suite/search failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import broken as bk
from .index import IndexMismatchError, index_of_orbit, iteration_profile
from .search import CampaignConfig, ConfigError, DEFAULT_CONFIG, run_bangert_demo, run_search, run_verify

__all__ = ["main", "build_parser"]


def build_parser():
    parser = argparse.ArgumentParser(prog="tonelli", description=__doc__.split("\n")[0])
    parser.add_argument("--config", type=Path, help="JSON configuration file")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--seed", type=int, help="override the RNG seed")
    parser.add_argument("--periods", type=str, help="override periods, e.g. 1,2,4")
    parser.add_argument("--k", type=int, help="override nodes per unit period")
    parser.add_argument("--jobs", type=int, help="parallel seed workers")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("search", help="run the orbit-search campaign")
    sub.add_parser("verify", help="run the invariant suites")
    sub.add_parser("bangert-demo", help="run the pulled-iterate demos")
    p_index = sub.add_parser("index", help="index report for a stored loop")
    p_index.add_argument("loop", type=Path, help="loop JSON file")
    p_iter = sub.add_parser("iterate", help="emit the n-th iterate of a stored loop")
    p_iter.add_argument("loop", type=Path, help="loop JSON file")
    p_iter.add_argument("-n", type=int, required=True, help="iteration order")
    sub.add_parser("defaults", help="print the default configuration")
    return parser


def _load_config(args):
    raw = {}
    if args.config is not None:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if args.seed is not None:
        raw.setdefault("seeds", {})["rng_seed"] = args.seed
    if args.k is not None:
        raw["k"] = args.k
    if args.jobs is not None:
        raw["jobs"] = args.jobs
    cfg = CampaignConfig.from_dict(raw)
    if args.periods is not None:
        try:
            periods = sorted({int(x) for x in args.periods.split(",")})
        except ValueError as exc:
            raise ConfigError(f"bad --periods {args.periods!r}") from exc
        cfg.periods = periods
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "defaults":
        print(json.dumps(DEFAULT_CONFIG, indent=2, sort_keys=True))
        return 0
    try:
        config = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "search":
        report, registry = run_search(config, args.out, progress=_progress)
        print(json.dumps({k: v for k, v in report.items() if k != "flags"}, indent=2, sort_keys=True))
        if report["flags"]:
            print("flags:", *report["flags"], sep="\n  ", file=sys.stderr)
        if report["rail_violations"] or report["orbits"] == 0:
            return 1
        return 0

    if args.command == "verify":
        report = run_verify(config, args.out)
        for chk in report["checks"]:
            mark = "PASS" if chk["passed"] else "FAIL"
            print(f"[{mark}] {chk['name']}: {chk['detail']} ({chk['s']}s)")
        return 0 if report["passed"] else 1

    if args.command == "bangert-demo":
        try:
            result = run_bangert_demo(config, args.out)
        except RuntimeError as exc:
            print(f"bangert demo failed: {exc}", file=sys.stderr)
            return 1
        for row in result["rows"]:
            print(
                f"{row['demo']:>14} n={row['n']:>3}  C={row['c_theta']:.6f}  "
                f"max a^n={row['max_mean_action']:.6f}  bound={row['bound']:.6f}  "
                f"slack={row['min_slack']:+.2e}  w1inf={row['w1inf']:.4f}"
            )
        print(f"table: {result['table']}")
        return 0

    if args.command == "index":
        try:
            loop = bk.loop_from_json(
                config.search_spec, config.radii, Path(args.loop).read_text(),
                steps_per_segment=config.steps_per_segment,
            )
        except (OSError, ValueError) as exc:
            print(f"config error: cannot load loop: {exc}", file=sys.stderr)
            return 2
        report = bk.find_critical(config.search_spec, config.radii, loop, config.solver)
        if not report.converged:
            print(f"loop is not critical: gradient norm {report.gradient_norm:.3e}", file=sys.stderr)
            return 1
        try:
            index_of_orbit(config.search_spec, report)
            profile = iteration_profile(config.search_spec, report, [1, 2, 4, config.index_n_max])
        except IndexMismatchError as exc:
            print(f"index pipelines disagree: {exc}", file=sys.stderr)
            return 1
        print(profile.to_json())
        return 0

    if args.command == "iterate":
        try:
            loop = bk.loop_from_json(
                config.search_spec, config.radii, Path(args.loop).read_text(),
                steps_per_segment=config.steps_per_segment,
            )
        except (OSError, ValueError) as exc:
            print(f"config error: cannot load loop: {exc}", file=sys.stderr)
            return 2
        print(bk.loop_to_json(bk.iterate_loop(loop, args.n)))
        return 0

    raise AssertionError(f"unhandled command {args.command!r}")


def _progress(tau, label, status):
    if status not in ("converged",):
        return
    print(f"  period {tau}: {label} -> {status}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
