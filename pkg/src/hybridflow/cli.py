"""Command-line entry points: validate, run, snapshot, occupancy.

Exit codes: 0 success, 1 validation/parse error, 2 runtime error, 3 truncated run.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from fractions import Fraction

import numpy as np

from .engine import Simulation
from .network import validate_network
from .output import load_results, write_results
from .scenario import ScenarioError, load_scenario
from .transform import DEFAULT_OVERFLOW, PRESETS, preset, sample_occupancy

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_TRUNCATED = 0, 1, 2, 3

log = logging.getLogger("hybridflow")


def _load(path):
    try:
        sc = load_scenario(path)
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return None
    except ScenarioError as exc:
        for loc, msg in exc.errors:
            print(f"error: {loc}: {msg}" if loc else f"error: {msg}", file=sys.stderr)
        return None
    violations = validate_network(sc.network)
    for v in violations:
        print(f"invalid: {v}", file=sys.stderr)
    return None if violations else sc


def cmd_validate(args) -> int:
    sc = _load(args.scenario)
    if sc is None:
        return EXIT_INVALID
    net = sc.network
    print(f"ok: {len(net.nodes)} nodes, {len(net.edges)} edges, {len(net.commodities)} commodities")
    return EXIT_OK


def cmd_run(args) -> int:
    sc = _load(args.scenario)
    if sc is None:
        return EXIT_INVALID
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.max_sim_time is not None:
        changes["max_sim_time_s"] = args.max_sim_time
    if args.deterministic_transform:
        changes["transform"] = "deterministic"
    if changes:
        sc = sc.with_settings(**changes)

    def progress(t, sim):
        log.info("t = %.0f s, in system: %s", t, {m.value: round(v, 3) for m, v in sim.mass_by_mode().items()})

    start = time.perf_counter()
    try:
        results = Simulation(sc, progress=progress).run()
        write_results(results, args.out, figures=not args.no_figures)
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    wall = time.perf_counter() - start
    status = "truncated" if results.truncated else "completed"
    print(f"{status}: simulated {results.termination_time:.1f} s in {results.steps} steps, "
          f"wall {wall:.2f} s -> {args.out}")
    for row in results.summary:
        print(f"  {row['commodity']}: exited {row['total_persons']:.3f}, "
              f"mean travel time {row['mean_travel_time_s']:.1f} s")
    return EXIT_TRUNCATED if results.truncated else EXIT_OK


def cmd_snapshot(args) -> int:
    from .plotting import SnapshotError, render_snapshot

    try:
        results = load_results(args.results_dir)
        render_snapshot(results, args.t, args.out)
    except (SnapshotError, OSError, ScenarioError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(args.out)
    return EXIT_OK


def cmd_occupancy(args) -> int:
    pmf = preset(args.preset, args.overflow)
    total = pmf.total
    print(f"preset {args.preset}: {total} cars (overflow bucket -> {args.overflow} passengers)")
    print("passengers,count,probability_exact,probability")
    for v, c, p in zip(pmf.values, pmf.counts, pmf.exact_probabilities()):
        label = f">{args.overflow - 1}" if v == args.overflow and ">5" in PRESETS[args.preset] else str(v)
        print(f"{label},{c},{c}/{total},{float(p):.4f}")
    mean = pmf.exact_mean()
    share = sum((Fraction(c, total) for v, c in zip(pmf.values, pmf.counts) if v <= 2), Fraction(0))
    print(f"mean = {sum(v * c for v, c in zip(pmf.values, pmf.counts))}/{total} = {float(mean):.4f}")
    print(f"share 1-2 passengers = {share * total}/{total} = {float(share):.1%}")
    if args.samples:
        rng = np.random.default_rng(args.seed)
        mc = float(np.mean(sample_occupancy(pmf, rng, args.samples)))
        print(f"monte carlo: {args.samples} samples, seed {args.seed}, mean = {mc:.4f} "
              f"(deviation {mc - float(mean):+.4f})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridflow", description="Macroscopic car/pedestrian network simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress every simulated minute")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario file and its network")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate a scenario and write the result bundle")
    p.add_argument("scenario")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-sim-time", type=float, help="simulated-time limit in seconds")
    p.add_argument("--deterministic-transform", action="store_true",
                   help="use the mean occupancy instead of sampling it")
    p.add_argument("--no-figures", action="store_true", help="skip SVG figures")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("snapshot", help="render edge densities at time t as SVG")
    p.add_argument("results_dir")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_snapshot)

    p = sub.add_parser("occupancy", help="print the passengers-per-car distribution")
    p.add_argument("--preset", default="rockavaria2015", choices=sorted(PRESETS))
    p.add_argument("--overflow", type=int, default=DEFAULT_OVERFLOW,
                   help="passenger count used for the open-ended bucket")
    p.add_argument("--samples", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_occupancy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
