"""Command-line entry point: ``rydsqueeze {simulate,scan,benchmark,plan}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 resource error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import PRESETS, ConfigError, PlanDocument, RunConfig, load_config, load_preset, parse_config
from .errors import AnalysisError, DimensionError, InvalidSpecError, NumericalError, ResourceError, UndefinedSqueezingError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_RESOURCE = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser, runs: bool = True) -> None:
    src = p.add_mutually_exclusive_group(required=not runs)
    src.add_argument("--config", metavar="PATH", help="YAML configuration document")
    src.add_argument("--preset", choices=PRESETS, help="shipped configuration")
    p.add_argument("--out", metavar="DIR", default=".", help="output directory (default: current)")
    if runs:
        p.add_argument("--workers", type=int, metavar="K",
                       help="worker processes (default: $RYDSQUEEZE_WORKERS or CPU count)")
        p.add_argument("--seed", type=int, metavar="U64", help="override ensemble.master_seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rydsqueeze", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("simulate", help="run one configuration"), runs=True)
    p = sub.add_parser("scan", help="run the Cartesian product of scan axes")
    _common(p, runs=True)
    p.add_argument("--resume", action="store_true", help="skip cells already in the journal")
    _common(sub.add_parser("benchmark", help="compare the trajectory engine with the exact oracle"), runs=True)

    p = sub.add_parser("plan", help="dressing parameters and constraints for a species")
    p.add_argument("--config", metavar="PATH", help="YAML document with a 'plan' section")
    p.add_argument("--out", metavar="DIR", default=".")
    p.add_argument("--species")
    p.add_argument("--n", type=int, help="principal quantum number (default: tabulated)")
    p.add_argument("--f", type=float, help="Rydberg fraction")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--omega-hz", type=float, help="Rabi frequency Omega/2pi in Hz")
    g.add_argument("--r-b", type=float, help="blockade radius in lattice units")
    p.add_argument("--lattice", type=int, nargs="+", metavar="L", help="lattice lengths (default 14 14)")
    p.add_argument("--overlay", type=float, nargs="+", metavar="R_B", help="r_b grid for the overlay CSV")
    p.add_argument("--list-species", action="store_true", help="print the species table and exit")
    return parser


def _run_config(args) -> RunConfig:
    if args.config is None and args.preset is None:
        raise ConfigError("give --config PATH or --preset NAME")
    cfg = load_config(args.config) if args.config else load_preset(args.preset)
    if args.seed is not None:
        data = cfg.model_dump(mode="python")
        data["ensemble"]["master_seed"] = args.seed
        cfg = parse_config(data)
    return cfg


def _plan_document(args) -> PlanDocument:
    if args.config:
        return load_config(args.config, PlanDocument)
    plan = {k: v for k, v in (("species", args.species), ("n", args.n), ("f", args.f), ("omega_hz", args.omega_hz),
                               ("r_b", args.r_b), ("overlay_r_b", args.overlay)) if v is not None}
    doc = {"plan": plan}
    if args.lattice:
        doc["lattice"] = {"lengths": args.lattice}
    return parse_config(doc, PlanDocument)


def _dispatch(args) -> None:
    from . import runner

    if args.command == "plan":
        if args.list_species:
            from .planner import species_yaml

            sys.stdout.write(species_yaml())
            return
        result = runner.plan(_plan_document(args), args.out)
        feasible = "feasible" if result["constraints"]["ok"] else "infeasible: " + "; ".join(
            result["constraints"]["violations"])
        print(f"r_b = {result['dressing']['r_b']:.4g}, J0/2pi = {result['dressing']['j0_hz']:.4g} Hz, {feasible}")
        return
    cfg = _run_config(args)
    if args.command == "simulate":
        s = runner.simulate(cfg, args.out, workers=args.workers)
        if "xi2_opt_db" in s:
            print(f"xi2_opt = {s['xi2_opt_db']:.3f} dB at t = {s['t_opt']:.6g}"
                  + (" (boundary minimum)" if s["boundary_minimum"] else ""))
    elif args.command == "scan":
        rows = runner.scan(cfg, args.out, workers=args.workers, resume=args.resume)
        failed = sum(r["status"] != "ok" for r in rows)
        print(f"{len(rows)} cells, {failed} failed")
    else:
        r = runner.benchmark(cfg, args.out, workers=args.workers)
        print(f"delta xi2_opt = {r['delta_xi2_opt_db']:+.3f} dB, delta t_opt = {r['delta_t_opt_steps']:+.1f} steps, "
              f"max z = {r['max_z_score']:.2f}: {'PASS' if r['pass'] else 'FAIL'}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        _dispatch(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        for path, msg in exc.errors:
            print(f"error at {path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, UndefinedSqueezingError, AnalysisError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ResourceError, MemoryError) as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (InvalidSpecError, DimensionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK
