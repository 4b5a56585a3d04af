"""Command-line interface.

    turingflow optimize|dehomogenize|verify|pipeline CONFIG [options]
    turingflow report RUN_DIR
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigError, StageInputError

logger = logging.getLogger("turingflow")

SUBCOMMANDS = {
    "optimize": ["optimize"],
    "dehomogenize": ["dehomogenize"],
    "verify": ["verify"],
    "pipeline": ["optimize", "dehomogenize", "verify", "report"],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="turingflow",
                                     description="Flow-manifold optimization and Turing-pattern dehomogenization.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "pipeline" else "run every stage")
        p.add_argument("config", type=Path, help="configuration file")
        p.add_argument("--output-dir", type=Path, default=None, help="run directory (overrides [output])")
        p.add_argument("--seed", type=int, default=None, help="RD random seed (overrides [rd] seed)")
        p.add_argument("--jobs", type=int, default=1, help="threads for the sparse solvers")
        p.add_argument("--stokes", action="store_true", help="drop the convective term")
        p.add_argument("--baseline", action="store_true",
                       help="skip optimization; verify the all-fluid domain only")
    p = sub.add_parser("report", help="regenerate summary.csv and renderings of a run")
    p.add_argument("run_dir", type=Path)
    return parser


def _set_threads(jobs: int):
    jobs = max(1, int(jobs))
    for var in ("OMP_NUM_THREADS", "MKL_NUM_THREADS", "OPENBLAS_NUM_THREADS"):
        os.environ[var] = str(jobs)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command != "report":
        _set_threads(args.jobs)
    # solver imports happen after the thread settings
    from .config import load_config
    from .pipeline import report_only, run_pipeline

    try:
        if args.command == "report":
            report_only(args.run_dir)
            return 0
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.replace(rd=dataclasses.replace(cfg.rd, seed=args.seed))
        if args.stokes:
            cfg = cfg.replace(flow=dataclasses.replace(cfg.flow, stokes=True))
        run_dir = args.output_dir if args.output_dir is not None else Path(cfg.output.directory)
        if args.output_dir is not None:
            cfg = cfg.replace(output=dataclasses.replace(cfg.output, directory=str(args.output_dir)))
        results = run_pipeline(cfg, SUBCOMMANDS[args.command], run_dir, baseline=args.baseline)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except StageInputError as exc:
        print(f"stage input error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # recorded in the manifest; report and fail
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for case in ("optimized", "baseline"):
        row = results.get("verify", {}).get(case)
        if row:
            print(f"{case}: n={row['n']} avg={row['avg_variation']:.4f} max={row['max_variation']:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
