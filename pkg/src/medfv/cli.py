"""Command line entry point: ``medfv <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import harness
from .errors import MedFVError
from .fields import reproducible
from .mesh import build_rect_mesh, dump_mesh


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--reproducible", action="store_true", default=argparse.SUPPRESS,
                   help="use order-independent exact summation in all reductions")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="medfv", parents=[common],
                                     description="Median-normalised finite volume solver")
    sub = parser.add_subparsers(dest="command", required=True)

    mi = sub.add_parser("mesh-info", parents=[common], help="print a rectangular mesh dump")
    mi.add_argument("--nx", type=int, required=True)
    mi.add_argument("--ny", type=int, required=True)
    mi.add_argument("--lx", type=float, default=1.0)
    mi.add_argument("--ly", type=float, default=1.0)

    for name, text in (("solve", "solve every mesh level and write solution CSVs"),
                       ("converge", "write convergence.csv"),
                       ("verify", "write estimates.csv and energy.csv")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", help="override out.dir")
        if name == "converge":
            sp.add_argument("--exact", action="store_true",
                            help="measure errors against the manufactured exact solution")
    return parser


def _run(args) -> int:
    if args.command == "mesh-info":
        sys.stdout.write(dump_mesh(build_rect_mesh(args.nx, args.ny, args.lx, args.ly)))
        return 0

    config, exact = harness.load_config(args.config)
    outdir = os.path.abspath(args.out) if args.out else config.outputs
    levels = harness.solve_levels(config)
    if args.command == "solve":
        files = harness.solution_files(levels)
    elif args.command == "converge":
        if args.exact and exact is None:
            raise ValueError(f"case {config.case_name!r} has no exact solution")
        table = harness.run_convergence(config, exact if args.exact else None, levels)
        files = {"convergence.csv": table.to_csv()}
    else:
        files = harness.run_verify(config, levels)
    for path in harness.write_outputs(outdir, files):
        print(path)
    failed = [lv.level for lv in levels if lv.u is None]
    if failed:
        print(f"levels without a converged solution: {failed}", file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with reproducible(getattr(args, "reproducible", False)):
            return _run(args)
    except (ValueError, OSError, MedFVError) as exc:
        print(f"medfv: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
