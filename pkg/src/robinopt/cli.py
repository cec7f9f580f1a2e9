"""Command line interface: ``robinopt benchmark`` and ``robinopt mms``."""

import argparse
import logging
import os
import sys

from .control import BoxBounds, write_control_csv
from .fem import assemble_robin, write_system_dump
from .mesh import build_hierarchy, write_mesh_dump
from .optimizer import SolveOptions
from .study import FALLBACK_MAX_OUTER, BenchmarkSpec, emit_results, run_benchmark, run_mms

EXIT_OK = 0
EXIT_NONCONVERGED = 2
EXIT_IO = 3


def _upper_bound(text):
    if text.strip().lower() in ("inf", "+inf", "infinity", "none"):
        return None
    return float(text)


def _common(p):
    p.add_argument("--max-level", type=int, default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--output", default=None, help="results file (default: stdout)")
    p.add_argument("--dump-mesh", action="store_true",
                   help="write the finest study mesh as text next to the output")
    p.add_argument("--dump-system", action="store_true",
                   help="write the finest Robin matrix in coordinate format")
    p.add_argument("--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="robinopt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("benchmark", help="refinement study of the Robin-coefficient benchmark")
    _common(b)
    b.add_argument("--ref-level", type=int, default=9)
    b.add_argument("--alpha", type=float, default=1e-2)
    b.add_argument("--ua", type=float, default=0.0)
    b.add_argument("--ub", type=_upper_bound, default=None, metavar="FLOAT|inf")
    b.add_argument("--g", type=float, default=BenchmarkSpec.g, help="constant Robin datum g")
    b.add_argument("--tol", type=float, default=1e-10)
    b.add_argument("--max-iter", type=int, default=None,
                   help="outer iteration cap (default 30 for pdas, 800 for fixed-point, "
                        "which runs up to ten times this many steps)")
    b.add_argument("--solver", choices=("pdas", "fixed-point"), default="pdas")
    b.add_argument("--bump-axis", choices=("x1", "x2"), default="x2")

    m = sub.add_parser("mms", help="state solver convergence on a manufactured solution")
    _common(m)
    return parser


def _dump_dir(args):
    return os.path.dirname(os.path.abspath(args.output)) if args.output else os.getcwd()


def _write_dumps(args, mesh, control):
    d = _dump_dir(args)
    if args.dump_mesh:
        write_mesh_dump(mesh, os.path.join(d, f"mesh_level{mesh.level}.txt"))
    if args.dump_system:
        write_system_dump(assemble_robin(mesh, control),
                          os.path.join(d, f"system_level{mesh.level}.txt"))


def _benchmark(args):
    max_level = 7 if args.max_level is None else args.max_level
    spec = BenchmarkSpec(alpha=args.alpha, bounds=BoxBounds(args.ua, args.ub),
                         g=args.g, bump_axis=args.bump_axis)
    max_iter = args.max_iter
    if max_iter is None:
        max_iter = FALLBACK_MAX_OUTER if args.solver == "fixed-point" else 30
    opts = SolveOptions(tol=args.tol, max_outer=max_iter)
    meshes = build_hierarchy(args.ref_level)
    run = run_benchmark(max_level, args.ref_level, opts, spec, solver=args.solver,
                        meshes=meshes)
    text = emit_results(run.rows, args.format, args.output)
    if args.output is None:
        sys.stdout.write(text)
    else:
        stem, _ = os.path.splitext(args.output)
        finest = run.reports[max_level].control
        write_control_csv(finest, stem + "_control.csv")
    _write_dumps(args, meshes[max_level], run.reports[max_level].control)
    for row in run.rows:
        if not row.converged:
            print(f"level {row.level}: solver did not converge", file=sys.stderr)
    if not run.reference.converged:
        print(f"reference level {args.ref_level}: solver did not converge", file=sys.stderr)
    return EXIT_NONCONVERGED if run.failed else EXIT_OK


def _mms(args):
    max_level = 8 if args.max_level is None else args.max_level
    meshes = build_hierarchy(max_level)
    rows = run_mms(max_level, meshes=meshes)
    text = emit_results(rows, args.format, args.output)
    if args.output is None:
        sys.stdout.write(text)
    _write_dumps(args, meshes[max_level], 1.0)
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.output is not None and not os.path.isdir(_dump_dir(args)):
        print(f"robinopt: output directory {_dump_dir(args)} does not exist", file=sys.stderr)
        return EXIT_IO
    try:
        if args.command == "benchmark":
            return _benchmark(args)
        return _mms(args)
    except OSError as exc:
        print(f"robinopt: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"robinopt: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
