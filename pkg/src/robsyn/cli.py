"""Command line front end.

Subcommands::

    robsyn synth problem.json     design a controller, write a report
    robsyn analyze problem.json   worst-case analysis of a fixed controller
    robsyn certify problem.json   grid check of a report's controller
    robsyn trace report.json      print a report's iteration history

Exit codes follow the design loop: 0 when the run converged with a
distance to instability of at least one (the whole box is covered), 2 when
it completed without that margin, 3 when it aborted.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .analysis import hinf_norm, spectral_abscissa
from .design import (
    grid_certify,
    load_report,
    run_dynamic_inner_approximation,
    write_history_csv,
    write_report,
)
from .exceptions import SynthesisFailureError, WellPosednessError
from .lft import close_controller, close_uncertainty, closed_loop_a, realize_controller
from .problem import load_problem
from .worstcase import (
    InstabilityFound,
    destabilize,
    distance_to_instability,
    worst_performance,
)

__all__ = ["main"]


def _add_common(parser):
    parser.add_argument("--seed", type=int, default=None,
                        help="override the problem's random seed")
    parser.add_argument("--starts", type=int, default=None,
                        help="random starts per worst-case search")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log solver progress")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="robsyn",
        description="robust structured controller synthesis over parameter boxes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="run the scenario accumulation design loop")
    p.add_argument("problem", help="problem file (JSON)")
    p.add_argument("--eps", type=float, default=None,
                   help="relative certification gap (default from the problem file)")
    p.add_argument("--max-outer", type=int, default=None,
                   help="outer iteration budget")
    p.add_argument("-o", "--output", default=None, help="report output path (JSON)")
    p.add_argument("--csv", default=None, help="also write the iteration table as CSV")
    _add_common(p)

    p = sub.add_parser("analyze", help="worst-case analysis at a fixed controller")
    p.add_argument("problem", help="problem file (JSON)")
    p.add_argument("--report", default=None,
                   help="take the controller from this report instead of kappa0")
    p.add_argument("--level", type=float, default=None,
                   help="also compute the radius at which this norm level is lost")
    _add_common(p)

    p = sub.add_parser("certify", help="brute-force grid check of a designed controller")
    p.add_argument("problem", help="problem file (JSON)")
    p.add_argument("--report", required=True, help="report produced by 'synth'")
    p.add_argument("--grid", type=int, default=None,
                   help="grid points per axis (default from the problem file)")
    p.add_argument("--level", type=float, default=None,
                   help="performance level to certify (default: the report's v_upper)")
    _add_common(p)

    p = sub.add_parser("trace", help="print the iteration history of a report")
    p.add_argument("report", help="report file (JSON)")
    p.add_argument("--csv", default=None, help="write the table as CSV")

    return parser


def _closed_loop(problem, kappa):
    controller = realize_controller(problem.cstructure, kappa)
    return close_controller(problem.plant, controller)


def _kappa_from(problem, report_path):
    if report_path is not None:
        return load_report(report_path).kappa
    if problem.kappa0 is not None:
        return problem.kappa0
    return np.zeros(problem.cstructure.n_params)


def _cmd_synth(args):
    problem = load_problem(args.problem)
    report = run_dynamic_inner_approximation(
        problem, eps=args.eps, seed=args.seed,
        max_outer=args.max_outer, starts=args.starts,
    )
    print(f"status        {report.status}" + (f" ({report.reason})" if report.reason else ""))
    print(f"v_star        {report.v_star:.6g}")
    print(f"v_upper       {report.v_upper:.6g}")
    print(f"alpha_star    {report.alpha_star:.6g}")
    print(f"d_star        {report.d_star:.6g}")
    print(f"h_star        {report.h_star:.6g}")
    print(f"scenarios     {len(report.scenarios)}")
    print(f"iterations    {len(report.iterations)}")
    if args.output:
        write_report(report, args.output)
        print(f"report        {args.output}")
    if args.csv:
        write_history_csv(report, args.csv)
        print(f"history       {args.csv}")
    return report.exit_code


def _cmd_analyze(args):
    problem = load_problem(args.problem)
    kappa = _kappa_from(problem, args.report)
    try:
        M = _closed_loop(problem, kappa)
    except WellPosednessError as exc:
        print(f"controller loop is ill-posed: {exc}", file=sys.stderr)
        return 3

    m = problem.structure.n_params
    alpha0 = spectral_abscissa(closed_loop_a(M, problem.structure, np.zeros(m))).alpha
    print(f"nominal alpha   {alpha0:.6g}")
    if alpha0 < 0:
        norm0 = hinf_norm(close_uncertainty(M, problem.structure, np.zeros(m)).t_zw).hinf
        print(f"nominal norm    {norm0:.6g}")

    wc = destabilize(M, problem.structure, seed=args.seed or problem.options.seed,
                     n_random=args.starts or problem.options.starts)
    print(f"worst alpha     {wc.value:.6g} at {wc.delta.tolist()}")
    if wc.value >= 0:
        print("destabilizing point found; skipping the performance search")
        return 2

    try:
        perf = worst_performance(M, problem.structure,
                                 seed=args.seed or problem.options.seed,
                                 n_random=args.starts or problem.options.starts)
        print(f"worst norm      {perf.value:.6g} at {perf.delta.tolist()}")
    except InstabilityFound as found:
        print(f"instability during performance search at {found.delta.tolist()}")
        return 2

    dist = distance_to_instability(M, problem.structure,
                                   seed=args.seed or problem.options.seed)
    print(f"d_star          {dist.radius:.6g}")
    if args.level is not None:
        from .worstcase import performance_radius

        rad = performance_radius(M, problem.structure, args.level,
                                 seed=args.seed or problem.options.seed)
        print(f"radius at {args.level:g}  {rad.radius:.6g}")
    return 0


def _cmd_certify(args):
    problem = load_problem(args.problem)
    report = load_report(args.report)
    level = args.level if args.level is not None else report.v_upper
    grid = args.grid if args.grid is not None else problem.options.grid
    try:
        M = _closed_loop(problem, report.kappa)
    except WellPosednessError as exc:
        print(f"controller loop is ill-posed: {exc}", file=sys.stderr)
        return 3
    cert = grid_certify(M, problem.structure, level, points_per_axis=grid)
    verdict = "certified" if cert.certified else "NOT certified"
    print(f"{verdict} at level {cert.level:.6g} "
          f"({cert.n_points} points, {cert.points_per_axis} per axis)")
    print(f"worst alpha  {cert.worst_alpha:.6g} at {cert.worst_alpha_delta.tolist()}")
    print(f"worst norm   {cert.worst_norm:.6g} at {cert.worst_norm_delta.tolist()}")
    if cert.n_unstable:
        print(f"unstable at  {cert.n_unstable} grid points")
    return 0 if cert.certified else 2


def _cmd_trace(args):
    report = load_report(args.report)
    print(f"{'iter':>4}  {'scenarios':>9}  {'v_star':>12}  {'alpha_star':>12}  {'v_upper':>12}")
    for row in report.iterations:
        print(f"{row['iter']:>4}  {row.get('n_scenarios', 0):>9}  "
              f"{row['v_star']:>12.6g}  {row['alpha_star']:>12.6g}  {row['v_upper']:>12.6g}")
    print(f"status {report.status}; v_star {report.v_star:.6g}; "
          f"v_upper {report.v_upper:.6g}; d_star {report.d_star:.6g}; "
          f"h_star {report.h_star:.6g}")
    if args.csv:
        write_history_csv(report, args.csv)
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "certify":
            return _cmd_certify(args)
        if args.command == "trace":
            return _cmd_trace(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SynthesisFailureError as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return 3
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
