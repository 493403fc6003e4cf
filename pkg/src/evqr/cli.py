"""Batch command line: ``evqr solve``, ``evqr gaussian-oracle`` and ``evqr bounds``.

Exit status is 0 on convergence, 2 when the iteration cap is hit first and 1 on
input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence


from .bounds import compute_bounds
from .estimators import b_estimators
from .gaussian import GaussianModel, gaussian_dual_value
from .io import GENERATOR, ingest_csv, make_reference
from .modified import resolve_eta, resolve_radius, run_modified
from .problem import DiscreteProblem, ProblemError
from .projection import ProjectionConfig, Variant
from .trace import SolverConfig, _jsonable
from .vanilla import NewtonError, run_vanilla

log = logging.getLogger("evqr")

EXIT_OK, EXIT_INPUT, EXIT_MAX_ITERS = 0, 1, 2
PROJECTIONS = {"ball": Variant.JOINT_BALL, "box": Variant.COORDINATEWISE_BOX}


class InputError(Exception):
    """Bad command-line input; the message names the offending flag."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default, which is reserved for max-iters here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _auto_or_positive(flag):
    def parse(text):
        if text == "auto":
            return text
        try:
            val = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} must be 'auto' or a positive number") from None
        if not val > 0:
            raise argparse.ArgumentTypeError(f"{flag} must be positive, got {text}")
        return val

    return parse


def _positive_float(text):
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return val


def _names(text):
    return [s.strip() for s in text.split(",") if s.strip()]


def _add_problem_args(p):
    p.add_argument("--input", required=True, help="headed CSV file with covariates and responses")
    p.add_argument("--x-cols", required=True, type=_names, help="comma-separated covariate columns")
    p.add_argument("--y-cols", required=True, type=_names, help="comma-separated response columns")
    p.add_argument(
        "--reference",
        default="standard-gaussian",
        help="uniform-cube, standard-gaussian, or a headed CSV of reference atoms",
    )
    p.add_argument("--m", type=int, default=100, help="number of sampled reference atoms")
    p.add_argument("--epsilon", type=_positive_float, default=1.0)
    p.add_argument("--seed", type=int, default=0, help="seed for the sampled reference")
    p.add_argument("--eta", type=_auto_or_positive("--eta"), default="auto")
    p.add_argument("--radius", type=_auto_or_positive("--radius"), default="auto")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evqr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    solve = sub.add_parser("solve", help="run a solver and emit a JSON trace")
    _add_problem_args(solve)
    solve.add_argument("--mode", choices=["vanilla", "modified"], default="modified")
    solve.add_argument("--projection", choices=sorted(PROJECTIONS), default="ball")
    solve.add_argument("--max-iters", type=int, default=1000)
    solve.add_argument("--tol", type=_positive_float, default=1e-9)
    solve.add_argument("--trace", type=Path, help="write the iterate trace here")
    solve.add_argument("--estimators", type=Path, help="write per-atom B0/B1 estimates here")
    solve.add_argument(
        "--reference-value",
        type=float,
        help="optimal dual value for the gap column (default: the final dual of this run)",
    )

    oracle = sub.add_parser("gaussian-oracle", help="closed-form dual value of a Gaussian model")
    oracle.add_argument("--params", required=True, type=Path, help="JSON parameter file")

    bounds = sub.add_parser("bounds", help="print the theoretical constants as JSON")
    _add_problem_args(bounds)
    return parser


def load_problem(args) -> DiscreteProblem:
    try:
        X, Y = ingest_csv(args.input, args.x_cols, args.y_cols)
    except ProblemError as exc:
        raise InputError(f"--input: {exc}") from None
    try:
        U, a = make_reference(args.reference, args.m, Y.shape[1], args.seed)
    except ProblemError as exc:
        raise InputError(f"--reference: {exc}") from None
    try:
        return DiscreteProblem.from_arrays(U, X, Y, args.epsilon, a=a)
    except ProblemError as exc:
        raise InputError(f"--input: {exc}") from None


def _source_header(args) -> dict:
    return {
        "input": str(args.input),
        "x_cols": list(args.x_cols),
        "y_cols": list(args.y_cols),
        "reference": args.reference,
        "seed": args.seed,
        "generator": GENERATOR,
    }


def _estimator_records(p, prob) -> list[dict]:
    est = b_estimators(p, prob)
    return [
        {
            "i": i,
            "u": prob.U[i],
            "B0": est.B0[i],
            "B1": est.B1[i],
            "degenerate": bool(est.degenerate[i]),
        }
        for i in range(prob.m)
    ]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_solve(args) -> int:
    if args.max_iters < 1:
        raise InputError("--max-iters must be >= 1")
    prob = load_problem(args)
    cfg = SolverConfig(
        epsilon=prob.epsilon,
        eta=args.eta,
        radius=args.radius,
        max_iters=args.max_iters,
        tol=args.tol,
        mode=args.mode,
    )
    last = {}
    if args.mode == "vanilla":
        p, trace = run_vanilla(prob, cfg)
        est_at = p
    else:
        pcfg = ProjectionConfig(radius=resolve_radius(prob, cfg), variant=PROJECTIONS[args.projection])

        def keep(t, step):
            last["step"] = step

        p, trace = run_modified(prob, cfg, pcfg, callback=keep)
        # the pre-projection triple has row marginal exactly a
        est_at = last["step"].pre_projection
    ref = args.reference_value if args.reference_value is not None else trace.rows[-1].dual
    trace.set_reference(ref)
    trace.header["source"] = _source_header(args)
    trace.header["gap_reference"] = {
        "value": ref,
        "kind": "user" if args.reference_value is not None else "final-dual",
    }
    if args.trace:
        args.trace.write_text(trace.dumps() + "\n", encoding="utf-8")
    if args.estimators:
        _write_json(args.estimators, {"rows": _estimator_records(est_at, prob)})
    summary = {
        "mode": args.mode,
        "converged": trace.converged,
        "iterations": trace.rows[-1].t,
        "dual": trace.rows[-1].dual,
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK if trace.converged else EXIT_MAX_ITERS


def cmd_oracle(args) -> int:
    try:
        model = GaussianModel.from_json(args.params)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"--params: {exc}") from None
    print(repr(gaussian_dual_value(model)))
    return EXIT_OK


def cmd_bounds(args) -> int:
    prob = load_problem(args)
    cfg = SolverConfig(eta=args.eta, radius=args.radius)
    radius = resolve_radius(prob, cfg)
    eta = None if args.eta == "auto" else resolve_eta(prob, cfg, radius)[0]
    b = compute_bounds(prob, radius=radius, eta=eta)
    out = b.to_dict()
    out["pl_constant"] = b.pl_constant
    print(json.dumps(_jsonable(out), indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "gaussian-oracle": cmd_oracle, "bounds": cmd_bounds}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"evqr: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ProblemError, NewtonError, FloatingPointError) as exc:
        print(f"evqr: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
