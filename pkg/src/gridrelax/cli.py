"""Command-line front end: solve relaxations, certify gaps, run verification.

Exit codes: 0 success, 1 parse/validation problem, 2 solver failure,
3 verification failure.  GRIDRELAX_TOL overrides the certification
tolerance applied to solver results.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import analysis, matpower
from .ac import OracleDomainError, OracleNoFeasible, grid_oracle
from .network import errors, validate
from .optmodel import export_text
from .relaxations import ModelUnsoundError, build
from .solver import SolveOptions, solve

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SOLVER = 2
EXIT_VERIFY = 3

FIXTURES = ("case3_base", "case3_tight")


def _solve_options() -> SolveOptions:
    opts = SolveOptions()
    env = os.environ.get("GRIDRELAX_TOL")
    if env:
        tol = float(env)
        opts = SolveOptions(
            feastol=min(opts.feastol, tol),
            abstol=min(opts.abstol, tol),
            reltol=min(opts.reltol, tol),
            report_tol=tol,
        )
    return opts


def _load_network(case: str):
    if case in FIXTURES:
        text = matpower.fixture_text(case)
        name = case
    else:
        path = Path(case)
        if not path.exists():
            raise matpower.CaseError(f"case file not found: {case}")
        text = path.read_text()
        name = path.stem
    net = matpower.to_network(matpower.parse_case(text))
    bad = errors(validate(net))
    if bad:
        raise matpower.CaseError(
            "invalid network: " + "; ".join(str(d) for d in bad)
        )
    return name, net


def cmd_solve(args) -> int:
    try:
        _, net = _load_network(args.case)
        model, _ = build(net, args.relaxation)
    except (matpower.CaseError, ModelUnsoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.export:
        Path(args.export).write_text(export_text(model))
    res = solve(model, _solve_options())
    print(f"status {res.status}")
    if res.status == "optimal":
        print(f"objective {res.objective:.4f} $/h")
        return EXIT_OK
    print(f"detail: {res.message}", file=sys.stderr)
    return EXIT_SOLVER


def cmd_gap(args) -> int:
    try:
        name, net = _load_network(args.case)
    except (matpower.CaseError, ModelUnsoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    if args.ac_ref is not None:
        reference, provenance = args.ac_ref, analysis.USER_SUPPLIED
    else:
        try:
            _, cost = grid_oracle(net, resolution=args.oracle_resolution,
                                  refine_rounds=args.oracle_rounds)
        except OracleDomainError as exc:
            print(f"error: {exc}; supply --ac-ref instead", file=sys.stderr)
            return EXIT_INPUT
        except OracleNoFeasible as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        reference, provenance = cost, analysis.ORACLE

    try:
        report = analysis.compute_gaps(net, name, reference, provenance, _solve_options())
    except ModelUnsoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(report.table())
    payload = json.dumps(report.to_dict(), indent=2)
    if args.json:
        Path(args.json).write_text(payload + "\n")
    else:
        print(payload)
    if any(r.status != "optimal" for r in report.relaxations):
        return EXIT_SOLVER
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        _, net = _load_network(args.case)
    except (matpower.CaseError, ModelUnsoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        outcomes = analysis.run_verification(net, samples=args.samples, seed=args.seed)
    except (OracleDomainError, ModelUnsoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    failed = False
    for o in outcomes:
        mark = "PASS" if o.passed else "FAIL"
        print(f"{mark}  {o.name}: {o.detail}")
        failed |= not o.passed
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gridrelax",
        description="Convex relaxations of extended AC power flow: solve, "
        "certify optimality gaps, verify the relaxation hierarchy.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="build and solve one relaxation")
    sp.add_argument("case", help="case file path, or embedded fixture name "
                    f"({', '.join(FIXTURES)})")
    sp.add_argument("--relaxation", required=True, choices=["soc", "nf", "cp", "th"])
    sp.add_argument("--export", help="write the built model as text to this path")
    sp.set_defaults(func=cmd_solve)

    gp = sub.add_parser("gap", help="optimality gaps of all four relaxations")
    gp.add_argument("case")
    ref = gp.add_mutually_exclusive_group(required=True)
    ref.add_argument("--ac-ref", type=float, help="AC reference objective in $/h")
    ref.add_argument("--oracle", action="store_true",
                     help="compute the reference with the grid oracle (<= 4 buses)")
    gp.add_argument("--json", help="write the JSON report to this path")
    gp.add_argument("--oracle-resolution", type=int, default=21)
    gp.add_argument("--oracle-rounds", type=int, default=3)
    gp.set_defaults(func=cmd_gap)

    vp = sub.add_parser("verify", help="containment/tightness verification suite")
    vp.add_argument("case")
    vp.add_argument("--samples", type=int, default=1000)
    vp.add_argument("--seed", type=int, default=0)
    vp.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
