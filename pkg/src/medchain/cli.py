"""Command-line entry point: ``medchain simulate | audit | verify-chain``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import MedchainError, ScenarioError
from .scenario import load_scenario
from .sim import EXIT_INPUT_ERROR, EXIT_OK, audit, run_scenario, verify_chain


def _simulate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        result = run_scenario(scenario, Path(args.out), seed=args.seed)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except (MedchainError, OSError) as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    print(json.dumps(result.report, indent=2, sort_keys=True))
    return EXIT_OK


def _audit(args) -> int:
    report = audit(args.ledger, args.cloud, args.authorities)
    sys.stdout.write(report.text())
    return report.exit_code


def _verify(args) -> int:
    report = verify_chain(args.ledger, args.authorities)
    sys.stdout.write(report.text())
    return report.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="medchain",
                                     description="Remote patient monitoring ledger simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and write ledger, logs and cloud blocks")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.set_defaults(func=_simulate)

    p = sub.add_parser("audit", help="verify the chain and every anchored cloud block")
    p.add_argument("--ledger", required=True)
    p.add_argument("--cloud", required=True)
    p.add_argument("--authorities", default=None,
                   help="authority key file (default: authorities.json next to the ledger)")
    p.set_defaults(func=_audit)

    p = sub.add_parser("verify-chain", help="check hash links, heights and authority signatures")
    p.add_argument("--ledger", required=True)
    p.add_argument("--authorities", default=None)
    p.set_defaults(func=_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT_ERROR if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
