"""Command-line entry point.

    dosim run --scenario FILE [--seed N] [--out DIR] [--format csv|json]
    dosim validate --scenario FILE
    dosim list-attacks
    dosim list-scenarios

``--scenario`` takes a path or the name of a bundled scenario. Exit status is
0 on success, 1 when the scenario does not validate and 2 on any other error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional

from .attacks import TAXONOMY
from .errors import ScenarioError
from .metrics import emit_report
from .scenario import Scenario, bundled_scenarios, load_bundled, load_scenario
from .simulation import run_scenario

log = logging.getLogger("dosim")

EXIT_OK, EXIT_INVALID, EXIT_INTERNAL = 0, 1, 2


def _resolve(ref: str) -> Scenario:
    if os.path.exists(ref):
        return load_scenario(ref)
    if ref in bundled_scenarios():
        return load_bundled(ref)
    raise ScenarioError(f"scenario file {ref!r} not found")


def cmd_run(args) -> int:
    scenario = _resolve(args.scenario)
    seed = scenario.seed if args.seed is None else args.seed
    report, events = run_scenario(scenario, seed)
    ext = "csv" if args.format == "csv" else "json"
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.join(args.out, f"{scenario.name}-{seed}")
    with open(f"{stem}.{ext}", "wb") as fh:
        fh.write(emit_report(report, args.format))
    with open(f"{stem}.log", "w", encoding="utf-8") as fh:
        fh.write(events.text())
    print(f"{stem}.{ext}")
    print(f"{stem}.log sha256={events.digest()}")
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario = _resolve(args.scenario)
    print(f"ok: {scenario.name} ({len(scenario.topology.nodes)} nodes, "
          f"{len(scenario.attacks)} attacks)")
    return EXIT_OK


def cmd_list_attacks(args) -> int:
    for kind, tax in TAXONOMY.items():
        print(f"{kind.value:12s} {tax.attack_type.value} {tax.direction.value} "
              f"{tax.scheme.value} {tax.method.value}")
    return EXIT_OK


def cmd_list_scenarios(args) -> int:
    for name in bundled_scenarios():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dosim", description="Agent-based DoS defence simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write report + event log")
    run.add_argument("--scenario", required=True, help="scenario file or bundled name")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--out", default=".", help="output directory")
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="parse and check a scenario without running it")
    val.add_argument("--scenario", required=True)
    val.set_defaults(func=cmd_validate)

    sub.add_parser("list-attacks", help="print the attack catalog with taxonomy"
                   ).set_defaults(func=cmd_list_attacks)
    sub.add_parser("list-scenarios", help="print the bundled scenario names"
                   ).set_defaults(func=cmd_list_scenarios)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - reported as an internal failure
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
