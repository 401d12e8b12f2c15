"""Command-line front end: ``reconfig run|validate-strategy|check-compat|compare``."""

from __future__ import annotations

import argparse
import random
import sys

from .compat import check_compat
from .errors import ParseError, ReconfigError, ValidationError
from .scenario import (
    build_container,
    compare_strategies,
    load_scenario,
    render_comparison,
    run_scenario,
    schedule_workload,
    write_artifacts,
)
from .strategy import REPLACED, REPLACING, validate

EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_PARSE = 0, 1, 2, 3


def cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    result = run_scenario(scenario, strategy=args.strategy, seed=args.seed)
    if args.out:
        write_artifacts(result, args.out)
    if args.trace:
        sys.stdout.write(result.trace)
    if result.report is not None:
        sys.stdout.write(result.report.render())
    sys.stdout.write(result.metrics.render())
    for line in result.errors:
        print(f"workload error: {line}", file=sys.stderr)
    report = result.report
    if report is None or report.completed:
        return EXIT_OK
    return EXIT_INVALID if report.failed_step in ("compat", "instantiate") else EXIT_FAILED


def cmd_validate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.file)
    if not scenario.strategies:
        print(f"{args.file}: no [strategy] sections", file=sys.stderr)
        return EXIT_INVALID
    status = EXIT_OK
    for strategy in scenario.strategies:
        result = validate(strategy)
        print(f"strategy {strategy.name}: {result.render().rstrip()}")
        if not result.valid:
            status = EXIT_INVALID
    return status


def cmd_check_compat(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    plan = scenario.plan
    if plan is None or REPLACED not in plan.inputs or REPLACING not in plan.inputs:
        print("scenario has no replacement plan to check", file=sys.stderr)
        return EXIT_INVALID
    container = build_container(scenario)
    schedule_workload(container, scenario, random.Random(scenario.seed), [])
    container.advance(plan.trigger)
    report = check_compat(container, plan.inputs[REPLACED], plan.inputs[REPLACING])
    sys.stdout.write(report.render())
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_compare(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    names = [s.strip() for s in args.strategies.split(",") if s.strip()]
    rows = compare_strategies(scenario, names, seed=args.seed)
    sys.stdout.write(render_comparison(rows))
    return EXIT_OK if all(outcome in ("Completed", "NoPlan") for _, outcome, _ in rows) else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reconfig", description="Simulate module reconfiguration strategies.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario with its reconfiguration plan")
    run.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
    run.add_argument("--strategy", help="override the plan's strategy (F, NI, I, INI or a custom name)")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--out", help="directory for trace.log, metrics.json and the report")
    run.add_argument("--trace", action="store_true", help="also print the trace")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate-strategy", help="validate the [strategy] sections of a file")
    val.add_argument("--file", required=True)
    val.set_defaults(func=cmd_validate)

    cc = sub.add_parser("check-compat", help="check replacement restrictions at the plan's trigger tick")
    cc.add_argument("--scenario", required=True)
    cc.set_defaults(func=cmd_check_compat)

    cmp_ = sub.add_parser("compare", help="run several strategies and tabulate metrics")
    cmp_.add_argument("--scenario", required=True)
    cmp_.add_argument("--strategies", default="F,NI,I,INI")
    cmp_.add_argument("--seed", type=int)
    cmp_.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ReconfigError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
