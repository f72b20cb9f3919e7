import argparse
import logging

from pydantic import ValidationError

from app.models.schemas import ExperimentReport, ExperimentSpec
from app.routers.common import (
    EXIT_FAILED,
    EXIT_OK,
    UsageError,
    add_common_flags,
    apply_workers,
    load_config,
    resolve_out,
    resolve_seed,
    usage_failure,
)
from app.services.harness import CHECKS, run_suite
from app.services.reporting import write_csv, write_json

logger = logging.getLogger("cli.verify")

SELF_TEST_BIAS = 1.0


def add_parser(subparsers) -> None:
    parser = subparsers.add_parser("verify", help="run the statistical verification suite")
    add_common_flags(parser)
    parser.add_argument("--checks", default=None, help=f"comma-separated subset of: {', '.join(CHECKS)}")
    parser.add_argument("--self-test", action="store_true", help="perturb every estimator; the suite must fail")
    parser.set_defaults(handler=run)


def parse_checks(raw: str | None) -> list[str] | None:
    if raw is None:
        return None
    ids = [c.strip() for c in raw.split(",") if c.strip()]
    unknown = [c for c in ids if c not in CHECKS]
    if unknown or not ids:
        raise UsageError(f"unknown check id(s): {', '.join(unknown) or '(empty list)'}")
    return ids


def report_rows(report: ExperimentReport):
    for check in report.checks:
        for row in check.rows:
            yield [check.id, check.verdict, row.label, row.statistic, row.oracle, row.se, row.bound, row.passed]


def run(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
        seed = resolve_seed(args, config)
        apply_workers(args)
        check_ids = parse_checks(args.checks)
        engine = config.engine
        spec = ExperimentSpec(
            scenario=config.scenario,
            seed=seed,
            scheme=engine.scheme,
            epsilon=engine.epsilon,
            test_functions=engine.test_functions,
            sizes=config.verify,
            inject_bias=SELF_TEST_BIAS if args.self_test else 0.0,
        )
        out = resolve_out(args, config)
        report = run_suite(spec, check_ids)
    except (ValidationError, ValueError) as e:
        return usage_failure("verify", e)
    if "json" in config.output.formats:
        write_json(out / "report.json", report)
    if "csv" in config.output.formats:
        write_csv(
            out / "report.csv",
            ["check", "verdict", "comparison", "statistic", "oracle", "se", "bound", "passed"],
            report_rows(report),
        )
    for check in report.checks:
        print(f"{check.id}: {'PASS' if check.verdict else 'FAIL'} ({check.comparisons} comparisons) {check.detail}".rstrip())
    if not report.passed:
        failed = [c.id for c in report.checks if not c.verdict]
        logger.warning(f"verification failed: {', '.join(failed)}")
        return EXIT_FAILED
    return EXIT_OK
