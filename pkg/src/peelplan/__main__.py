"""Command-line entry point for the support-removal planner."""

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

import structlog

from peelplan.config.settings import CheckerMode, JobConfig, Settings, settings
from peelplan.errors import ConfigError
from peelplan.models.plan import PlanDocument
from peelplan.models.state import PlanStatus

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

logger = structlog.get_logger()


def configure_logging(app_settings: Settings) -> None:
    """Configure stdlib logging and structlog."""
    level = logging.DEBUG if app_settings.app.debug else app_settings.app.log_level.upper()

    # Configure basic logging first; stdout carries reports
    logging.basicConfig(format="%(message)s", stream=sys.stderr, level=level, force=True)

    renderer = (
        structlog.dev.ConsoleRenderer()
        if app_settings.app.log_format == "console"
        else structlog.processors.JSONRenderer()
    )

    # Configure structured logging
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            renderer,
        ],
        wrapper_class=structlog.stdlib.BoundLogger,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peelplan",
        description="Plan support removal for additively manufactured parts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="compute a removal plan for a job file")
    plan.add_argument("config", type=Path, help="job configuration (JSON)")
    plan.add_argument("--debug-fields", action="store_true", help="dump overlap fields as VTK")
    plan.add_argument("--exact-tsp", action="store_true", help="exact tour for small rounds")
    plan.add_argument(
        "--mode",
        choices=[m.value for m in CheckerMode],
        help="collision checker used by the path planner",
    )
    plan.add_argument("--output-dir", type=Path, help="override the job's output directory")

    validate = sub.add_parser("validate", help="replay a plan against its job")
    validate.add_argument("plan", type=Path, help="plan.json written by 'plan'")
    validate.add_argument("config", type=Path, help="job configuration (JSON)")
    validate.add_argument(
        "--refine",
        type=int,
        default=1,
        help="re-classify fracture configurations on a grid this many times finer",
    )
    return parser


def apply_overrides(job: JobConfig, args: argparse.Namespace) -> JobConfig:
    """Fold command-line flags into the job configuration."""
    update = {}
    if args.debug_fields:
        update["contact"] = job.contact.model_copy(update={"debug_fields": True})
    if args.exact_tsp:
        update["sequencing"] = job.sequencing.model_copy(update={"exact_tsp": True})
    if args.mode:
        update["planner"] = job.planner.model_copy(update={"mode": CheckerMode(args.mode)})
    if args.output_dir:
        update["output_dir"] = args.output_dir
    return job.model_copy(update=update) if update else job


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line; returns the process exit code."""
    args = build_parser().parse_args(argv)
    configure_logging(settings)

    # Imported late so logging is configured before the workflow is built
    from peelplan.planner import SupportRemovalPlanner

    try:
        job = JobConfig.from_file(args.config, settings)
        planner = SupportRemovalPlanner(settings)

        if args.command == "plan":
            job = apply_overrides(job, args)
            document = planner.run(job)
            if document.status == PlanStatus.FAILED:
                logger.error("Planning failed", error=document.error)
                return EXIT_FAILED
            print(f"{document.verdict.value if document.verdict else 'none'}")
            return EXIT_OK

        if args.refine < 1:
            raise ConfigError("--refine must be at least 1")
        plan = PlanDocument.from_file(args.plan)
        report = planner.validate(plan, job, refine=args.refine)
        sys.stdout.write(report.to_json())
        return EXIT_OK

    except ConfigError as e:
        logger.error("Invalid configuration", error=str(e))
        return EXIT_CONFIG
    except Exception as e:
        logger.exception("Unexpected error", error=str(e))
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
