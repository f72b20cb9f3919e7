import argparse
import logging
import sys

from app.config import settings
from app.routers import exact, particles, simulate, verify
from app.routers.common import EXIT_USAGE

logger = logging.getLogger("cli")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="branchflow",
        description="Spatial branching processes with immigration: exact flows, simulation, particle approximations.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for router in (exact, simulate, particles, verify):
        router.add_parser(subparsers)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 on --help
        return int(e.code or 0)
    try:
        return args.handler(args)
    except Exception:
        logger.exception(f"unhandled error in '{args.command}'")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
