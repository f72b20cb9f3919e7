import argparse
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from app.config import settings
from app.models.schemas import RunConfig
from app.services.reporting import output_dir

logger = logging.getLogger("cli")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    """Bad command line or configuration; maps to exit code 2."""


def add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="path to a JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="overrides engine.seed")
    parser.add_argument("--out", default=None, help="output directory (overrides output.directory)")
    parser.add_argument("--workers", type=int, default=None, help="threads for replicate blocks")


def load_config(path: str) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    return RunConfig.model_validate_json(text)


def resolve_seed(args: argparse.Namespace, config: RunConfig) -> int:
    seed = args.seed if args.seed is not None else config.engine.seed
    if seed is None:
        raise UsageError("seed required")
    if seed < 0 or seed >= 2**64:
        raise UsageError("seed must be an unsigned 64-bit integer")
    return seed


def resolve_out(args: argparse.Namespace, config: RunConfig) -> Path:
    return output_dir(args.out or config.output.directory or settings.OUTPUT_DIR)


def apply_workers(args: argparse.Namespace) -> None:
    if args.workers is not None:
        if args.workers < 1:
            raise UsageError("--workers must be positive")
        settings.WORKERS = args.workers


def usage_failure(command: str, exc: Exception) -> int:
    """One-line message on stderr for config and validation problems."""
    if isinstance(exc, ValidationError):
        message = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors())
    else:
        message = str(exc)
    logger.error(f"{command}: {message}")
    print(f"error: {message}", file=sys.stderr)
    return EXIT_USAGE
