"""CSV and JSON writers with machine-exact number formatting."""
from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from pydantic import BaseModel

logger = logging.getLogger("reporting")


def fmt(value) -> str:
    """Shortest round-trip text for floats, plain text otherwise."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def output_dir(path: str | Path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    count = 0
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
            count += 1
    logger.info(f"wrote {path} ({count} rows)")
    return path


def write_json(path: Path, payload: BaseModel) -> Path:
    path.write_text(payload.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"wrote {path}")
    return path
