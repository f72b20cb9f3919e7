"""Counter-based random streams keyed by what a draw is for.

Every stream is a Philox generator whose key is derived from
(seed, block, step, purpose) through numpy's SeedSequence. Replicates are
grouped into fixed-size blocks; the i-th draw of a stream belongs to the
i-th target (or particle) of the block in replicate-major order. Because
neither the keys nor the block layout depend on the number of worker
threads, results are bit-identical at any thread count.
"""
from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

logger = logging.getLogger("rng")

T = TypeVar("T")


class Purpose(enum.IntEnum):
    INITIAL = 0
    SURVIVAL = 1
    SPAWN = 2
    MOVE = 3
    IMMIGRATION = 4
    PLACEMENT = 5
    SELECTION = 6
    KEEP = 7
    MUTATION = 8
    BIRTH = 9
    SHUFFLE = 10


def stream(seed: int, block: int, step: int, purpose: Purpose) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seeds must be nonnegative integers")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(block), int(step), int(purpose)))
    return np.random.Generator(np.random.Philox(seq))


class Streams:
    """Stream factory for one block of replicates."""

    def __init__(self, seed: int, block: int):
        self.seed = seed
        self.block = block

    def __call__(self, step: int, purpose: Purpose) -> np.random.Generator:
        return stream(self.seed, self.block, step, purpose)


def block_sizes(total: int, block_size: int) -> list[int]:
    if total < 0 or block_size < 1:
        raise ValueError("need a nonnegative total and a positive block size")
    full, rest = divmod(total, block_size)
    return [block_size] * full + ([rest] if rest else [])


def run_blocks(
    fn: Callable[[Streams, int], T], seed: int, total: int, block_size: int, workers: int = 1
) -> list[T]:
    """Apply ``fn(streams, size)`` to every block and return results in block order."""
    sizes = block_sizes(total, block_size)
    jobs = [(Streams(seed, b), size) for b, size in enumerate(sizes)]
    logger.debug(f"{len(jobs)} blocks of up to {block_size} replicates on {workers} workers")
    if workers <= 1 or len(jobs) <= 1:
        return [fn(s, size) for s, size in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
