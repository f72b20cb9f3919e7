"""Inverse-CDF samplers shared by the simulator and the particle engine."""
from __future__ import annotations

import numpy as np


def cdf_table(probabilities: np.ndarray) -> np.ndarray:
    """Row-wise cumulative sums with the last column pinned to exactly 1."""
    cdf = np.cumsum(np.asarray(probabilities, dtype=float), axis=-1)
    cdf = cdf / cdf[..., -1:]
    cdf[..., -1] = 1.0
    return cdf


def categorical(probabilities: np.ndarray, size: int | tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    cdf = cdf_table(probabilities)
    return np.searchsorted(cdf, rng.random(size), side="right")


def categorical_rows(cdf: np.ndarray, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Draw from row ``rows[i]`` of a CDF table with uniform ``u[i]``."""
    picked = (u[..., None] >= cdf[rows]).sum(axis=-1)
    return np.minimum(picked, cdf.shape[-1] - 1)


def multinomial_indices(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """N draws per row from the weights of that row.

    One sorted uniform batch per row; returned indices are sorted too, so
    callers that care about positions must shuffle.
    """
    weights = np.asarray(weights, dtype=float)
    rows, n = weights.shape
    cdf = cdf_table(weights)
    u = np.sort(rng.random((rows, n)), axis=1)
    out = np.empty((rows, n), dtype=np.int64)
    for r in range(rows):
        out[r] = np.searchsorted(cdf[r], u[r], side="right")
    return np.minimum(out, n - 1)
