"""Finite-state measures, kernels and the transforms built on them.

Everything is a dense float64 vector or matrix over a small labelled state
space. Instances are immutable: arrays are copied on construction and marked
read-only, so they can be shared freely between threads.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike

# Tolerance for every identity that holds exactly in real arithmetic.
EXACT_TOL = 1e-12


class SpaceMismatchError(ValueError):
    """Raised when two objects live on different state spaces."""


def _frozen(values: ArrayLike, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-dimensional array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("values must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StateSpace:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if not labels:
            raise ValueError("a state space needs at least one state")
        if len(set(labels)) != len(labels):
            raise ValueError(f"state labels must be distinct: {labels}")
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    @classmethod
    def of_size(cls, size: int) -> "StateSpace":
        return cls(tuple(str(i) for i in range(size)))

    def index(self, label: str) -> int:
        return self.labels.index(str(label))


def _check_space(a: StateSpace, b: StateSpace, what: str) -> None:
    if a != b:
        raise SpaceMismatchError(f"{what}: {a.labels} vs {b.labels}")


def values_on(f: ArrayLike | "Potential", space: StateSpace) -> np.ndarray:
    """Return the value vector of ``f`` after checking it fits ``space``."""
    if isinstance(f, Potential):
        _check_space(f.space, space, "function space")
        return f.values
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full(space.size, float(arr))
    if arr.shape != (space.size,):
        raise SpaceMismatchError(
            f"function of length {arr.shape} does not fit a space of size {space.size}"
        )
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    space: StateSpace
    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights, 1)
        if w.shape != (self.space.size,):
            raise SpaceMismatchError(
                f"{w.shape[0]} weights for a space of size {self.space.size}"
            )
        if np.any(w < 0):
            raise ValueError("measure weights must be nonnegative")
        object.__setattr__(self, "weights", w)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.space.labels, self.weights.tolist()))

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        _check_space(self.space, other.space, "measure sum")
        return DiscreteMeasure(self.space, self.weights + other.weights)

    def scaled(self, factor: float) -> "DiscreteMeasure":
        if factor < 0:
            raise ValueError("cannot scale a measure by a negative factor")
        return DiscreteMeasure(self.space, self.weights * factor)

    @classmethod
    def zero(cls, space: StateSpace) -> "DiscreteMeasure":
        return cls(space, np.zeros(space.size))


class ProbabilityMeasure(DiscreteMeasure):
    def __post_init__(self):
        super().__post_init__()
        total = float(self.weights.sum())
        if abs(total - 1.0) > EXACT_TOL:
            raise ValueError(f"probability weights sum to {total!r}, not 1")


@dataclass(frozen=True, eq=False)
class Potential:
    """Strictly positive bounded function, e.g. G_n = e_n H_n."""

    space: StateSpace
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values, 1)
        if v.shape != (self.space.size,):
            raise SpaceMismatchError(f"{v.shape[0]} values for a space of size {self.space.size}")
        if np.any(v <= 0):
            raise ValueError("potential values must be strictly positive")
        object.__setattr__(self, "values", v)

    @property
    def g_minus(self) -> float:
        return float(self.values.min())

    @property
    def g_plus(self) -> float:
        return float(self.values.max())

    @property
    def is_constant(self) -> bool:
        return self.g_plus - self.g_minus <= EXACT_TOL

    @classmethod
    def constant(cls, space: StateSpace, value: float) -> "Potential":
        return cls(space, np.full(space.size, float(value)))


@dataclass(frozen=True, eq=False)
class WeightedKernel:
    source: StateSpace
    target: StateSpace
    entries: np.ndarray

    def __post_init__(self):
        e = _frozen(self.entries, 2)
        if e.shape != (self.source.size, self.target.size):
            raise SpaceMismatchError(
                f"kernel shape {e.shape} does not match spaces "
                f"({self.source.size}, {self.target.size})"
            )
        if np.any(e < 0):
            raise ValueError("kernel entries must be nonnegative")
        object.__setattr__(self, "entries", e)

    @property
    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    def __call__(self, f: ArrayLike) -> np.ndarray:
        """Function action K(f)(x) = sum_y K(x, y) f(y)."""
        return self.entries @ values_on(f, self.target)

    @classmethod
    def identity(cls, space: StateSpace) -> "MarkovKernel":
        return MarkovKernel(space, space, np.eye(space.size))


class MarkovKernel(WeightedKernel):
    def __post_init__(self):
        super().__post_init__()
        worst = float(np.max(np.abs(self.entries.sum(axis=1) - 1.0)))
        if worst > EXACT_TOL:
            raise ValueError(f"kernel rows must sum to 1 (worst deviation {worst:.3e})")

    def row(self, x: int) -> ProbabilityMeasure:
        return ProbabilityMeasure(self.target, self.entries[x])

    @classmethod
    def rank_one(cls, pi: ProbabilityMeasure) -> "MarkovKernel":
        return cls(pi.space, pi.space, np.tile(pi.weights, (pi.space.size, 1)))


def integrate(mu: DiscreteMeasure, f: ArrayLike | Potential) -> float:
    return float(mu.weights @ values_on(f, mu.space))


def apply_kernel(mu: DiscreteMeasure, kernel: WeightedKernel) -> DiscreteMeasure:
    """Dual action (mu K)(y) = sum_x mu(x) K(x, y)."""
    _check_space(mu.space, kernel.source, "apply_kernel")
    out = mu.weights @ kernel.entries
    if isinstance(mu, ProbabilityMeasure) and isinstance(kernel, MarkovKernel):
        return ProbabilityMeasure(kernel.target, out / out.sum())
    return DiscreteMeasure(kernel.target, out)


def compose(first: WeightedKernel, second: WeightedKernel) -> WeightedKernel:
    _check_space(first.target, second.source, "compose")
    entries = first.entries @ second.entries
    if isinstance(first, MarkovKernel) and isinstance(second, MarkovKernel):
        entries = entries / entries.sum(axis=1, keepdims=True)
        return MarkovKernel(first.source, second.target, entries)
    return WeightedKernel(first.source, second.target, entries)


def kernel_power(kernel: MarkovKernel, k: int) -> MarkovKernel:
    if k < 0:
        raise ValueError("kernel power must be nonnegative")
    out: WeightedKernel = WeightedKernel.identity(kernel.source)
    for _ in range(k):
        out = compose(out, kernel)
    return out  # type: ignore[return-value]


def scale_rows(potential: Potential, kernel: WeightedKernel) -> WeightedKernel:
    """The integral operator G(x) K(x, dy)."""
    _check_space(potential.space, kernel.source, "scale_rows")
    return WeightedKernel(kernel.source, kernel.target, potential.values[:, None] * kernel.entries)


def normalize(mu: DiscreteMeasure) -> ProbabilityMeasure:
    total = mu.mass
    if total <= 0:
        raise ValueError("cannot normalize a measure with zero mass")
    return ProbabilityMeasure(mu.space, mu.weights / total)


def dirac(space: StateSpace, x: int) -> ProbabilityMeasure:
    w = np.zeros(space.size)
    w[x] = 1.0
    return ProbabilityMeasure(space, w)


def uniform(space: StateSpace) -> ProbabilityMeasure:
    return ProbabilityMeasure(space, np.full(space.size, 1.0 / space.size))


def boltzmann_gibbs(potential: Potential, eta: ProbabilityMeasure) -> ProbabilityMeasure:
    _check_space(potential.space, eta.space, "boltzmann_gibbs")
    w = potential.values * eta.weights
    return ProbabilityMeasure(eta.space, w / w.sum())


def osc(f: ArrayLike) -> float:
    arr = np.asarray(f, dtype=float)
    return float(arr.max() - arr.min())


def tv_distance(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    _check_space(mu.space, nu.space, "tv_distance")
    return 0.5 * float(np.abs(mu.weights - nu.weights).sum())


def dobrushin(kernel: WeightedKernel) -> float:
    """Largest total variation distance between two rows of a Markov kernel."""
    rows = kernel.entries
    worst = 0.0
    for i in range(rows.shape[0]):
        worst = max(worst, 0.5 * float(np.abs(rows[i] - rows).sum(axis=1).max()))
    return min(worst, 1.0)


def stationary_distribution(kernel: MarkovKernel) -> ProbabilityMeasure:
    """Solve pi M = pi, sum(pi) = 1 by least squares."""
    d = kernel.source.size
    a = np.vstack((kernel.entries.T - np.eye(d), np.ones((1, d))))
    b = np.zeros(d + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return ProbabilityMeasure(kernel.source, pi / pi.sum())


def as_probability(space: StateSpace, weights: Sequence[float]) -> ProbabilityMeasure:
    return normalize(DiscreteMeasure(space, np.asarray(weights, dtype=float)))
