"""Direct simulation of the target population with spawning and immigration.

One transition applies, in order: survival with probability e_n(x), spawning
of h >= 1 offspring with mean H_n(x), independent moves of every offspring
from its parent's state, and Poisson immigration placed by mu_bar_{n+1}.
The expected occupation measure of this process is the intensity gamma_n
computed by ``exact_flow``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from numpy.typing import ArrayLike

from app.config import settings
from app.services.exact_flow import BranchingModel
from app.services.measure_core import (
    EXACT_TOL,
    DiscreteMeasure,
    MarkovKernel,
    Potential,
    StateSpace,
    normalize,
)
from app.services.rng import Purpose, Streams, run_blocks
from app.services.sampling import categorical, categorical_rows, cdf_table

logger = logging.getLogger("branching_sim")


class PopulationLimitError(ValueError):
    """A replicate outgrew the configured population cap."""


Region = tuple[tuple[float, float], tuple[float, float]]


@dataclass(frozen=True, eq=False)
class SpawnLaw:
    """Law of the offspring count h on {1, ..., K}.

    ``probabilities[..., k]`` is P(h = k + 1); a 2-d table gives one law per
    parent state.
    """

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=float)
        if p.ndim not in (1, 2) or p.shape[-1] < 1:
            raise ValueError("spawn probabilities must be a vector or a per-state table")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > EXACT_TOL):
            raise ValueError("spawn probabilities must be nonnegative and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def two_point(cls, alpha: float) -> "SpawnLaw":
        """P(h=1) = alpha, P(h=2) = 1 - alpha."""
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        return cls(np.array([alpha, 1.0 - alpha]))

    @classmethod
    def single(cls) -> "SpawnLaw":
        return cls(np.array([1.0]))

    def mean(self) -> np.ndarray:
        counts = np.arange(1, self.probabilities.shape[-1] + 1)
        return self.probabilities @ counts

    def sample(self, parents: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        size = parents.shape[0]
        if self.probabilities.ndim == 1:
            return categorical(self.probabilities, size, rng) + 1
        return categorical_rows(cdf_table(self.probabilities), parents, rng.random(size)) + 1


class StepLaw(Protocol):
    """Everything one transition n -> n+1 needs."""

    spawn: SpawnLaw

    def survival(self, states: np.ndarray) -> np.ndarray: ...

    def move(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...

    @property
    def birth_mass(self) -> float: ...

    def place(self, size: int, rng: np.random.Generator) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class FiniteStepLaw:
    survival_probs: np.ndarray
    spawn: SpawnLaw
    kernel: MarkovKernel
    immigration: DiscreteMeasure

    def __post_init__(self):
        e = np.asarray(self.survival_probs, dtype=float)
        if np.any(e < 0) or np.any(e > 1):
            raise ValueError("survival probabilities must lie in [0, 1]")
        object.__setattr__(self, "survival_probs", e)
        object.__setattr__(self, "_cdf", cdf_table(self.kernel.entries))

    def survival(self, states: np.ndarray) -> np.ndarray:
        return self.survival_probs[states]

    def move(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return categorical_rows(self._cdf, states, rng.random(states.shape[0]))

    @property
    def birth_mass(self) -> float:
        return self.immigration.mass

    def place(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if size == 0:
            return np.zeros(0, dtype=np.int64)
        return categorical(normalize(self.immigration).weights, size, rng)


@dataclass(frozen=True, eq=False)
class Population:
    """Targets of a block of replicates, grouped by replicate."""

    owner: np.ndarray
    states: np.ndarray
    replicates: int

    def counts(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.replicates)


def _place_immigrants(law: StepLaw, replicates: int, streams: Streams, step: int) -> Population:
    counts = streams(step, Purpose.IMMIGRATION).poisson(law.birth_mass, size=replicates)
    owner = np.repeat(np.arange(replicates), counts)
    states = law.place(int(counts.sum()), streams(step, Purpose.PLACEMENT))
    return Population(owner, states, replicates)


def step_population(pop: Population, law: StepLaw, streams: Streams, step: int) -> Population:
    """One transition: survival -> spawn -> move -> immigrate."""
    alive = streams(step, Purpose.SURVIVAL).random(pop.owner.shape[0]) < law.survival(pop.states)
    parents, owners = pop.states[alive], pop.owner[alive]
    h = law.spawn.sample(parents, streams(step, Purpose.SPAWN))
    children = np.repeat(parents, h, axis=0)
    moved = law.move(children, streams(step, Purpose.MOVE))
    born = _place_immigrants(law, pop.replicates, streams, step) if law.birth_mass > 0 else None
    owner = np.repeat(owners, h)
    if born is None:
        return Population(owner, moved, pop.replicates)
    owner = np.concatenate([owner, born.owner])
    states = np.concatenate([moved, born.states], axis=0)
    order = np.argsort(owner, kind="stable")
    return Population(owner[order], states[order], pop.replicates)


@dataclass(frozen=True, eq=False)
class FiniteScenario:
    """A finite-state model together with the survival/spawn laws behind G."""

    model: BranchingModel
    survival: tuple[np.ndarray, ...]
    spawn: tuple[SpawnLaw, ...]
    name: str = "custom"

    def __post_init__(self):
        steps = max(len(self.survival), len(self.spawn), len(self.model.potentials))
        for n in range(min(self.model.horizon, steps) + 1):
            e = np.asarray(self._at(self.survival, n), dtype=float)
            h = self._at(self.spawn, n).mean()
            g = self.model.potential(n).values
            if np.any(e < 0) or np.any(e > 1):
                raise ValueError(f"survival probabilities at step {n} must lie in [0, 1]")
            if np.any(np.abs(e * h - g) > EXACT_TOL * np.maximum(1.0, g)):
                raise ValueError(f"e_{n} * H_{n} does not match the potential G_{n}")

    @staticmethod
    def _at(seq: Sequence, n: int):
        return seq[min(n, len(seq) - 1)]

    @property
    def finite(self) -> bool:
        return True

    @property
    def space(self) -> StateSpace:
        return self.model.space(0)

    def initial_law(self) -> FiniteStepLaw:
        """The Poisson field with intensity gamma_0 = mu_0 that starts the process."""
        mu0 = self.model.immigration_at(0)
        return FiniteStepLaw(np.ones(mu0.space.size), SpawnLaw.single(), MarkovKernel.identity(mu0.space), mu0)

    def law(self, n: int) -> FiniteStepLaw:
        return FiniteStepLaw(
            np.asarray(self._at(self.survival, n), dtype=float),
            self._at(self.spawn, n),
            self.model.transition(n),
            self.model.immigration_at(n + 1),
        )


@dataclass(frozen=True, eq=False)
class GaussianScenario:
    """Constant-velocity targets in a planar surveillance region.

    States are [px, py, vx, vy]. Motion is X_n = A X_{n-1} + V_n with
    V_n ~ N(0, Sigma) and no boundary; the region only shapes where
    immigrants appear (uniform position, centred Gaussian velocity).
    """

    A: np.ndarray
    Sigma: np.ndarray
    survival_prob: float
    alpha: float
    mu_rate: float
    region: Region
    velocity_std: float = 1.0
    horizon: int = 50
    name: str = "GAUSS"
    _factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.array(self.A, dtype=float)
        sigma = np.array(self.Sigma, dtype=float)
        if a.shape != (4, 4) or sigma.shape != (4, 4):
            raise ValueError("A and Sigma must be 4x4")
        if not np.allclose(sigma, sigma.T, atol=EXACT_TOL):
            raise ValueError("invalid Sigma: not symmetric")
        w, v = np.linalg.eigh(sigma)
        if w.min() < -EXACT_TOL:
            raise ValueError("invalid Sigma: not positive semidefinite")
        if not 0.0 < self.survival_prob <= 1.0:
            raise ValueError("survival probability must lie in (0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.mu_rate < 0:
            raise ValueError("immigration rate must be nonnegative")
        (x0, x1), (y0, y1) = self.region
        if not (x0 < x1 and y0 < y1):
            raise ValueError("region bounds must be increasing")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "Sigma", sigma)
        object.__setattr__(self, "_factor", v * np.sqrt(np.clip(w, 0.0, None)))

    @property
    def finite(self) -> bool:
        return False

    @property
    def spawn(self) -> SpawnLaw:
        return SpawnLaw.two_point(self.alpha)

    @property
    def potential_value(self) -> float:
        """G = s * E(h) = s (2 - alpha)."""
        return self.survival_prob * float(self.spawn.mean())

    @property
    def birth_mass(self) -> float:
        return self.mu_rate

    def survival(self, states: np.ndarray) -> np.ndarray:
        return np.full(states.shape[0], self.survival_prob)

    def move(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal(states.shape)
        return states @ self.A.T + noise @ self._factor.T

    def place(self, size: int | tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
        shape = (size,) if isinstance(size, int) else tuple(size)
        (x0, x1), (y0, y1) = self.region
        u = rng.random(shape + (2,))
        pos = np.stack([x0 + (x1 - x0) * u[..., 0], y0 + (y1 - y0) * u[..., 1]], axis=-1)
        vel = self.velocity_std * rng.standard_normal(shape + (2,))
        return np.concatenate([pos, vel], axis=-1)

    def initial_law(self) -> "GaussianScenario":
        return self

    def law(self, n: int) -> "GaussianScenario":
        if not 0 <= n < self.horizon:
            raise ValueError(f"no transition out of step {n} (horizon {self.horizon})")
        return self

    def mass_oracle(self, n_max: int) -> np.ndarray:
        return mass_recursion(self.potential_value, self.mu_rate, n_max)


def constant_velocity(dt: float = 1.0, sigma: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Transition matrix and process noise of the planar constant-velocity model."""
    eye = np.eye(2)
    a = np.zeros((4, 4))
    a[:2, :2] = eye
    a[:2, 2:] = dt * eye
    a[2:, 2:] = eye
    q = np.zeros((4, 4))
    q[:2, :2] = dt**4 / 4 * eye
    q[:2, 2:] = dt**3 / 2 * eye
    q[2:, :2] = dt**3 / 2 * eye
    q[2:, 2:] = dt**2 * eye
    return a, q * sigma**2


def linear_gaussian_scenario(
    A: ArrayLike,
    Sigma: ArrayLike,
    s: float,
    alpha: float,
    mu_rate: float,
    region: Region,
    velocity_std: float = 1.0,
    horizon: int = 50,
) -> GaussianScenario:
    return GaussianScenario(
        A=np.asarray(A, dtype=float),
        Sigma=np.asarray(Sigma, dtype=float),
        survival_prob=s,
        alpha=alpha,
        mu_rate=mu_rate,
        region=region,
        velocity_std=velocity_std,
        horizon=horizon,
    )


def mass_recursion(potential: float, mu_mass: float, n_max: int, initial: float | None = None) -> np.ndarray:
    """m_{n+1} = G m_n + mu(1), starting from m_0 = mu(1) unless given."""
    out = np.empty(n_max + 1)
    out[0] = mu_mass if initial is None else initial
    for n in range(n_max):
        out[n + 1] = potential * out[n] + mu_mass
    return out


Scenario = FiniteScenario | GaussianScenario
Observer = Callable[[Population], np.ndarray]


def count_observer(size: int) -> Observer:
    """Per-replicate occupation counts of every state."""

    def observe(pop: Population) -> np.ndarray:
        flat = np.bincount(pop.owner * size + pop.states, minlength=pop.replicates * size)
        return flat.reshape(pop.replicates, size).astype(float)

    return observe


def function_observer(functions: Sequence[Callable[[np.ndarray], np.ndarray]]) -> Observer:
    """Per-replicate sums sum_i f(X^i) for functions of continuous states."""

    def observe(pop: Population) -> np.ndarray:
        cols = [np.bincount(pop.owner, weights=f(pop.states), minlength=pop.replicates) for f in functions]
        return np.stack(cols, axis=1)

    return observe


@dataclass(frozen=True, eq=False)
class SimulationResult:
    """``stats[r, n, k]``: observation k of replicate r at step n."""

    stats: np.ndarray
    trajectories: list[tuple[int, int, int, np.ndarray]] = field(default_factory=list)

    @property
    def replicates(self) -> int:
        return self.stats.shape[0]


def _simulate_block(
    scenario: Scenario,
    n_max: int,
    observe: Observer,
    dump: int,
    block_size: int,
    streams: Streams,
    size: int,
    max_population: int | None = None,
) -> SimulationResult:
    pop = _place_immigrants(scenario.initial_law(), size, streams, 0)
    frames = [observe(pop)]
    rows: list[tuple[int, int, int, np.ndarray]] = []

    def record(step: int, p: Population) -> None:
        if dump <= 0:
            return
        first = streams.block * block_size
        keep = first + p.owner < dump
        owners, states = p.owner[keep], p.states[keep]
        starts = np.searchsorted(owners, owners, side="left")
        for owner, tid, state in zip(owners, np.arange(owners.shape[0]) - starts, states):
            rows.append((int(first + owner), step, int(tid), np.atleast_1d(state)))

    record(0, pop)
    for n in range(n_max):
        pop = step_population(pop, scenario.law(n), streams, n + 1)
        if max_population is not None and pop.owner.size:
            largest = int(np.bincount(pop.owner, minlength=size).max())
            if largest > max_population:
                raise PopulationLimitError(
                    f"a replicate reached {largest} targets at step {n + 1} (cap {max_population}); shorten the horizon"
                )
        frames.append(observe(pop))
        record(n + 1, pop)
    return SimulationResult(np.stack(frames, axis=1), rows)


def simulate(
    scenario: Scenario,
    n_max: int,
    replicates: int,
    seed: int,
    observe: Observer | None = None,
    dump: int = 0,
    block_size: int | None = None,
    workers: int | None = None,
    max_population: int | None = None,
) -> SimulationResult:
    """Run independent replicates and stack their per-step observations.

    ``max_population`` caps the targets of any single replicate; no cap by default.
    """
    if observe is None:
        if not scenario.finite:
            observe = function_observer([lambda x: np.ones(x.shape[0])])
        else:
            observe = count_observer(scenario.space.size)
    block_size = block_size or settings.BLOCK_SIZE
    blocks = run_blocks(
        lambda streams, size: _simulate_block(scenario, n_max, observe, dump, block_size, streams, size, max_population),
        seed,
        replicates,
        block_size,
        workers or settings.WORKERS,
    )
    stats = np.concatenate([b.stats for b in blocks], axis=0)
    rows = [row for b in blocks for row in b.trajectories]
    logger.info(f"simulated {replicates} replicates of '{scenario.name}' to n={n_max} (seed {seed})")
    return SimulationResult(stats, rows)


def simulate_counts(scenario: FiniteScenario, n_max: int, replicates: int, seed: int, **kwargs) -> np.ndarray:
    """Occupation counts, shape (replicates, n_max + 1, |E|)."""
    return simulate(scenario, n_max, replicates, seed, **kwargs).stats


def mean_and_se(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    samples = np.asarray(samples, dtype=float)
    if samples.shape[0] < 2:
        raise ValueError("need at least two replicates for a standard error")
    return samples.mean(axis=0), samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])


def estimate_intensity(
    scenario: Scenario,
    n: int,
    f: ArrayLike | Callable[[np.ndarray], np.ndarray] | None,
    replicates: int,
    seed: int,
    **kwargs,
) -> tuple[float, float]:
    """Empirical gamma_n(f) = E(sum_i f(X_n^i)) with its standard error."""
    if replicates < 2:
        raise ValueError("estimate_intensity needs at least two replicates")
    if scenario.finite:
        counts = simulate_counts(scenario, n, replicates, seed, **kwargs)[:, n, :]
        values = counts @ (np.ones(counts.shape[1]) if f is None else np.asarray(f, dtype=float))
    else:
        fn = f if callable(f) else (lambda x: np.ones(x.shape[0]))
        values = simulate(scenario, n, replicates, seed, function_observer([fn]), **kwargs).stats[:, n, 0]
    mean, se = mean_and_se(values)
    return float(mean), float(se)


def finite_scenario(
    kernel: MarkovKernel,
    survival: ArrayLike,
    spawn: SpawnLaw,
    mu: DiscreteMeasure,
    horizon: int,
    initial: DiscreteMeasure | None = None,
    name: str = "custom",
) -> FiniteScenario:
    """Homogeneous finite scenario; the potential is derived as e * H."""
    e = np.asarray(survival, dtype=float)
    potential = Potential(kernel.source, e * spawn.mean())
    model = BranchingModel.homogeneous_model(potential, kernel, mu, horizon, initial)
    return FiniteScenario(model, (e,), (spawn,), name)
