"""Mean-field N-particle approximation of (gamma_n(1), eta_n).

A ``ParticleSystem`` holds a batch of independent runs: ``states`` has one
row of N particles per run and ``masses`` one gamma_n^N(1) per run. One sweep
updates the mass, applies a selection kernel S_eta (three constructions, all
satisfying eta S_eta = Psi_G(eta)) and then the mutation mixture
alpha M_{n+1} + (1 - alpha) mu_bar_{n+1}.

Also here: the exact CLT covariances, the post hoc fluctuation fields, and
the particle approximation of the spontaneous-birth measures.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Protocol, Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import polygamma

from app.config import settings
from app.services.branching_sim import GaussianScenario, mass_recursion
from app.services.exact_flow import (
    BranchingModel,
    FlowConsistencyError,
    MixingCertificate,
    RegimeError,
    alpha_star,
    mass_envelope,
    mass_product_formula,
    mutation_kernel,
    q_kernel,
    regime_of,
    run_flow,
    semigroup_of,
)
from app.services.measure_core import (
    EXACT_TOL,
    DiscreteMeasure,
    MarkovKernel,
    Potential,
    ProbabilityMeasure,
    SpaceMismatchError,
    boltzmann_gibbs,
    integrate,
    values_on,
)
from app.services.rng import Purpose, Streams, run_blocks
from app.services.sampling import categorical, categorical_rows, cdf_table, multinomial_indices

logger = logging.getLogger("particles")

SchemeKind = Literal["full", "shifted", "accept-reject"]


class SchemeError(ValueError):
    """A selection scheme cannot be used with the given potential."""


@dataclass(frozen=True)
class SelectionScheme:
    """One of the three selection kernels.

    ``full``: S_eta(x, .) = Psi_G(eta).
    ``shifted``: keep x w.p. eps/eta(G), else draw from Psi_{G-eps}(eta); needs G > eps.
    ``accept-reject``: keep x w.p. eps G(x), else draw from Psi_G(eta); needs eps G <= 1.
    Without an epsilon, accept-reject uses 1 / (eta-essential sup of G).
    """

    kind: SchemeKind = "full"
    epsilon: float | None = None

    def __post_init__(self):
        if self.kind not in ("full", "shifted", "accept-reject"):
            raise SchemeError(f"unknown selection scheme '{self.kind}'")
        if self.epsilon is not None and self.epsilon < 0:
            raise SchemeError("selection epsilon must be nonnegative")

    def check(self, g_minus: float, g_plus: float) -> None:
        if self.kind == "shifted" and not g_minus > self.shift:
            raise SchemeError(f"shifted selection needs G > eps everywhere (eps={self.shift}, g_-={g_minus})")
        if self.kind == "accept-reject" and self.epsilon is not None and self.epsilon * g_plus > 1.0 + EXACT_TOL:
            raise SchemeError(f"accept-reject selection needs eps G <= 1 (eps={self.epsilon}, g_+={g_plus})")

    @property
    def shift(self) -> float:
        return self.epsilon or 0.0


FULL_RESAMPLE = SelectionScheme()


def selection_matrix(potential: Potential, eta: ProbabilityMeasure, scheme: SelectionScheme) -> MarkovKernel:
    """The explicit kernel S_eta on a finite space."""
    g = values_on(potential, eta.space)
    scheme.check(float(g.min()), float(g.max()))
    psi = boltzmann_gibbs(potential, eta).weights
    d = g.shape[0]
    if scheme.kind == "full":
        return MarkovKernel(eta.space, eta.space, np.tile(psi, (d, 1)))
    if scheme.kind == "shifted":
        eps = scheme.shift
        eta_g = integrate(eta, g)
        shifted = (g - eps) * eta.weights
        keep = eps / eta_g
        entries = keep * np.eye(d) + (1.0 - keep) * np.tile(shifted / shifted.sum(), (d, 1))
        return MarkovKernel(eta.space, eta.space, entries)
    eps = scheme.epsilon if scheme.epsilon is not None else 1.0 / float(g[eta.weights > 0].max())
    keep = eps * g
    entries = np.diag(keep) + (1.0 - keep)[:, None] * psi[None, :]
    return MarkovKernel(eta.space, eta.space, entries)


def mckean_kernel(
    model: BranchingModel, n: int, m: float, eta: ProbabilityMeasure, scheme: SelectionScheme = FULL_RESAMPLE
) -> MarkovKernel:
    """K_{n+1,(m,eta)} = S_eta M_{n+1,(m,eta)}."""
    select = selection_matrix(model.potential(n), eta, scheme)
    move = mutation_kernel(model, n, m, eta)
    entries = select.entries @ move.entries
    return MarkovKernel(eta.space, move.target, entries / entries.sum(axis=1, keepdims=True))


class Dynamics(Protocol):
    """What the particle engine needs from a model."""

    finite: bool

    def bounds(self, n: int) -> tuple[float, float]: ...

    def potential(self, n: int, states: np.ndarray) -> np.ndarray: ...

    def move(self, n: int, states: np.ndarray, rng: np.random.Generator) -> np.ndarray: ...

    def place(self, n: int, shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray: ...

    def birth_mass(self, n: int) -> float: ...

    def envelope(self, n: int) -> tuple[float, float]: ...


class FiniteDynamics:
    finite = True

    def __init__(self, model: BranchingModel):
        self.model = model

    @property
    def size(self) -> int:
        return self.model.space(0).size

    def bounds(self, n: int) -> tuple[float, float]:
        g = self.model.potential(n)
        return g.g_minus, g.g_plus

    def potential(self, n: int, states: np.ndarray) -> np.ndarray:
        return self.model.potential(n).values[states]

    def move(self, n: int, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        cdf = cdf_table(self.model.transition(n).entries)
        return categorical_rows(cdf, states.ravel(), rng.random(states.size)).reshape(states.shape)

    def place(self, n: int, shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
        return categorical(self.model.birth_law(n).weights, shape, rng)

    def birth_mass(self, n: int) -> float:
        return self.model.immigration_at(n).mass

    def envelope(self, n: int) -> tuple[float, float]:
        return mass_envelope(self.model, n)


class GaussianDynamics:
    """The linear-Gaussian scenario; the potential is constant so only masses are tracked."""

    finite = False

    def __init__(self, scenario: GaussianScenario):
        self.scenario = scenario

    def bounds(self, n: int) -> tuple[float, float]:
        g = self.scenario.potential_value
        return g, g

    def potential(self, n: int, states: np.ndarray) -> np.ndarray:
        return np.full(states.shape[:-1], self.scenario.potential_value)

    def move(self, n: int, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        flat = states.reshape(-1, states.shape[-1])
        return self.scenario.move(flat, rng).reshape(states.shape)

    def place(self, n: int, shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
        return self.scenario.place(shape, rng)

    def birth_mass(self, n: int) -> float:
        return self.scenario.mu_rate

    def envelope(self, n: int) -> tuple[float, float]:
        m = float(mass_recursion(self.scenario.potential_value, self.scenario.mu_rate, n)[n])
        return m, m


def dynamics_of(source: BranchingModel | GaussianScenario | Dynamics) -> Dynamics:
    if isinstance(source, BranchingModel):
        return FiniteDynamics(source)
    if isinstance(source, GaussianScenario):
        return GaussianDynamics(source)
    return source


@dataclass(eq=False)
class ParticleSystem:
    """``states``: (runs, N) labels or (runs, N, dim) vectors; ``masses``: (runs,)."""

    states: np.ndarray
    masses: np.ndarray

    @property
    def runs(self) -> int:
        return self.states.shape[0]

    @property
    def size(self) -> int:
        return self.states.shape[1]

    def occupation(self, d: int) -> np.ndarray:
        """eta^N as a (runs, d) array of particle frequencies."""
        offsets = self.states + d * np.arange(self.runs)[:, None]
        counts = np.bincount(offsets.ravel(), minlength=self.runs * d)
        return counts.reshape(self.runs, d) / self.size


def _take(states: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return states[np.arange(states.shape[0])[:, None], idx]


def mass_update(system: ParticleSystem, weights: np.ndarray, mu_next_mass: float) -> np.ndarray:
    """gamma_{n+1}^N(1) = gamma_n^N(1) eta_n^N(G_n) + mu_{n+1}(1)."""
    return system.masses * weights.mean(axis=1) + mu_next_mass


def selection_step(
    system: ParticleSystem, weights: np.ndarray, scheme: SelectionScheme, streams: Streams, step: int
) -> np.ndarray:
    """Selected states; ``weights`` holds G_n at every particle."""
    runs, n = weights.shape
    if scheme.kind == "full":
        return _take(system.states, multinomial_indices(weights, streams(step, Purpose.SELECTION)))
    if scheme.kind == "shifted":
        if np.any(weights <= scheme.shift):
            raise SchemeError("shifted selection needs G > eps at every particle")
        keep_prob = np.broadcast_to(scheme.shift / weights.mean(axis=1, keepdims=True), weights.shape)
        picks = multinomial_indices(weights - scheme.shift, streams(step, Purpose.SELECTION))
    else:
        eps = scheme.epsilon if scheme.epsilon is not None else 1.0 / weights.max(axis=1, keepdims=True)
        keep_prob = eps * weights
        if np.any(keep_prob > 1.0 + EXACT_TOL):
            raise SchemeError("accept-reject selection needs eps G <= 1 at every particle")
        picks = multinomial_indices(weights, streams(step, Purpose.SELECTION))
    picks = streams(step, Purpose.SHUFFLE).permuted(picks, axis=1)
    keep = streams(step, Purpose.KEEP).random((runs, n)) < keep_prob
    picks = np.where(keep, np.arange(n)[None, :], picks)
    return _take(system.states, picks)


def _alpha(masses: np.ndarray, eta_g: np.ndarray, mu_next_mass: float, n: int) -> np.ndarray:
    weighted = masses * eta_g
    total = weighted + mu_next_mass
    if np.any(total <= 0):
        raise ValueError(f"mutation weight undefined at step {n}: zero mass and no immigration")
    return weighted / total


def mutation_step(
    system: ParticleSystem,
    selected: np.ndarray,
    eta_g: np.ndarray,
    dynamics: Dynamics,
    n: int,
    streams: Streams,
    step: int,
) -> np.ndarray:
    """Move by M_{n+1} w.p. alpha_n(gamma_n^N(1), eta_n^N), else redraw from mu_bar_{n+1}.

    ``system.masses`` must still be gamma_n^N(1).
    """
    mu_next = dynamics.birth_mass(n + 1)
    alpha = _alpha(system.masses, eta_g, mu_next, n)
    moved = dynamics.move(n, selected, streams(step, Purpose.MOVE))
    if mu_next <= 0:
        return moved
    fresh = dynamics.place(n + 1, selected.shape[:2], streams(step, Purpose.BIRTH))
    coin = streams(step, Purpose.MUTATION).random(selected.shape[:2]) < alpha[:, None]
    if moved.ndim == 3:
        coin = coin[..., None]
    return np.where(coin, moved, fresh)


@dataclass(frozen=True, eq=False)
class ParticleBatch:
    """Recorded statistics of independent particle runs.

    ``masses[r, n]`` is gamma_n^N(1), ``eta_g[r, n]`` is eta_n^N(G_n) and
    ``histograms[r, n]`` is eta_n^N on finite spaces.
    """

    N: int
    scheme: SelectionScheme
    masses: np.ndarray
    eta_g: np.ndarray
    histograms: np.ndarray | None = None

    @property
    def runs(self) -> int:
        return self.masses.shape[0]

    @property
    def n_max(self) -> int:
        return self.masses.shape[1] - 1

    def eta(self, f: ArrayLike, n: int) -> np.ndarray:
        if self.histograms is None:
            raise ValueError("occupation histograms are only recorded on finite spaces")
        return self.histograms[:, n, :] @ np.asarray(f, dtype=float)

    def gamma(self, f: ArrayLike, n: int) -> np.ndarray:
        return self.masses[:, n] * self.eta(f, n)


def _run_block(
    dynamics: Dynamics,
    N: int,
    n_max: int,
    scheme: SelectionScheme,
    streams: Streams,
    runs: int,
) -> ParticleBatch:
    states = dynamics.place(0, (runs, N), streams(0, Purpose.INITIAL))
    system = ParticleSystem(states, np.full(runs, dynamics.birth_mass(0)))
    masses = np.empty((runs, n_max + 1))
    eta_g = np.empty((runs, n_max))
    d = dynamics.size if dynamics.finite else 0
    hist = np.empty((runs, n_max + 1, d)) if dynamics.finite else None

    def record(n: int) -> None:
        masses[:, n] = system.masses
        if hist is not None:
            hist[:, n, :] = system.occupation(d)

    record(0)
    for n in range(n_max):
        step = n + 1
        scheme.check(*dynamics.bounds(n))
        weights = dynamics.potential(n, system.states)
        eta_g[:, n] = weights.mean(axis=1)
        selected = selection_step(system, weights, scheme, streams, step)
        moved = mutation_step(system, selected, eta_g[:, n], dynamics, n, streams, step)
        system = ParticleSystem(moved, mass_update(system, weights, dynamics.birth_mass(n + 1)))
        record(step)
    return ParticleBatch(N, scheme, masses, eta_g, hist)


def check_batch(batch: ParticleBatch, dynamics: Dynamics) -> None:
    """Hard checks: every mass inside I_n and the product mass formula."""
    for n in range(batch.n_max + 1):
        lo, hi = dynamics.envelope(n)
        m = batch.masses[:, n]
        if np.any(m < lo - EXACT_TOL * max(1.0, lo)) or np.any(m > hi + EXACT_TOL * max(1.0, hi)):
            raise FlowConsistencyError(f"particle mass left the envelope I_{n} = [{lo}, {hi}]")
    mu_masses = [dynamics.birth_mass(n) for n in range(batch.n_max + 1)]
    product = mass_product_formula(mu_masses, batch.eta_g)
    scale = np.maximum(1.0, np.abs(batch.masses))
    if np.any(np.abs(product - batch.masses) > EXACT_TOL * scale):
        raise FlowConsistencyError("particle masses disagree with the product formula")


def run_particle_batch(
    source: BranchingModel | GaussianScenario | Dynamics,
    N: int,
    n_max: int,
    scheme: SelectionScheme = FULL_RESAMPLE,
    seed: int = 0,
    runs: int = 1,
    block_size: int | None = None,
    workers: int | None = None,
    check: bool = True,
) -> ParticleBatch:
    """Many independent runs of the N-particle system, parallel across RNG blocks."""
    if N < 1:
        raise ValueError("need at least one particle")
    if runs < 1:
        raise ValueError("need at least one run")
    dynamics = dynamics_of(source)
    blocks = run_blocks(
        lambda streams, size: _run_block(dynamics, N, n_max, scheme, streams, size),
        seed,
        runs,
        block_size or settings.BLOCK_SIZE,
        workers or settings.WORKERS,
    )
    batch = ParticleBatch(
        N,
        scheme,
        np.concatenate([b.masses for b in blocks]),
        np.concatenate([b.eta_g for b in blocks]),
        np.concatenate([b.histograms for b in blocks]) if dynamics.finite else None,
    )
    if check:
        check_batch(batch, dynamics)
    logger.info(f"ran {runs} particle systems (N={N}, n_max={n_max}, scheme={scheme.kind}, seed={seed})")
    return batch


def conditional_mean(model: BranchingModel, batch: ParticleBatch, n: int, f: ArrayLike) -> np.ndarray:
    """eta_n^N K_{n+1,(gamma_n^N(1), eta_n^N)}(f) for every run.

    The transport identity eta S_eta = Psi_G(eta) makes this independent of
    the selection scheme.
    """
    f = np.asarray(f, dtype=float)
    hist = batch.histograms[:, n, :]
    g = model.potential(n).values
    weighted = hist * g
    eta_g = weighted.sum(axis=1)
    moved = (weighted / eta_g[:, None]) @ model.transition(n)(f)
    mu_next = model.immigration_at(n + 1).mass
    alpha = _alpha(batch.masses[:, n], eta_g, mu_next, n)
    if mu_next <= 0:
        return moved
    return alpha * moved + (1.0 - alpha) * integrate(model.birth_law(n + 1), f)


def w_field(batch: ParticleBatch, model: BranchingModel, p: int, f: ArrayLike) -> np.ndarray:
    """W_p^N(f) per run; W_0^N is sqrt(N) (eta_0^N - eta_0)(f)."""
    f = np.asarray(f, dtype=float)
    if p == 0:
        centre = integrate(model.birth_law(0), f)
    else:
        centre = conditional_mean(model, batch, p - 1, f)
    return math.sqrt(batch.N) * (batch.eta(f, p) - centre)


@dataclass(frozen=True, eq=False)
class FluctuationSample:
    """Per-run fields for one test function; arrays are (runs, n_max + 1)."""

    w: np.ndarray
    v_gamma: np.ndarray
    v_eta: np.ndarray


def fluctuation_field(batch: ParticleBatch, model: BranchingModel, f: ArrayLike) -> FluctuationSample:
    if batch.histograms is None:
        raise ValueError("fluctuation fields need a finite state space")
    f = np.asarray(f, dtype=float)
    flow = run_flow(model, batch.n_max, check=False)
    root = math.sqrt(batch.N)
    w = np.stack([w_field(batch, model, p, f) for p in range(batch.n_max + 1)], axis=1)
    v_gamma = np.stack(
        [root * (batch.gamma(f, n) - integrate(flow.gammas[n], f)) for n in range(batch.n_max + 1)], axis=1
    )
    v_eta = np.stack([root * (batch.eta(f, n) - flow.eta_values(f, n)) for n in range(batch.n_max + 1)], axis=1)
    return FluctuationSample(w, v_gamma, v_eta)


@dataclass(frozen=True, eq=False)
class ParticleRun:
    """One particle run: gamma_n^N(1), eta_n^N and the fields of each test function."""

    masses: np.ndarray
    occupations: tuple[ProbabilityMeasure, ...]
    fluctuations: dict[str, FluctuationSample]


def run_particles(
    model: BranchingModel,
    N: int,
    n_max: int,
    scheme: SelectionScheme = FULL_RESAMPLE,
    seed: int = 0,
    functions: Sequence[tuple[str, ArrayLike]] | None = None,
) -> ParticleRun:
    """A single run on a finite space; defaults to f = 1 and the first indicator."""
    batch = run_particle_batch(model, N, n_max, scheme, seed, runs=1)
    if functions is None:
        d = model.space(0).size
        functions = [("one", np.ones(d)), ("ind0", np.eye(d)[0])]
    occupations = tuple(ProbabilityMeasure(model.space(n), batch.histograms[0, n]) for n in range(n_max + 1))
    fluctuations = {label: fluctuation_field(batch, model, f) for label, f in functions}
    return ParticleRun(batch.masses[0], occupations, fluctuations)


def martingale_terms(batch: ParticleBatch, model: BranchingModel, n: int, f: ArrayLike) -> np.ndarray:
    """gamma_p^N(1) W_p^N(Q_{p,n} f) for p = 0..n; rows sum to sqrt(N) [gamma_n^N - gamma_n](f)."""
    sg = semigroup_of(model)
    f = np.asarray(f, dtype=float)
    cols = [batch.masses[:, p] * w_field(batch, model, p, sg.kernel(p, n)(f)) for p in range(n + 1)]
    return np.stack(cols, axis=1)


def clt_covariance(
    model: BranchingModel,
    n: int,
    f: ArrayLike,
    g: ArrayLike | None = None,
    scheme: SelectionScheme = FULL_RESAMPLE,
) -> float:
    """Limit covariance of (W_n(f), W_n(g)): eta_{n-1} K([f - K f][g - K g]) at the exact flow."""
    f = np.asarray(f, dtype=float)
    g = f if g is None else np.asarray(g, dtype=float)
    flow = run_flow(model, n, check=False)
    if n == 0:
        eta0 = model.birth_law(0)
        return integrate(eta0, (f - integrate(eta0, f)) * (g - integrate(eta0, g)))
    eta = flow.etas[n - 1] or model.birth_law(n - 1)
    k = mckean_kernel(model, n - 1, flow.masses[n - 1], eta, scheme)
    kf, kg = k(f), k(g)
    second = k.entries @ (f * g) - kf * kg
    return integrate(eta, second)


def v_gamma_variance(model: BranchingModel, n: int, f: ArrayLike, scheme: SelectionScheme = FULL_RESAMPLE) -> float:
    """sum_p gamma_p(1)^2 sigma_p^2(Q_{p,n} f), the limit variance of V_n^gamma(f)."""
    sg = semigroup_of(model)
    flow = run_flow(model, n, check=False)
    f = np.asarray(f, dtype=float)
    return math.fsum(
        flow.masses[p] ** 2 * clt_covariance(model, p, sg.kernel(p, n)(f), scheme=scheme) for p in range(n + 1)
    )


def v_eta_variance(model: BranchingModel, n: int, f: ArrayLike, scheme: SelectionScheme = FULL_RESAMPLE) -> float:
    """Limit variance of V_n^eta(f) = V_n^gamma(f - eta_n f) / gamma_n(1)."""
    flow = run_flow(model, n, check=False)
    f = np.asarray(f, dtype=float)
    centred = f - flow.eta_values(f, n)
    return v_gamma_variance(model, n, centred, scheme) / flow.masses[n] ** 2


def radon_nikodym(mu: DiscreteMeasure, lam: ProbabilityMeasure) -> np.ndarray:
    """H = d mu / d lambda on a finite space."""
    if mu.space != lam.space:
        raise SpaceMismatchError("mu and lambda live on different spaces")
    if np.any((lam.weights <= 0) & (mu.weights > 0)):
        raise ValueError("lambda does not dominate mu")
    safe = np.where(lam.weights > 0, lam.weights, 1.0)
    return np.where(lam.weights > 0, mu.weights / safe, 0.0)


@dataclass(frozen=True, eq=False)
class BirthParticleMeasure:
    """mu^{N'} = H lambda^{N'} built from N' reference samples."""

    lam: ProbabilityMeasure
    samples: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        if np.any(self.density < 0) or not np.all(np.isfinite(self.density)):
            raise ValueError("the density H must be finite and nonnegative")

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    def measure(self) -> DiscreteMeasure:
        weights = np.bincount(self.samples, weights=self.density[self.samples], minlength=self.lam.space.size)
        return DiscreteMeasure(self.lam.space, weights / self.size)


def birth_particle_measure(
    lam: ProbabilityMeasure, H: ArrayLike, n_prime: int, rng: np.random.Generator
) -> BirthParticleMeasure:
    if n_prime < 1:
        raise ValueError("need at least one reference sample")
    density = values_on(H, lam.space)
    return BirthParticleMeasure(lam, categorical(lam.weights, n_prime, rng), np.asarray(density, dtype=float))


def _lambda_at(lambdas: Sequence[ProbabilityMeasure], p: int) -> ProbabilityMeasure:
    return lambdas[min(p, len(lambdas) - 1)]


def _densities(model: BranchingModel, lambdas: Sequence[ProbabilityMeasure], n_max: int) -> list[np.ndarray]:
    if not lambdas:
        raise ValueError("need at least one reference measure")
    return [radon_nikodym(model.immigration_at(p), _lambda_at(lambdas, p)) for p in range(n_max + 1)]


def tilde_flow(model: BranchingModel, birth_measures: Sequence[DiscreteMeasure], n_max: int) -> tuple[DiscreteMeasure, ...]:
    """gamma~_n = gamma~_{n-1} Q_n + mu_n^{N'}, cross-checked against sum_p mu_p^{N'} Q_{p,n}."""
    if len(birth_measures) < n_max + 1:
        raise ValueError("need one birth measure per step")
    out = [birth_measures[0]]
    for n in range(n_max):
        if birth_measures[n + 1].space != model.space(n + 1):
            raise SpaceMismatchError(f"birth measure {n + 1} does not live on E_{n + 1}")
        out.append(DiscreteMeasure(model.space(n + 1), out[-1].weights @ q_kernel(model, n).entries + birth_measures[n + 1].weights))
    sg = semigroup_of(model)
    direct = sum(birth_measures[p].weights @ sg.kernel(p, n_max).entries for p in range(n_max + 1))
    if np.any(np.abs(direct - out[-1].weights) > EXACT_TOL * np.maximum(1.0, np.abs(direct))):
        raise FlowConsistencyError("tilde flow disagrees with its semigroup decomposition")
    return tuple(out)


def _tilde_block(
    model: BranchingModel, lambdas: Sequence[ProbabilityMeasure], densities: list[np.ndarray], n_max: int, n_prime: int, streams: Streams, runs: int
) -> np.ndarray:
    d = model.space(0).size
    out = np.empty((runs, n_max + 1, d))
    gamma = np.zeros((runs, d))
    for p in range(n_max + 1):
        lam = _lambda_at(lambdas, p)
        samples = categorical(lam.weights, (runs, n_prime), streams(p, Purpose.BIRTH))
        offsets = samples + d * np.arange(runs)[:, None]
        counts = np.bincount(offsets.ravel(), minlength=runs * d).reshape(runs, d)
        birth = counts * densities[p][None, :] / n_prime
        gamma = birth if p == 0 else gamma @ q_kernel(model, p - 1).entries + birth
        out[:, p, :] = gamma
    return out


def tilde_flow_batch(
    model: BranchingModel,
    lambdas: Sequence[ProbabilityMeasure],
    n_max: int,
    n_prime: int,
    runs: int,
    seed: int,
    block_size: int | None = None,
    workers: int | None = None,
) -> np.ndarray:
    """gamma~_n^{N'} for many independent draws, shape (runs, n_max + 1, |E|)."""
    if n_prime < 1:
        raise ValueError("need at least one reference sample")
    densities = _densities(model, lambdas, n_max)
    blocks = run_blocks(
        lambda streams, size: _tilde_block(model, lambdas, densities, n_max, n_prime, streams, size),
        seed,
        runs,
        block_size or settings.BLOCK_SIZE,
        workers or settings.WORKERS,
    )
    logger.info(f"drew {runs} birth-measure flows (N'={n_prime}, n_max={n_max}, seed={seed})")
    return np.concatenate(blocks, axis=0)


def birth_variance(model: BranchingModel, lambdas: Sequence[ProbabilityMeasure], n: int, f: ArrayLike) -> float:
    """N' Var(gamma~_n^{N'}(f)) = sum_p lambda_p[(H_p Q_{p,n} f - lambda_p(H_p Q_{p,n} f))^2]."""
    sg = semigroup_of(model)
    densities = _densities(model, lambdas, n)
    f = np.asarray(f, dtype=float)
    total = []
    for p in range(n + 1):
        lam = _lambda_at(lambdas, p)
        h = densities[p] * sg.kernel(p, n)(f)
        total.append(integrate(lam, (h - integrate(lam, h)) ** 2))
    return math.fsum(total)


def birth_crude_bound(model: BranchingModel, lambdas: Sequence[ProbabilityMeasure], n: int) -> float:
    """sum_p alpha*_{p,n}(gamma_p(1))^2 gamma_p(1)^{-2} ||H_p|| mu_p(1) q_{p,n}^2, for ||f|| <= 1."""
    sg = semigroup_of(model)
    flow = run_flow(model, n, check=False)
    densities = _densities(model, lambdas, n)
    terms = []
    for p in range(n + 1):
        m = flow.masses[p]
        if m <= 0:
            continue
        a = alpha_star(model, p, n, m, flow.etas[p]).bound
        terms.append((a / m) ** 2 * float(densities[p].max()) * model.immigration_at(p).mass * sg.q_ratio(p, n) ** 2)
    return math.fsum(terms)


def birth_series_bound(
    model: BranchingModel, lambdas: Sequence[ProbabilityMeasure], cert: MixingCertificate
) -> float:
    """Uniform-in-time bound on N' E[(gamma~_n(f)/gamma_n(1) - eta_n(f))^2], ||f|| <= 1.

    One series per homogeneous regime; the constant is c = ||H|| mu(1) (delta_k/eps)^2.
    """
    regime = regime_of(model)
    if regime is None:
        raise RegimeError("the uniform birth bound needs a homogeneous model in one of the three regimes")
    mu_mass = model.immigration_at(1 if model.horizon else 0).mass
    if mu_mass <= 0:
        raise RegimeError("the uniform birth bound needs immigration")
    g0 = model.immigration_at(0).mass
    if g0 <= 0:
        raise RegimeError("the uniform birth bound needs a positive initial mass")
    densities = _densities(model, lambdas, min(1, model.horizon))
    c = max(float(h.max()) * model.immigration_at(p).mass for p, h in enumerate(densities)) * cert.q_bound**2
    potential = model.potential(0)
    if regime == "unit-potential":
        # sum_{p>=0} (g0 + mu p)^-2 via the trigamma function
        return c * float(polygamma(1, g0 / mu_mass)) / mu_mass**2
    if regime == "subcritical":
        g_plus, g_minus = potential.g_plus, potential.g_minus
        d1 = max(g0, mu_mass / (1.0 - g_plus)) / mu_mass
        d2 = min(g0, mu_mass / (1.0 - g_minus))
        # 1 ^ d1^2 g_+^{2p}: ones until the geometric part takes over
        cut = 0 if d1 <= 1.0 else math.ceil(math.log(d1**2) / -math.log(g_plus**2))
        geometric = d1**2 * g_plus ** (2 * cut) / (1.0 - g_plus**2)
        return c / d2**2 * (cut + geometric)
    g_minus = potential.g_minus
    return c / g0**2 / (1.0 - g_minus**-2)
