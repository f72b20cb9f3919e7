"""Exact intensity flow on finite state spaces.

This module is the oracle every stochastic component is checked against:
the measure recursion gamma_{n+1} = gamma_n Q_{n+1} + mu_{n+1}, its McKean
form on (mass, normalized law), the semigroups Q_{p,n} and Gamma_{p,n}, the
mixing constants and the error-bound constants built from them.
"""
from __future__ import annotations

import functools
import logging
import math
import threading
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike

from app.services.measure_core import (
    EXACT_TOL,
    DiscreteMeasure,
    MarkovKernel,
    Potential,
    ProbabilityMeasure,
    SpaceMismatchError,
    StateSpace,
    WeightedKernel,
    apply_kernel,
    boltzmann_gibbs,
    compose,
    dobrushin,
    integrate,
    kernel_power,
    normalize,
    scale_rows,
    tv_distance,
    uniform,
)

logger = logging.getLogger("exact_flow")

Regime = Literal["unit-potential", "subcritical", "supercritical"]

FIXED_POINT_TOL = 1e-13
SERIES_TOL = 1e-14
MAX_ITERATIONS = 10**6


class RegimeError(ValueError):
    """The model is outside the regime an operation is defined for."""


class MissingCertificateError(ValueError):
    """No mixing certificate exists for the requested lag."""


class ConvergenceError(RuntimeError):
    """An iteration hit its cap before meeting its stopping rule."""


class FlowConsistencyError(RuntimeError):
    """Two exact routes to the same quantity disagree beyond EXACT_TOL."""


def _close(a: ArrayLike, b: ArrayLike) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return bool(np.all(np.abs(a - b) <= EXACT_TOL * scale))


@dataclass(frozen=True, eq=False)
class BranchingModel:
    """The tuple (E_n, G_n, M_{n+1}, mu_n) over a finite horizon.

    ``kernels[n]`` is M_{n+1}. A time-homogeneous model stores one potential,
    one kernel, and the pair (mu_0, mu) of immigration measures; lookups past
    the end of a sequence reuse its last element.
    """

    potentials: tuple[Potential, ...]
    kernels: tuple[MarkovKernel, ...]
    immigration: tuple[DiscreteMeasure, ...]
    horizon: int

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if not self.potentials or not self.immigration:
            raise ValueError("a model needs at least one potential and one immigration measure")
        if self.horizon > 0 and not self.kernels:
            raise ValueError("a model with positive horizon needs a kernel")
        if not self.homogeneous:
            if len(self.potentials) < self.horizon + 1 or len(self.immigration) < self.horizon + 1:
                raise ValueError("time-inhomogeneous models need one entry per step")
            if len(self.kernels) < self.horizon:
                raise ValueError("time-inhomogeneous models need one kernel per step")
        for n in range(min(self.horizon, max(len(self.potentials), len(self.kernels), len(self.immigration))) + 1):
            space = self.space(n)
            if self.immigration_at(n).space != space:
                raise SpaceMismatchError(f"mu_{n} does not live on E_{n}")
            if n < self.horizon:
                m = self.transition(n)
                if m.source != space or m.target != self.space(n + 1):
                    raise SpaceMismatchError(f"M_{n + 1} does not map E_{n} into E_{n + 1}")

    @classmethod
    def homogeneous_model(
        cls,
        potential: Potential,
        kernel: MarkovKernel,
        mu: DiscreteMeasure,
        horizon: int,
        initial: DiscreteMeasure | None = None,
    ) -> "BranchingModel":
        return cls(
            potentials=(potential,),
            kernels=(kernel,),
            immigration=(initial if initial is not None else mu, mu),
            horizon=horizon,
        )

    @property
    def homogeneous(self) -> bool:
        return len(self.potentials) == 1 and len(self.kernels) <= 1 and len(self.immigration) <= 2

    def _check(self, n: int) -> None:
        if not 0 <= n <= self.horizon:
            raise ValueError(f"time index {n} outside [0, {self.horizon}]")

    def potential(self, n: int) -> Potential:
        self._check(n)
        return self.potentials[min(n, len(self.potentials) - 1)]

    def space(self, n: int) -> StateSpace:
        return self.potential(n).space

    def transition(self, n: int) -> MarkovKernel:
        """M_{n+1}, the move from E_n to E_{n+1}."""
        if not 0 <= n < self.horizon:
            raise ValueError(f"no transition out of step {n} (horizon {self.horizon})")
        return self.kernels[min(n, len(self.kernels) - 1)]

    def immigration_at(self, n: int) -> DiscreteMeasure:
        self._check(n)
        return self.immigration[min(n, len(self.immigration) - 1)]

    def birth_law(self, n: int) -> ProbabilityMeasure:
        """mu_bar_n, or the uniform law when mu_n has no mass."""
        mu = self.immigration_at(n)
        return normalize(mu) if mu.mass > 0 else uniform(mu.space)

    def with_horizon(self, horizon: int) -> "BranchingModel":
        if not self.homogeneous and horizon > self.horizon:
            raise ValueError("cannot extend a time-inhomogeneous model")
        return BranchingModel(self.potentials, self.kernels, self.immigration, horizon)


@dataclass(frozen=True, eq=False)
class FlowTrajectory:
    gammas: tuple[DiscreteMeasure, ...]
    masses: np.ndarray
    etas: tuple[ProbabilityMeasure | None, ...]

    @property
    def n_max(self) -> int:
        return len(self.gammas) - 1

    def eta_values(self, f: ArrayLike, n: int) -> float:
        eta = self.etas[n]
        return integrate(eta, f) if eta is not None else 0.0


def q_kernel(model: BranchingModel, n: int) -> WeightedKernel:
    """Q_{n+1}(x, y) = G_n(x) M_{n+1}(x, y)."""
    return scale_rows(model.potential(n), model.transition(n))


def intensity_step(gamma_n: DiscreteMeasure, model: BranchingModel, n: int) -> DiscreteMeasure:
    if gamma_n.space != model.space(n):
        raise SpaceMismatchError(f"gamma_{n} does not live on E_{n}")
    return apply_kernel(gamma_n, q_kernel(model, n)) + model.immigration_at(n + 1)


def mutation_kernel(model: BranchingModel, n: int, m: float, eta: ProbabilityMeasure) -> MarkovKernel:
    """M_{n+1,(m,eta)} = alpha M_{n+1} + (1 - alpha) mu_bar_{n+1}."""
    move = model.transition(n)
    mu_mass = model.immigration_at(n + 1).mass
    weighted = m * integrate(eta, model.potential(n))
    if weighted + mu_mass <= 0:
        raise ValueError(f"mutation weight undefined at step {n}: zero mass and no immigration")
    alpha = weighted / (weighted + mu_mass)
    if mu_mass == 0:
        return move
    birth = model.birth_law(n + 1)
    entries = alpha * move.entries + (1.0 - alpha) * birth.weights[None, :]
    return MarkovKernel(move.source, move.target, entries)


def gamma_step(
    model: BranchingModel, n: int, m: float, eta: ProbabilityMeasure | None
) -> tuple[float, ProbabilityMeasure | None]:
    """One step of the McKean pair recursion, Gamma_{n+1}(m, eta)."""
    mu_next = model.immigration_at(n + 1)
    if m <= 0 or eta is None:
        if mu_next.mass <= 0:
            return 0.0, None
        return mu_next.mass, normalize(mu_next)
    potential = model.potential(n)
    mass = m * integrate(eta, potential) + mu_next.mass
    law = apply_kernel(boltzmann_gibbs(potential, eta), mutation_kernel(model, n, m, eta))
    return mass, normalize(law)


def mckean_flow(model: BranchingModel, n_max: int) -> FlowTrajectory:
    """The (gamma_n(1), eta_n) recursion on its own, without gamma_n."""
    model._check(n_max)
    gamma0 = model.immigration_at(0)
    m = gamma0.mass
    eta = normalize(gamma0) if m > 0 else None
    masses, etas, gammas = [m], [eta], [gamma0]
    for n in range(n_max):
        m, eta = gamma_step(model, n, m, eta)
        masses.append(m)
        etas.append(eta)
        gammas.append(eta.scaled(m) if eta is not None else DiscreteMeasure.zero(model.space(n + 1)))
    return FlowTrajectory(tuple(gammas), np.array(masses), tuple(etas))


def mass_product_formula(mu_masses: ArrayLike, eta_g: ArrayLike) -> np.ndarray:
    """gamma_n(1) = sum_p mu_p(1) prod_{p<=q<n} eta_q(G_q) for every n.

    ``eta_g`` holds eta_q(G_q) on its last axis, one entry per transition;
    leading axes (independent runs) broadcast.
    """
    mu_masses = np.asarray(mu_masses, dtype=float)
    eta_g = np.asarray(eta_g, dtype=float)
    steps = eta_g.shape[-1]
    out = np.zeros(eta_g.shape[:-1] + (steps + 1,))
    for n in range(steps + 1):
        total = np.zeros(eta_g.shape[:-1])
        for p in range(n + 1):
            total = total + mu_masses[p] * np.prod(eta_g[..., p:n], axis=-1)
        out[..., n] = total
    return out


def run_flow(model: BranchingModel, n_max: int, check: bool = True) -> FlowTrajectory:
    """Run the measure recursion and cross-check it against the McKean route."""
    model._check(n_max)
    gammas = [model.immigration_at(0)]
    for n in range(n_max):
        gammas.append(intensity_step(gammas[-1], model, n))
    masses = np.array([g.mass for g in gammas])
    etas = tuple(normalize(g) if g.mass > 0 else None for g in gammas)
    flow = FlowTrajectory(tuple(gammas), masses, etas)
    if check:
        _check_routes(model, flow)
    return flow


def _check_routes(model: BranchingModel, flow: FlowTrajectory) -> None:
    other = mckean_flow(model, flow.n_max)
    if not _close(flow.masses, other.masses):
        raise FlowConsistencyError("measure and McKean recursions disagree on the mass")
    for n, (a, b) in enumerate(zip(flow.etas, other.etas)):
        if (a is None) != (b is None) or (a is not None and tv_distance(a, b) > EXACT_TOL):
            raise FlowConsistencyError(f"measure and McKean recursions disagree on eta_{n}")
    mu_masses = [model.immigration_at(n).mass for n in range(flow.n_max + 1)]
    eta_g = [flow.eta_values(model.potential(n), n) for n in range(flow.n_max)]
    if not _close(flow.masses, mass_product_formula(mu_masses, eta_g)):
        raise FlowConsistencyError("product formula disagrees with the mass recursion")
    logger.debug(f"flow routes agree up to n={flow.n_max}")


class Semigroup:
    """Memoized Q_{p,n} = Q_{p+1} ... Q_n for one model.

    Storage is O(horizon^2) kernels; the cache is guarded by a lock so a
    shared instance stays observably pure under threads.
    """

    def __init__(self, model: BranchingModel):
        self.model = model
        self._kernels: dict[tuple[int, int], WeightedKernel] = {}
        self._lock = threading.Lock()

    def kernel(self, p: int, n: int) -> WeightedKernel:
        if not 0 <= p <= n <= self.model.horizon:
            raise ValueError(f"need 0 <= p <= n <= horizon, got p={p}, n={n}")
        with self._lock:
            cached = self._kernels.get((p, n))
        if cached is not None:
            return cached
        # walk down from the nearest cached (r, n) so long chains stay iterative
        r = n
        current: WeightedKernel = WeightedKernel.identity(self.model.space(n))
        for s in range(p, n + 1):
            with self._lock:
                hit = self._kernels.get((s, n))
            if hit is not None:
                r, current = s, hit
                break
        computed = {(r, n): current}
        while r > p:
            r -= 1
            current = compose(q_kernel(self.model, r), current)
            computed[(r, n)] = current
        with self._lock:
            for key, value in computed.items():
                self._kernels.setdefault(key, value)
            return self._kernels[(p, n)]

    def ones(self, p: int, n: int) -> np.ndarray:
        """Q_{p,n}(1)."""
        return self.kernel(p, n).row_sums

    def normalized(self, p: int, n: int) -> MarkovKernel:
        """P_{p,n}(x, .) = Q_{p,n}(x, .) / Q_{p,n}(1)(x)."""
        q = self.kernel(p, n)
        return MarkovKernel(q.source, q.target, q.entries / q.row_sums[:, None])

    def q_ratio(self, p: int, n: int) -> float:
        ones = self.ones(p, n)
        return float(ones.max() / ones.min())

    def beta(self, p: int, n: int) -> float:
        return dobrushin(self.normalized(p, n))

    def c(self, p: int, n: int) -> float:
        """c_{p,n} = mu_p Q_{p,n}(1)."""
        return integrate(self.model.immigration_at(p), self.ones(p, n))

    def c_tail(self, p: int, n: int) -> float:
        """sum_{p<q<=n} c_{q,n}."""
        return math.fsum(self.c(q, n) for q in range(p + 1, n + 1))


@functools.lru_cache(maxsize=64)
def semigroup_of(model: BranchingModel) -> Semigroup:
    return Semigroup(model)


@dataclass(frozen=True, eq=False)
class AlphaBound:
    exact: float
    bound: float
    degenerate: bool = False


@dataclass(frozen=True, eq=False)
class SemigroupStats:
    p: int
    n: int
    kernel: WeightedKernel
    normalized: MarkovKernel
    q_ratio: float
    beta: float
    c: float
    alpha: AlphaBound
    b: float


def alpha_star(
    model: BranchingModel, p: int, n: int, m: float, eta: ProbabilityMeasure | None = None
) -> AlphaBound:
    """Exact alpha_{p,n}(m, eta) next to its bound 1 ^ m ||Q_{p,n}(1) / sum c_{q,n}||.

    ``eta`` defaults to the exact eta_p of the flow.
    """
    if m < 0:
        raise ValueError("alpha needs a nonnegative mass")
    sg = semigroup_of(model)
    ones = sg.ones(p, n)
    if eta is None:
        eta = run_flow(model, p, check=False).etas[p] or model.birth_law(p)
    weighted = m * integrate(eta, ones)
    tail = sg.c_tail(p, n)
    if tail <= 0:
        if weighted <= 0:
            logger.warning(f"degenerate alpha at p={p}, n={n}: zero mass and no immigration")
            return AlphaBound(0.0, 0.0, degenerate=True)
        return AlphaBound(1.0, 1.0)
    return AlphaBound(weighted / (weighted + tail), min(1.0, m * float(ones.max()) / tail))


@functools.lru_cache(maxsize=4096)
def mass_envelope(model: BranchingModel, n: int) -> tuple[float, float]:
    """I_n = [m_-(n), m_+(n)] built from the potential bounds."""
    model._check(n)
    lower = upper = 0.0
    for p in range(n + 1):
        g_lo = math.prod(model.potential(q).g_minus for q in range(p, n))
        g_hi = math.prod(model.potential(q).g_plus for q in range(p, n))
        mu_mass = model.immigration_at(p).mass
        lower += mu_mass * g_lo
        upper += mu_mass * g_hi
    return lower, upper


def b_coefficient(model: BranchingModel, p: int, n: int) -> float:
    sg = semigroup_of(model)
    q = sg.q_ratio(p, n)
    tail = sg.c_tail(p, n)
    if tail <= 0:
        # immigration-free Feynman-Kac term
        return 2.0 * q * q * sg.beta(p, n)
    m_pn = mass_envelope(model, p)[1] * float(sg.ones(p, n).max()) / tail
    mixture = math.fsum(sg.c(r, n) / tail * sg.beta(r, n) for r in range(p + 1, n + 1))
    return 2.0 * min(1.0, m_pn) * q * (q * sg.beta(p, n) + mixture)


def b_constants(model: BranchingModel, n: int) -> list[float]:
    """b_{p,n} for p = 0..n; their sum bounds b_n."""
    model._check(n)
    return [b_coefficient(model, p, n) for p in range(n + 1)]


def b_sup(model: BranchingModel, n_max: int) -> tuple[float, np.ndarray]:
    """sup over n <= n_max of b_n, with the whole sequence."""
    totals = np.array([math.fsum(b_constants(model, n)) for n in range(n_max + 1)])
    return float(totals.max()), totals


def semigroup_stats(model: BranchingModel, p: int, n: int) -> SemigroupStats:
    if p > n:
        raise ValueError(f"semigroup needs p <= n, got p={p}, n={n}")
    sg = semigroup_of(model)
    flow = run_flow(model, n, check=False)
    _check_decomposition(model, flow, p, n)
    return SemigroupStats(
        p=p,
        n=n,
        kernel=sg.kernel(p, n),
        normalized=sg.normalized(p, n),
        q_ratio=sg.q_ratio(p, n),
        beta=sg.beta(p, n),
        c=sg.c(p, n),
        alpha=alpha_star(model, p, n, flow.masses[p], flow.etas[p]),
        b=b_coefficient(model, p, n),
    )


def _check_decomposition(model: BranchingModel, flow: FlowTrajectory, p: int, n: int) -> None:
    sg = semigroup_of(model)
    split = apply_kernel(flow.gammas[p], sg.kernel(p, n)).weights.copy()
    full = np.zeros_like(split)
    for q in range(n + 1):
        term = apply_kernel(model.immigration_at(q), sg.kernel(q, n)).weights
        full += term
        if q > p:
            split += term
    target = flow.gammas[n].weights
    if not (_close(split, target) and _close(full, target)):
        raise FlowConsistencyError(f"semigroup decomposition fails at p={p}, n={n}")


def phi(model: BranchingModel, p: int, n: int, eta: ProbabilityMeasure) -> ProbabilityMeasure:
    """Phi_{p,n}(eta) = eta Q_{p,n} / eta Q_{p,n}(1)."""
    return normalize(apply_kernel(eta, semigroup_of(model).kernel(p, n)))


def iterate_gamma(
    model: BranchingModel, p: int, n: int, m: float, eta: ProbabilityMeasure
) -> tuple[float, ProbabilityMeasure | None]:
    out: tuple[float, ProbabilityMeasure | None] = (m, eta)
    for q in range(p, n):
        out = gamma_step(model, q, *out)
    return out


def gamma_semigroup(
    model: BranchingModel, p: int, n: int, m: float, eta: ProbabilityMeasure, check: bool = True
) -> tuple[float, ProbabilityMeasure]:
    """Gamma_{p,n}(m, eta) through its closed decomposition.

    The law is the alpha-mixture of Phi_{p,n}(eta) and the c-weighted
    average of Phi_{q,n}(mu_bar_q); with ``check`` the result is compared
    with p..n one-step iterations.
    """
    if eta.space != model.space(p):
        raise SpaceMismatchError(f"eta does not live on E_{p}")
    if m < 0:
        raise ValueError("Gamma needs a nonnegative mass")
    if p == n:
        return m, eta
    sg = semigroup_of(model)
    tail = sg.c_tail(p, n)
    mass = m * integrate(eta, sg.ones(p, n)) + tail
    alpha = alpha_star(model, p, n, m, eta)
    law = alpha.exact * phi(model, p, n, eta).weights
    if tail > 0:
        for q in range(p + 1, n + 1):
            c_q = sg.c(q, n)
            if c_q > 0:
                law = law + (1.0 - alpha.exact) * c_q / tail * phi(model, q, n, model.birth_law(q)).weights
    result = ProbabilityMeasure(model.space(n), law / law.sum())
    if check:
        it_mass, it_law = iterate_gamma(model, p, n, m, eta)
        if not _close(mass, it_mass) or it_law is None or tv_distance(result, it_law) > EXACT_TOL:
            raise FlowConsistencyError(f"Gamma_{{{p},{n}}} decomposition disagrees with iteration")
    return mass, result


def regime_of(model: BranchingModel) -> Regime | None:
    if not model.homogeneous:
        return None
    g = model.potential(0)
    if g.is_constant and abs(g.g_plus - 1.0) <= EXACT_TOL:
        return "unit-potential"
    if g.g_plus < 1.0:
        return "subcritical"
    if g.g_minus > 1.0:
        return "supercritical"
    return None


def _require_homogeneous(model: BranchingModel, what: str) -> None:
    if not model.homogeneous:
        raise RegimeError(f"{what} needs a time-homogeneous model")


@dataclass(frozen=True, eq=False)
class LimitingMeasures:
    gamma: DiscreteMeasure
    eta: ProbabilityMeasure | None
    terms: int
    tail_bound: float


def limiting_measures(model: BranchingModel) -> LimitingMeasures:
    """gamma_inf = sum_{n>=0} mu Q^n for a subcritical homogeneous model."""
    _require_homogeneous(model, "limiting_measures")
    potential = model.potential(0)
    g_plus = potential.g_plus
    if g_plus >= 1.0:
        raise RegimeError(f"limiting measures need g_+ < 1, got {g_plus}")
    mu = model.immigration[-1]
    q = scale_rows(potential, model.kernels[0])
    total = np.zeros(mu.space.size)
    term = mu.weights.copy()
    for n in range(MAX_ITERATIONS):
        total += term
        tail = mu.mass * g_plus ** (n + 1) / (1.0 - g_plus)
        if tail < SERIES_TOL:
            gamma = DiscreteMeasure(mu.space, total)
            logger.debug(f"limiting series stopped after {n + 1} terms (tail {tail:.3e})")
            return LimitingMeasures(gamma, normalize(gamma) if gamma.mass > 0 else None, n + 1, tail)
        term = term @ q.entries
    raise ConvergenceError("limiting series did not reach its tail tolerance")


@dataclass(frozen=True, eq=False)
class FixedPoint:
    eta: ProbabilityMeasure
    lyapunov: float
    iterations: int


def fixed_point_eta(
    model: BranchingModel, start: ProbabilityMeasure | None = None, max_iterations: int = MAX_ITERATIONS
) -> FixedPoint:
    """Fixed point of eta -> Psi_G(eta) M and the exponent log eta_inf(G)."""
    _require_homogeneous(model, "fixed_point_eta")
    potential, kernel = model.potential(0), model.kernels[0]
    eta = start if start is not None else model.birth_law(1 if model.horizon else 0)
    for it in range(1, max_iterations + 1):
        nxt = apply_kernel(boltzmann_gibbs(potential, eta), kernel)
        step = tv_distance(nxt, eta)
        eta = nxt  # type: ignore[assignment]
        if step < FIXED_POINT_TOL:
            logger.debug(f"fixed point reached after {it} iterations")
            return FixedPoint(eta, math.log(integrate(eta, potential)), it)
    raise ConvergenceError(f"no fixed point after {max_iterations} iterations; is M mixing?")


@dataclass(frozen=True)
class MixingCertificate:
    k: int
    epsilon: float
    delta_k: float
    delta_k_minus_1: float

    @property
    def q_bound(self) -> float:
        return self.delta_k / self.epsilon

    def beta_bound(self, steps: int) -> float:
        return (1.0 - self.epsilon**2 / self.delta_k_minus_1) ** (steps // self.k)


def mixing_certificate(model: BranchingModel, k: int) -> MixingCertificate:
    """Certify M^k(x, .) >= eps M^k(y, .) and compute delta_k.

    Only fully supported kernels are accepted, so every pair of paths is
    admissible and delta_k = (g_+/g_-)^k.
    """
    _require_homogeneous(model, "mixing_certificate")
    if k < 1:
        raise ValueError("mixing lag must be at least 1")
    kernel = model.kernels[0]
    if np.any(kernel.entries <= 0):
        raise MissingCertificateError("kernel has structural zeros; no certificate is issued")
    mk = kernel_power(kernel, k).entries
    d = mk.shape[0]
    eps = 1.0
    for x in range(d):
        for y in range(d):
            if x == y:
                continue
            num, den = mk[x], mk[y]
            pos = den > 0
            if np.any(num[pos] <= 0):
                eps = 0.0
            else:
                eps = min(eps, float((num[pos] / den[pos]).min()))
    if eps <= 0:
        raise MissingCertificateError(f"no mixing certificate at lag k={k}")
    potential = model.potential(0)
    ratio = potential.g_plus / potential.g_minus
    return MixingCertificate(k=k, epsilon=eps, delta_k=ratio**k, delta_k_minus_1=ratio ** (k - 1))


@dataclass(frozen=True)
class BoundCheck:
    max_q: float
    q_bound: float
    worst_beta_gap: float
    holds: bool


def verify_mixing_bounds(model: BranchingModel, cert: MixingCertificate, n_max: int) -> BoundCheck:
    """Compare exact q_{p,n} and beta(P_{p,n}) with the certificate's bounds."""
    sg = semigroup_of(model)
    max_q = 0.0
    worst_gap = -math.inf
    for n in range(n_max + 1):
        for p in range(n + 1):
            max_q = max(max_q, sg.q_ratio(p, n))
            worst_gap = max(worst_gap, sg.beta(p, n) - cert.beta_bound(n - p))
    holds = max_q <= cert.q_bound + EXACT_TOL and worst_gap <= EXACT_TOL
    logger.info(f"mixing bounds over n<={n_max}: max q={max_q:.6g} (bound {cert.q_bound:.6g}), holds={holds}")
    return BoundCheck(max_q, cert.q_bound, worst_gap, holds)


def variance_bound_rhs(cert: MixingCertificate, n: int, N: int) -> float:
    """Non-asymptotic bound on E[(gamma_n^N(1)/gamma_n(1) - 1)^2]."""
    if N <= 1:
        raise ValueError("the variance bound needs N > 1")
    if n < 1:
        raise ValueError("the variance bound needs n >= 1")
    ratio = cert.delta_k**2 / cert.epsilon**2
    return (n + 1) / (N - 1) * ratio * (1.0 + ratio / (N - 1)) ** (n - 1)

