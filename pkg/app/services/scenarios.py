"""Named scenarios and the builders that turn configuration blocks into models."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from app.models.schemas import (
    FiniteScenarioConfig,
    GaussianScenarioConfig,
    PresetScenario,
    RegimeTag,
    ScenarioConfig,
)
from app.services.branching_sim import (
    FiniteScenario,
    GaussianScenario,
    SpawnLaw,
    constant_velocity,
    finite_scenario,
    linear_gaussian_scenario,
)
from app.services.exact_flow import BranchingModel, regime_of
from app.services.measure_core import DiscreteMeasure, MarkovKernel, ProbabilityMeasure, StateSpace, as_probability, uniform

logger = logging.getLogger("scenarios")

TWO_STATE_KERNEL = [[0.7, 0.3], [0.4, 0.6]]
TWO_STATE_MU = [0.3, 0.2]

PRESETS: dict[str, FiniteScenarioConfig | GaussianScenarioConfig] = {
    # G = 1: linear mass growth
    "S-ONE": FiniteScenarioConfig(
        name="S-ONE", kernel=TWO_STATE_KERNEL, survival=[1.0, 1.0], immigration=TWO_STATE_MU, regime="unit-potential"
    ),
    # G = 0.5: bounded mass
    "S-SUB": FiniteScenarioConfig(
        name="S-SUB", kernel=TWO_STATE_KERNEL, survival=[0.5, 0.5], immigration=TWO_STATE_MU, regime="subcritical"
    ),
    # G = 1.25 through certain survival and P(h=1) = 0.75, P(h=2) = 0.25
    "S-SUP": FiniteScenarioConfig(
        name="S-SUP",
        kernel=TWO_STATE_KERNEL,
        survival=[1.0, 1.0],
        spawn=[0.75, 0.25],
        immigration=TWO_STATE_MU,
        regime="supercritical",
    ),
    # non-constant potential G = (0.6, 0.8, 0.9)
    "S-MIX": FiniteScenarioConfig(
        name="S-MIX",
        kernel=[[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]],
        survival=[0.6, 0.8, 0.9],
        immigration=[0.2, 0.1, 0.2],
        regime="subcritical",
    ),
    "GAUSS": GaussianScenarioConfig(),
}


def expand(config: ScenarioConfig) -> FiniteScenarioConfig | GaussianScenarioConfig:
    if isinstance(config, PresetScenario):
        return PRESETS[config.name]
    return config


@dataclass(frozen=True, eq=False)
class BuiltScenario:
    """A simulator-ready scenario plus what the checks need around it."""

    name: str
    sim: FiniteScenario | GaussianScenario
    regime: RegimeTag | None
    reference: ProbabilityMeasure | None = None

    @property
    def finite(self) -> bool:
        return self.sim.finite

    @property
    def model(self) -> BranchingModel:
        if not isinstance(self.sim, FiniteScenario):
            raise ValueError(f"scenario '{self.name}' has no finite-state model")
        return self.sim.model


def build_finite(config: FiniteScenarioConfig, horizon: int) -> BuiltScenario:
    d = len(config.kernel)
    space = StateSpace(tuple(config.labels)) if config.labels else StateSpace.of_size(d)
    kernel = MarkovKernel(space, space, np.asarray(config.kernel, dtype=float))
    mu = DiscreteMeasure(space, np.asarray(config.immigration, dtype=float))
    initial = DiscreteMeasure(space, np.asarray(config.initial, dtype=float)) if config.initial is not None else None
    sim = finite_scenario(
        kernel, config.survival, SpawnLaw(np.asarray(config.spawn, dtype=float)), mu, horizon, initial, config.name
    )
    reference = as_probability(space, config.reference) if config.reference is not None else uniform(space)
    derived = regime_of(sim.model)
    if config.regime is not None and config.regime != derived:
        logger.warning(f"scenario '{config.name}' is tagged {config.regime} but its potential says {derived}")
    return BuiltScenario(config.name, sim, config.regime or derived, reference)


def build_gaussian(config: GaussianScenarioConfig, horizon: int) -> BuiltScenario:
    a, sigma = constant_velocity(config.dt, config.sigma)
    sim = linear_gaussian_scenario(
        config.A if config.A is not None else a,
        config.Sigma if config.Sigma is not None else sigma,
        config.survival,
        config.alpha,
        config.mu_rate,
        config.region,
        velocity_std=config.velocity_std,
        horizon=horizon,
    )
    return BuiltScenario(config.name, sim, "gaussian")


def build_scenario(config: ScenarioConfig, horizon: int) -> BuiltScenario:
    resolved = expand(config)
    if isinstance(resolved, GaussianScenarioConfig):
        return build_gaussian(resolved, horizon)
    return build_finite(resolved, horizon)
