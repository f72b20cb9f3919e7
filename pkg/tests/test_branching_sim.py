import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.services.branching_sim import (
    FiniteScenario,
    FiniteStepLaw,
    Population,
    PopulationLimitError,
    SpawnLaw,
    constant_velocity,
    estimate_intensity,
    finite_scenario,
    linear_gaussian_scenario,
    mass_recursion,
    simulate,
    simulate_counts,
    step_population,
)
from app.services.exact_flow import run_flow
from app.services.measure_core import DiscreteMeasure, MarkovKernel, StateSpace
from app.services.rng import Streams

E2 = StateSpace.of_size(2)
M = MarkovKernel(E2, E2, np.array([[0.7, 0.3], [0.4, 0.6]]))
MU = DiscreteMeasure(E2, np.array([0.3, 0.2]))
REGION = ((0.0, 100.0), (0.0, 100.0))


def gaussian(**overrides):
    a, q = constant_velocity(1.0, 1.0)
    params = dict(A=a, Sigma=q, s=0.9, alpha=0.8, mu_rate=0.5, region=REGION, horizon=10)
    params.update(overrides)
    return linear_gaussian_scenario(**params)


@pytest.mark.parametrize(
    "law,expected",
    [
        (SpawnLaw.single(), 1.0),
        (SpawnLaw.two_point(0.8), 1.2),
        (SpawnLaw(np.array([0.75, 0.25])), 1.25),
        (SpawnLaw(np.array([0.0, 0.0, 1.0])), 3.0),
    ],
)
def test_spawn_law_mean(law, expected):
    assert float(law.mean()) == pytest.approx(expected)


def test_spawn_law_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        SpawnLaw(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        SpawnLaw.two_point(1.5)


def test_gaussian_potential_example():
    assert gaussian().potential_value == pytest.approx(1.08)


def test_gaussian_rejects_invalid_sigma():
    a, _ = constant_velocity()
    bad = -np.eye(4)
    with pytest.raises(ValueError, match="Sigma"):
        gaussian(A=a, Sigma=bad)


def test_certain_death_without_immigration_empties_the_population():
    law = FiniteStepLaw(np.zeros(2), SpawnLaw.single(), M, DiscreteMeasure.zero(E2))
    pop = Population(np.array([0, 0, 1]), np.array([0, 1, 1]), 2)
    nxt = step_population(pop, law, Streams(3, 0), 1)
    assert nxt.owner.size == 0
    assert_array_equal(nxt.counts(), [0, 0])


def test_sure_survival_single_offspring_keeps_sizes():
    law = FiniteStepLaw(np.ones(2), SpawnLaw.single(), M, DiscreteMeasure.zero(E2))
    pop = Population(np.array([0, 0, 0, 1]), np.array([0, 1, 1, 0]), 2)
    nxt = step_population(pop, law, Streams(3, 0), 1)
    assert_array_equal(nxt.counts(), [3, 1])


def test_frozen_gaussian_population():
    scenario = gaussian(A=np.eye(4), Sigma=np.zeros((4, 4)), s=1.0, alpha=1.0, mu_rate=0.0)
    pop = Population(np.array([0, 1]), np.array([[1.0, 2.0, 0.5, 0.5], [3.0, 4.0, 0.0, 0.0]]), 2)
    nxt = step_population(pop, scenario, Streams(5, 0), 1)
    assert_allclose(nxt.states, pop.states)
    assert_array_equal(nxt.owner, pop.owner)


def test_empty_start_without_immigration_gives_zero():
    scenario = gaussian(mu_rate=0.0)
    mean, se = estimate_intensity(scenario, 3, None, 50, seed=1)
    assert mean == 0.0
    assert se == 0.0


def test_finite_scenario_checks_the_potential():
    model = finite_scenario(M, [0.5, 0.5], SpawnLaw.single(), MU, 5).model
    with pytest.raises(ValueError):
        FiniteScenario(model, (np.array([0.5, 0.5]),), (SpawnLaw.two_point(0.5),))


@pytest.mark.parametrize(
    "survival,spawn",
    [
        ([1.0, 1.0], [1.0]),
        ([0.5, 0.5], [1.0]),
        ([0.6, 0.9], [0.5, 0.5]),
    ],
)
def test_mean_counts_match_the_intensity(survival, spawn):
    scenario = finite_scenario(M, survival, SpawnLaw(np.array(spawn)), MU, 4)
    counts = simulate_counts(scenario, 4, 20000, seed=7)
    flow = run_flow(scenario.model, 4)
    mean = counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / np.sqrt(counts.shape[0])
    exact = np.stack([g.weights for g in flow.gammas])
    assert np.all(np.abs(mean - exact) <= 5 * se + 1e-12)


def test_gaussian_mean_count_matches_mass_recursion():
    scenario = gaussian()
    stats = simulate(scenario, 5, 20000, seed=4).stats[:, :, 0]
    oracle = mass_recursion(scenario.potential_value, scenario.mu_rate, 5)
    se = stats.std(axis=0, ddof=1) / np.sqrt(stats.shape[0])
    assert np.all(np.abs(stats.mean(axis=0) - oracle) <= 5 * se)


def test_mass_recursion_values():
    assert_allclose(mass_recursion(0.5, 0.5, 3), [0.5, 0.75, 0.875, 0.9375])
    assert_allclose(mass_recursion(1.0, 0.5, 2, initial=0.0), [0.0, 0.5, 1.0])


def test_results_do_not_depend_on_worker_count():
    scenario = finite_scenario(M, [0.8, 0.9], SpawnLaw.two_point(0.7), MU, 3)
    one = simulate_counts(scenario, 3, 700, seed=9, block_size=100, workers=1)
    many = simulate_counts(scenario, 3, 700, seed=9, block_size=100, workers=4)
    assert_array_equal(one, many)


def test_trajectory_dump_ids():
    scenario = finite_scenario(M, [1.0, 1.0], SpawnLaw.single(), MU, 2)
    result = simulate(scenario, 2, 300, seed=2, dump=5, block_size=100)
    assert {row[0] for row in result.trajectories} <= set(range(5))
    for r in range(5):
        for n in range(3):
            ids = sorted(row[2] for row in result.trajectories if row[0] == r and row[1] == n)
            assert ids == list(range(len(ids)))
            assert len(ids) == int(result.stats[r, n].sum())


def test_population_cap():
    scenario = finite_scenario(M, [1.0, 1.0], SpawnLaw(np.array([0.0, 1.0])), MU, 12)
    with pytest.raises(PopulationLimitError):
        simulate(scenario, 12, 10, seed=1, max_population=100)
    capped = simulate(scenario, 3, 10, seed=1, max_population=100)
    uncapped = simulate(scenario, 3, 10, seed=1)
    assert_array_equal(capped.stats, uncapped.stats)
