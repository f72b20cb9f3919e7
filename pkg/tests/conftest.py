import pytest

from app.models.schemas import ExperimentSizes, ExperimentSpec, PresetScenario
from app.services.scenarios import build_scenario


def preset_model(name: str, horizon: int = 20):
    return build_scenario(PresetScenario(name=name), horizon).model


@pytest.fixture
def s_one():
    return preset_model("S-ONE")


@pytest.fixture
def s_sub():
    return preset_model("S-SUB")


@pytest.fixture
def s_sup():
    return preset_model("S-SUP")


@pytest.fixture
def s_mix():
    return preset_model("S-MIX")


def small_spec(name: str, seed: int = 11, **sizes) -> ExperimentSpec:
    """Desk-scale sizes with the wider z the multi-comparison checks use in tests."""
    defaults = dict(
        z=4.0,
        horizon=4,
        N=100,
        mean_runs=400,
        N_grid=[50, 158, 500, 1581, 5000],
        rate_runs=150,
        rate_steps=[3],
        rate_orders=[1, 2],
        variance_N=[51, 501],
        variance_runs=1500,
        clt_N=200,
        clt_steps=3,
        sim_replicates=4000,
        sim_steps=4,
        sim_steps_supercritical=3,
        longtime_steps=200,
        bound_steps=15,
        n_prime=50,
        n_prime_grid=[50, 500, 5000],
        birth_runs=1500,
        birth_steps=20,
    )
    defaults.update(sizes)
    return ExperimentSpec(scenario=PresetScenario(name=name), seed=seed, sizes=ExperimentSizes(**defaults))
