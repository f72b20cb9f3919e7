import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.models.schemas import FiniteScenarioConfig, GaussianScenarioConfig, PresetScenario
from app.services.reporting import fmt, write_csv
from app.services.scenarios import PRESETS, build_scenario


@pytest.mark.parametrize(
    "name,potential,regime",
    [
        ("S-ONE", [1.0, 1.0], "unit-potential"),
        ("S-SUB", [0.5, 0.5], "subcritical"),
        ("S-SUP", [1.25, 1.25], "supercritical"),
        ("S-MIX", [0.6, 0.8, 0.9], "subcritical"),
    ],
)
def test_finite_presets(name, potential, regime):
    built = build_scenario(PresetScenario(name=name), 5)
    assert built.finite
    assert built.regime == regime
    assert_allclose(built.model.potential(0).values, potential)
    assert built.model.immigration_at(1).mass == pytest.approx(0.5)
    assert built.reference is not None


def test_gaussian_preset_has_no_finite_model():
    built = build_scenario(PresetScenario(name="GAUSS"), 5)
    assert not built.finite
    assert built.regime == "gaussian"
    assert built.sim.potential_value == pytest.approx(1.08)
    with pytest.raises(ValueError):
        built.model


def test_presets_validate_as_configs():
    for config in PRESETS.values():
        again = type(config).model_validate_json(config.model_dump_json())
        assert again == config
    assert isinstance(PRESETS["GAUSS"], GaussianScenarioConfig)


def test_custom_finite_scenario_with_labels_and_reference():
    config = FiniteScenarioConfig(
        labels=["low", "high"],
        kernel=[[0.9, 0.1], [0.2, 0.8]],
        survival=[0.5, 1.0],
        spawn=[[1.0, 0.0], [0.5, 0.5]],
        immigration=[0.4, 0.0],
        reference=[0.5, 0.5],
    )
    built = build_scenario(config, 3)
    assert built.model.space(0).labels == ("low", "high")
    assert_allclose(built.model.potential(0).values, [0.5, 1.5])
    assert built.regime is None


def test_fmt_round_trips_floats():
    assert fmt(0.1 + 0.2) == repr(0.1 + 0.2)
    assert float(fmt(np.float64(1 / 3))) == 1 / 3
    assert fmt(None) == ""
    assert fmt(True) == "true"
    assert fmt(np.int64(7)) == "7"


def test_write_csv(tmp_path):
    path = write_csv(tmp_path / "x.csv", ["a", "b"], [[1, 0.5], [2, None]])
    assert path.read_text() == "a,b\n1,0.5\n2,\n"
