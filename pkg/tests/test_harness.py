import numpy as np
import pytest

from app.models.schemas import Comparison, FiniteScenarioConfig
from app.services.exact_flow import RegimeError
from app.services.harness import (
    CHECKS,
    GAUSSIAN_CHECKS,
    below,
    compare,
    default_checks,
    evaluation_functions,
    finish,
    mean_se,
    run_suite,
    variance_se,
)
from conftest import small_spec

CASES = [
    ("flow_consistency", "S-MIX"),
    ("flow_consistency", "S-SUP"),
    ("bound_dominance", "S-MIX"),
    ("longtime", "S-ONE"),
    ("longtime", "S-SUB"),
    ("longtime", "S-SUP"),
    ("longtime", "S-MIX"),
    ("unbiasedness", "S-MIX"),
    ("unbiasedness", "GAUSS"),
    ("lr_rate", "S-MIX"),
    ("variance_bound", "S-MIX"),
    ("clt", "S-MIX"),
    ("sim_consistency", "S-MIX"),
    ("sim_consistency", "S-SUP"),
    ("sim_consistency", "GAUSS"),
    ("birth_approx", "S-SUB"),
]


@pytest.mark.parametrize("check_id,preset", CASES)
def test_check_passes(check_id, preset):
    result = CHECKS[check_id](small_spec(preset))
    failed = [row.label for row in result.rows if not row.passed]
    assert result.verdict, failed
    assert result.comparisons == len(result.rows)


@pytest.mark.parametrize("check_id,preset", CASES)
def test_check_fails_on_a_biased_estimator(check_id, preset):
    spec = small_spec(preset).model_copy(update={"inject_bias": 1.0})
    assert not CHECKS[check_id](spec).verdict


def test_longtime_rejects_a_wrong_regime_tag():
    spec = small_spec("S-SUB").model_copy(update={"regime": "supercritical"})
    with pytest.raises(RegimeError):
        CHECKS["longtime"](spec)


def test_rate_check_needs_two_decades():
    spec = small_spec("S-MIX", N_grid=[100, 200, 400])
    with pytest.raises(ValueError, match="two decades"):
        CHECKS["lr_rate"](spec)


def test_default_checks():
    assert default_checks(small_spec("GAUSS")) == list(GAUSSIAN_CHECKS)
    assert default_checks(small_spec("S-ONE")) == list(CHECKS)


def test_run_suite_orders_and_validates():
    report = run_suite(small_spec("S-SUB"), ["longtime", "flow_consistency"])
    assert [c.id for c in report.checks] == ["flow_consistency", "longtime"]
    assert report.passed
    with pytest.raises(ValueError, match="unknown"):
        run_suite(small_spec("S-SUB"), ["nonsense"])


def test_gates():
    assert compare("x", 1.0, 1.2, 0.1, 3.0).passed
    assert not compare("x", 1.0, 1.5, 0.1, 3.0).passed
    assert below("x", 1.2, 1.0, 0.1, 3.0).passed
    assert not below("x", 1.5, 1.0, 0.1, 3.0).passed


def test_finish_reports_the_worst_row():
    spec = small_spec("S-ONE")
    rows = [
        Comparison(label="good", statistic=1.0, oracle=1.0, se=0.1, passed=True),
        Comparison(label="bad", statistic=3.0, oracle=1.0, se=0.1, passed=False),
    ]
    result = finish("unbiasedness", spec, rows, 10, "3 SE")
    assert not result.verdict
    assert result.statistic == 3.0
    with pytest.raises(ValueError):
        finish("unbiasedness", spec, [], 10, "3 SE")


def test_standard_errors():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    mean, se = mean_se(x)
    assert mean == 2.5
    assert se == pytest.approx(np.std(x, ddof=1) / 2)
    var, var_se = variance_se(x)
    assert var == pytest.approx(np.var(x, ddof=1))
    assert var_se > 0


def test_evaluation_functions():
    names = [name for name, _ in evaluation_functions(None, 3)]
    assert names == ["one", "ind0"]
    assert evaluation_functions([[1.0, 2.0]], 2)[0][0] == "f0"
    with pytest.raises(ValueError):
        evaluation_functions([[1.0]], 2)


def absorbing_spec():
    # state 1 never leaves, so no power of the kernel has a positive column minimum
    scenario = FiniteScenarioConfig(kernel=[[0.5, 0.5], [0.0, 1.0]], survival=[0.5, 0.6], immigration=[0.3, 0.2])
    return small_spec("S-SUB").model_copy(update={"scenario": scenario})


def test_default_checks_skip_what_needs_a_certificate():
    ids = default_checks(absorbing_spec())
    assert not {"bound_dominance", "variance_bound", "birth_approx"} & set(ids)
    assert "flow_consistency" in ids
    assert "longtime" in ids


def test_run_suite_reports_a_check_that_raised():
    report = run_suite(absorbing_spec(), ["flow_consistency", "bound_dominance"])
    flow, bound = report.checks
    assert flow.id == "flow_consistency" and flow.verdict
    assert bound.id == "bound_dominance" and not bound.verdict
    assert "MissingCertificateError" in bound.detail
    assert bound.comparisons == 0
    assert not report.passed
