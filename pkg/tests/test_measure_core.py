import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from app.services.measure_core import (
    DiscreteMeasure,
    MarkovKernel,
    Potential,
    ProbabilityMeasure,
    SpaceMismatchError,
    StateSpace,
    WeightedKernel,
    apply_kernel,
    as_probability,
    boltzmann_gibbs,
    compose,
    dirac,
    dobrushin,
    integrate,
    kernel_power,
    normalize,
    osc,
    scale_rows,
    stationary_distribution,
    tv_distance,
    uniform,
)

E2 = StateSpace.of_size(2)
M = MarkovKernel(E2, E2, np.array([[0.7, 0.3], [0.4, 0.6]]))
MU = DiscreteMeasure(E2, np.array([0.3, 0.2]))


@pytest.mark.parametrize(
    "f,expected",
    [
        ([1.0, 1.0], 0.5),
        ([0.0, 0.0], 0.0),
        ([2.0, -1.0], 0.4),
    ],
)
def test_integrate(f, expected):
    assert integrate(MU, f) == pytest.approx(expected, abs=1e-15)


def test_integrate_rejects_wrong_length():
    with pytest.raises(SpaceMismatchError):
        integrate(MU, [1.0, 2.0, 3.0])


def test_apply_kernel_examples():
    assert_allclose(apply_kernel(MU, M).weights, [0.29, 0.21], atol=1e-15)
    assert_allclose(apply_kernel(MU, MarkovKernel.identity(E2)).weights, MU.weights)
    pi = ProbabilityMeasure(E2, np.array([0.25, 0.75]))
    assert_allclose(apply_kernel(dirac(E2, 0), MarkovKernel.rank_one(pi)).weights, pi.weights)


def test_apply_kernel_space_mismatch():
    e3 = StateSpace.of_size(3)
    with pytest.raises(SpaceMismatchError):
        apply_kernel(DiscreteMeasure(e3, np.ones(3)), M)


def test_compose_with_identity_and_power():
    assert_allclose(compose(M, MarkovKernel.identity(E2)).entries, M.entries)
    assert_allclose(kernel_power(M, 2).entries, M.entries @ M.entries)
    assert_allclose(kernel_power(M, 0).entries, np.eye(2))


@pytest.mark.parametrize(
    "eta,g,expected",
    [
        ([0.5, 0.5], [1.0, 3.0], [0.25, 0.75]),
        ([1.0, 0.0], [2.0, 5.0], [1.0, 0.0]),
        ([0.3, 0.7], [4.0, 4.0], [0.3, 0.7]),
    ],
)
def test_boltzmann_gibbs(eta, g, expected):
    out = boltzmann_gibbs(Potential(E2, np.array(g)), ProbabilityMeasure(E2, np.array(eta)))
    assert_allclose(out.weights, expected, atol=1e-15)


@pytest.mark.parametrize(
    "mu,nu,expected",
    [
        ([0.5, 0.5], [0.5, 0.5], 0.0),
        ([1.0, 0.0], [0.0, 1.0], 1.0),
        ([0.7, 0.3], [0.4, 0.6], 0.3),
    ],
)
def test_tv_distance(mu, nu, expected):
    d = tv_distance(ProbabilityMeasure(E2, np.array(mu)), ProbabilityMeasure(E2, np.array(nu)))
    assert d == pytest.approx(expected, abs=1e-15)


def test_dobrushin_examples():
    assert dobrushin(M) == pytest.approx(0.3, abs=1e-15)
    assert dobrushin(MarkovKernel.identity(E2)) == 1.0
    assert dobrushin(MarkovKernel.rank_one(uniform(E2))) == 0.0


def test_scale_rows():
    q = scale_rows(Potential.constant(E2, 0.5), M)
    assert isinstance(q, WeightedKernel)
    assert_allclose(q.entries, [[0.35, 0.15], [0.2, 0.3]], atol=1e-15)


def test_stationary_distribution():
    assert_allclose(stationary_distribution(M).weights, [4 / 7, 3 / 7], atol=1e-12)


def test_normalize_and_osc():
    assert_allclose(normalize(MU).weights, [0.6, 0.4])
    assert_allclose(as_probability(E2, [3.0, 1.0]).weights, [0.75, 0.25])
    assert osc([2.0, -1.0, 0.5]) == 3.0
    with pytest.raises(ValueError):
        normalize(DiscreteMeasure.zero(E2))


@pytest.mark.parametrize(
    "build",
    [
        lambda: MarkovKernel(E2, E2, np.array([[0.7, 0.4], [0.4, 0.6]])),
        lambda: Potential(E2, np.array([1.0, 0.0])),
        lambda: DiscreteMeasure(E2, np.array([0.1, -0.1])),
        lambda: ProbabilityMeasure(E2, np.array([0.5, 0.6])),
        lambda: StateSpace(("a", "a")),
    ],
)
def test_invalid_objects_are_rejected(build):
    with pytest.raises(ValueError):
        build()


def test_weights_are_read_only():
    with pytest.raises(ValueError):
        MU.weights[0] = 1.0


probabilities = st.lists(st.floats(0.01, 10.0), min_size=3, max_size=3).map(
    lambda w: ProbabilityMeasure(StateSpace.of_size(3), np.array(w) / np.sum(w))
)
positive = st.lists(st.floats(0.05, 20.0), min_size=3, max_size=3).map(
    lambda g: Potential(StateSpace.of_size(3), np.array(g))
)
rows = st.lists(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3), min_size=3, max_size=3).map(
    lambda r: MarkovKernel(StateSpace.of_size(3), StateSpace.of_size(3), np.array(r) / np.sum(r, axis=1, keepdims=True))
)


@settings(max_examples=60, deadline=None)
@given(mu=probabilities, nu=probabilities)
def test_tv_is_a_bounded_symmetric_distance(mu, nu):
    d = tv_distance(mu, nu)
    assert 0.0 <= d <= 1.0 + 1e-12
    assert d == pytest.approx(tv_distance(nu, mu))
    assert tv_distance(mu, mu) == 0.0


@settings(max_examples=60, deadline=None)
@given(g=positive, eta=probabilities)
def test_boltzmann_gibbs_is_a_probability(g, eta):
    out = boltzmann_gibbs(g, eta)
    assert out.mass == pytest.approx(1.0, abs=1e-12)
    assert np.all(out.weights >= 0)


@settings(max_examples=60, deadline=None)
@given(kernel=rows, mu=probabilities, nu=probabilities)
def test_markov_contraction(kernel, mu, nu):
    beta = dobrushin(kernel)
    assert 0.0 <= beta <= 1.0
    assert tv_distance(apply_kernel(mu, kernel), apply_kernel(nu, kernel)) <= beta * tv_distance(mu, nu) + 1e-12


@settings(max_examples=60, deadline=None)
@given(first=rows, second=rows)
def test_dobrushin_is_submultiplicative(first, second):
    assert dobrushin(compose(first, second)) <= dobrushin(first) * dobrushin(second) + 1e-12


@settings(max_examples=60, deadline=None)
@given(mu=probabilities, nu=probabilities, f=st.lists(st.floats(-50.0, 50.0), min_size=3, max_size=3))
def test_integral_gap_is_bounded_by_tv_times_oscillation(mu, nu, f):
    gap = abs(integrate(mu, f) - integrate(nu, f))
    assert gap <= tv_distance(mu, nu) * osc(f) + 1e-9
