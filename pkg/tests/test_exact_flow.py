import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.services.exact_flow import (
    BranchingModel,
    FlowConsistencyError,
    MissingCertificateError,
    RegimeError,
    alpha_star,
    b_constants,
    b_sup,
    fixed_point_eta,
    gamma_semigroup,
    intensity_step,
    iterate_gamma,
    limiting_measures,
    mass_envelope,
    mass_product_formula,
    mckean_flow,
    mixing_certificate,
    mutation_kernel,
    q_kernel,
    regime_of,
    run_flow,
    semigroup_of,
    semigroup_stats,
    variance_bound_rhs,
    verify_mixing_bounds,
)
from app.services.measure_core import (
    DiscreteMeasure,
    MarkovKernel,
    Potential,
    StateSpace,
    normalize,
    tv_distance,
    uniform,
)

E2 = StateSpace.of_size(2)
M = MarkovKernel(E2, E2, np.array([[0.7, 0.3], [0.4, 0.6]]))
MU = DiscreteMeasure(E2, np.array([0.3, 0.2]))


def homogeneous(g, mu=MU, horizon=10, kernel=M):
    return BranchingModel.homogeneous_model(Potential(E2, np.asarray(g, dtype=float)), kernel, mu, horizon)


def test_q_kernel_is_row_scaled_m():
    assert_allclose(q_kernel(homogeneous([1.0, 1.0]), 0).entries, M.entries)
    assert_allclose(q_kernel(homogeneous([0.5, 0.5]), 0).entries, [[0.35, 0.15], [0.2, 0.3]], atol=1e-15)


def test_first_step_of_s_one(s_one):
    flow = run_flow(s_one, 3)
    assert_allclose(flow.gammas[1].weights, [0.59, 0.41], atol=1e-15)
    assert flow.masses[1] == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("n", range(6))
def test_s_sub_masses_are_geometric(s_sub, n):
    flow = run_flow(s_sub, 5)
    assert flow.masses[n] == pytest.approx(1.0 - 0.5 ** (n + 1), abs=1e-14)
    assert mass_envelope(s_sub, n) == pytest.approx((1.0 - 0.5 ** (n + 1),) * 2, abs=1e-14)


def test_intensity_step_edge_cases():
    no_immigration = BranchingModel(
        potentials=(Potential.constant(E2, 1.0),),
        kernels=(M,),
        immigration=(MU, DiscreteMeasure.zero(E2)),
        horizon=5,
    )
    step = intensity_step(MU, no_immigration, 0)
    assert step.mass == pytest.approx(MU.mass)
    assert_allclose(intensity_step(DiscreteMeasure.zero(E2), homogeneous([1, 1]), 0).weights, MU.weights)


@pytest.mark.parametrize("name", ["s_one", "s_sub", "s_sup", "s_mix"])
def test_mckean_route_matches_measure_route(name, request):
    model = request.getfixturevalue(name)
    flow, pair = run_flow(model, 20), mckean_flow(model, 20)
    assert_allclose(pair.masses, flow.masses, rtol=1e-12)
    for a, b in zip(flow.etas, pair.etas):
        assert tv_distance(a, b) <= 1e-12


def test_product_formula_matches_masses(s_mix):
    flow = run_flow(s_mix, 15)
    eta_g = [flow.eta_values(s_mix.potential(n), n) for n in range(15)]
    mu = [s_mix.immigration_at(n).mass for n in range(16)]
    assert_allclose(mass_product_formula(mu, eta_g), flow.masses, rtol=1e-12)


def test_product_formula_broadcasts_over_runs():
    eta_g = np.array([[1.0, 1.0], [0.5, 0.5]])
    out = mass_product_formula([0.5, 0.5, 0.5], eta_g)
    assert_allclose(out, [[0.5, 1.0, 1.5], [0.5, 0.75, 0.875]])


def test_mutation_kernel_mixes_with_birth_law(s_one):
    k = mutation_kernel(s_one, 0, 1.0, uniform(E2))
    alpha = 1.0 / 1.5
    expected = alpha * M.entries + (1 - alpha) * np.array([0.6, 0.4])[None, :]
    assert_allclose(k.entries, expected, atol=1e-15)


def test_mutation_kernel_without_immigration_is_m():
    model = BranchingModel((Potential.constant(E2, 1.0),), (M,), (MU, DiscreteMeasure.zero(E2)), 3)
    assert_allclose(mutation_kernel(model, 0, 1.0, uniform(E2)).entries, M.entries)
    with pytest.raises(ValueError):
        mutation_kernel(model, 0, 0.0, uniform(E2))


@pytest.mark.parametrize("p,n", [(0, 0), (0, 3), (2, 7), (5, 9)])
def test_semigroup_decomposition_and_gamma_semigroup(s_mix, p, n):
    stats = semigroup_stats(s_mix, p, n)
    assert stats.q_ratio >= 1.0
    assert 0.0 <= stats.beta <= 1.0
    flow = run_flow(s_mix, n)
    mass, law = gamma_semigroup(s_mix, p, n, flow.masses[p], flow.etas[p])
    assert mass == pytest.approx(flow.masses[n], rel=1e-12)
    assert tv_distance(law, flow.etas[n]) <= 1e-12
    it_mass, it_law = iterate_gamma(s_mix, p, n, 2.0, flow.etas[p])
    assert it_mass > 0 and it_law is not None


def test_alpha_star_constant_potential_example(s_one):
    a = alpha_star(s_one, 0, 4, 0.5, uniform(E2))
    assert a.exact == pytest.approx(0.2, abs=1e-15)
    assert a.exact <= a.bound
    assert alpha_star(s_one, 0, 4, 0.0, uniform(E2)).exact == 0.0


def test_alpha_is_one_without_immigration():
    model = BranchingModel((Potential.constant(E2, 1.0),), (M,), (MU, DiscreteMeasure.zero(E2)), 4)
    assert alpha_star(model, 0, 3, 0.7, uniform(E2)).exact == 1.0
    degenerate = alpha_star(model, 0, 3, 0.0, uniform(E2))
    assert degenerate.degenerate


def test_alpha_rejects_negative_mass(s_one):
    with pytest.raises(ValueError):
        alpha_star(s_one, 0, 2, -1.0)


@pytest.mark.parametrize(
    "g,expected",
    [
        ([1.0, 1.0], "unit-potential"),
        ([0.5, 0.5], "subcritical"),
        ([0.6, 0.9], "subcritical"),
        ([1.25, 1.25], "supercritical"),
        ([0.8, 1.2], None),
    ],
)
def test_regime_of(g, expected):
    assert regime_of(homogeneous(g)) == expected


def test_limiting_measures_subcritical(s_sub):
    lim = limiting_measures(s_sub)
    assert lim.gamma.mass == pytest.approx(1.0, abs=1e-12)
    flow = run_flow(s_sub, 60)
    assert_allclose(flow.gammas[60].weights, lim.gamma.weights, atol=1e-12)


def test_limiting_measures_need_subcritical(s_one):
    with pytest.raises(RegimeError):
        limiting_measures(s_one)


def test_limiting_measure_without_immigration_is_zero():
    model = BranchingModel((Potential.constant(E2, 0.5),), (M,), (MU, DiscreteMeasure.zero(E2)), 5)
    lim = limiting_measures(model)
    assert lim.gamma.mass == 0.0
    assert lim.eta is None


def test_fixed_point_constant_potential_is_stationary(s_one):
    fp = fixed_point_eta(s_one)
    assert_allclose(fp.eta.weights, [4 / 7, 3 / 7], atol=1e-12)
    assert fp.lyapunov == pytest.approx(0.0, abs=1e-14)


def test_supercritical_growth_rate(s_sup):
    model = s_sup.with_horizon(200)
    flow = run_flow(model, 200, check=False)
    assert abs(math.log(flow.masses[200]) / 200 - math.log(1.25)) < 0.01
    assert fixed_point_eta(model).lyapunov == pytest.approx(math.log(1.25), abs=1e-12)


def test_mixing_certificate_examples(s_one):
    cert = mixing_certificate(s_one, 1)
    assert cert.epsilon == pytest.approx(0.5, abs=1e-15)
    assert cert.delta_k == 1.0
    rank_one = homogeneous([1.0, 1.0], kernel=MarkovKernel.rank_one(normalize(MU)))
    assert mixing_certificate(rank_one, 1).epsilon == pytest.approx(1.0)


def test_mixing_certificate_rejects_structural_zeros():
    sticky = MarkovKernel(E2, E2, np.array([[1.0, 0.0], [0.5, 0.5]]))
    with pytest.raises(MissingCertificateError):
        mixing_certificate(homogeneous([1.0, 1.0], kernel=sticky), 1)


@pytest.mark.parametrize("name", ["s_one", "s_sub", "s_sup", "s_mix"])
def test_exact_quantities_respect_mixing_bounds(name, request):
    model = request.getfixturevalue(name)
    check = verify_mixing_bounds(model, mixing_certificate(model, 1), 15)
    assert check.holds


def test_b_constants_vanish_for_rank_one_kernel_without_immigration():
    pi = normalize(MU)
    model = BranchingModel(
        (Potential.constant(E2, 0.8),), (MarkovKernel.rank_one(pi),), (MU, DiscreteMeasure.zero(E2)), 6
    )
    b = b_constants(model, 5)
    assert_allclose(b[:-1], 0.0, atol=1e-15)


def test_b_sup_is_finite(s_mix):
    sup, totals = b_sup(s_mix, 20)
    assert math.isfinite(sup)
    assert totals.shape == (21,)
    assert sup == totals.max()


def test_variance_bound_rhs():
    cert = mixing_certificate(homogeneous([1.0, 1.0]), 1)
    assert variance_bound_rhs(cert, 5, 101) == pytest.approx(6 / 100 * 4 * 1.04**4, rel=1e-14)
    assert variance_bound_rhs(cert, 1, 101) == pytest.approx(2 / 100 * 4, rel=1e-14)
    with pytest.raises(ValueError):
        variance_bound_rhs(cert, 5, 1)


def test_semigroup_is_cached_per_model(s_one):
    assert semigroup_of(s_one) is semigroup_of(s_one)
    with pytest.raises(ValueError):
        semigroup_of(s_one).kernel(3, 2)


def test_run_flow_detects_tampered_routes(s_one, monkeypatch):
    import app.services.exact_flow as exact_flow

    real = exact_flow.mckean_flow

    def skewed(model, n_max):
        flow = real(model, n_max)
        return exact_flow.FlowTrajectory(flow.gammas, flow.masses * 1.001, flow.etas)

    monkeypatch.setattr(exact_flow, "mckean_flow", skewed)
    with pytest.raises(FlowConsistencyError):
        exact_flow.run_flow(s_one, 3)
