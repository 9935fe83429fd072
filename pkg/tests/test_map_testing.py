import math

import numpy as np
import pytest

from shared.errors import IdentifiabilityError, MapTestError, ZeroProbeError
from shared.forward_problems import build_scenario, custom_scenario, dense_scenario
from shared.map_testing import (
    MapTest,
    PriorSpec,
    calibrate_m0,
    eigenvector_diagnostic,
    eigenvector_map_test,
    eigenvector_prior_mean,
    exact_power_regularized,
    exact_size,
    j_empirical,
    j_true,
    map_decision,
    map_probe,
    map_test,
    posterior_alternative_probability,
    posterior_summary,
    power_from_j,
    power_law_variances,
    residual,
    threshold_c,
    tikhonov_residual,
    unregularized_probe,
    unregularized_test,
    vprime_norm,
)
from shared.simulation import sample_data
from shared.spectral_core import dense_operator, normal_quantile, tstar_t_power


def eigen_scenario():
    """Feature on modes 0 and 1 with tau_k^2 rho_k = 0.4 on both"""
    tau = np.array([1.0, 0.5, 0.25, 0.125])
    scn = dense_scenario(tau, (1.0, 1.0, 0.0, 0.0), (0.8, 0.5, 0.4, 0.3))
    prior = PriorSpec.diagonal([0.4 / tau[0] ** 2, 0.4 / tau[1] ** 2, 0.3, 0.7])
    return scn, prior


def test_prior_validation():
    with pytest.raises(MapTestError):
        PriorSpec.power_law(0.0, 1.0)
    with pytest.raises(MapTestError):
        PriorSpec.diagonal([1.0, -1.0])
    with pytest.raises(MapTestError):
        PriorSpec('gaussian_process')


def test_power_law_variances_rows():
    tau = np.array([1.0, 0.5, 0.0])
    np.testing.assert_allclose(power_law_variances(tau, 2.0, 1.0), [4.0, 1.0, 0.0])
    rows = power_law_variances(tau, np.array([1.0, 3.0]), 0.5)
    assert rows.shape == (2, 3)
    np.testing.assert_allclose(rows[1], [9.0, 4.5, 0.0])


def test_map_probe_large_gamma_tends_to_unregularized(dense4):
    probe = map_probe(dense4, PriorSpec.power_law(1e6, 1.0), 0.01)
    phi0 = unregularized_probe(dense4)
    assert (probe - phi0).norm() <= 1e-6 * phi0.norm()


def test_map_probe_mode_formula(dense4):
    sigma = 0.1
    prior = PriorSpec.power_law(0.7, 2.0)
    tau = dense4.op.singular_values
    rho = 0.49 * tau ** 4
    expected = tau * rho / (tau ** 2 * rho + sigma ** 2) * dense4.op.forward(dense4.phi)
    np.testing.assert_allclose(dense4.op.forward(map_probe(dense4, prior, sigma)), expected, atol=1e-12)


def test_map_probe_ignores_prior_mean(dense4):
    m0 = dense4.u_dagger * 3.0
    with_mean = map_probe(dense4, PriorSpec.power_law(1.0, 1.0, m0=m0), 0.2)
    without = map_probe(dense4, PriorSpec.power_law(1.0, 1.0), 0.2)
    np.testing.assert_allclose(with_mean.values, without.values)


def test_unregularized_probe_norm_deconvolution(full_scenarios):
    scn = full_scenarios[('deconvolution', 1.0)]
    assert unregularized_probe(scn).norm() >= 1e3


def test_pseudo_inverse_residual_deconvolution(full_scenarios):
    scn = full_scenarios[('deconvolution', 5.0)]
    probe = unregularized_probe(scn)
    assert residual(scn, probe).norm() <= 1e-8


def test_threshold_reduces_to_noise_term_for_unregularized(dense4):
    probe = unregularized_probe(dense4)
    assert vprime_norm(dense4, residual(dense4, probe)) == pytest.approx(0.0, abs=1e-12)
    c = threshold_c(dense4, probe, 0.3, 0.1)
    assert c == pytest.approx(0.3 * probe.norm() * normal_quantile(0.9), rel=1e-12)


def test_zero_probe_rejected(dense4):
    with pytest.raises(ZeroProbeError):
        threshold_c(dense4, dense4.grid.zeros(), 0.1, 0.1)


def test_map_test_threshold_must_be_finite(dense4):
    with pytest.raises(MapTestError):
        MapTest(dense4.phi, math.inf, 0.1, 1.0, 'a_priori')


def test_exact_size_equals_alpha_at_boundary(dense4):
    probe = unregularized_probe(dense4)
    test = unregularized_test(dense4, 0.2, 0.1)
    # u with <phi, u> = 0: the unregularized test has exact level alpha
    coeffs = dense4.op.forward(dense4.phi)
    u = dense4.op.inverse(np.array([coeffs[1], -coeffs[0], 0.0, 0.0]))
    assert exact_size(dense4, test, u, 0.2) == pytest.approx(0.1, abs=1e-12)
    assert test.probe.norm() == pytest.approx(probe.norm())


def test_regularized_test_keeps_level_under_hypothesis(dense8, rng):
    sigma, alpha = 0.05, 0.1
    test = map_test(dense8, PriorSpec.power_law(1.0, 1.0), sigma, alpha)
    for _ in range(50):
        w = dense8.grid.function(rng.standard_normal(8))
        w = w * (dense8.rho * rng.uniform() / w.norm())
        u = tstar_t_power(dense8.op, dense8.nu / 2.0, w)
        if dense8.phi.inner(u) > 0:
            u = -u
        assert exact_size(dense8, test, u, sigma) <= alpha + 1e-12


def test_power_is_exact_size_at_truth(dense8):
    sigma, alpha = 0.05, 0.1
    prior = PriorSpec.power_law(2.0, 1.5)
    test = map_test(dense8, prior, sigma, alpha)
    power = exact_power_regularized(dense8, test.probe, sigma, alpha, dense8.u_dagger)
    assert power == pytest.approx(exact_size(dense8, test, dense8.u_dagger, sigma), abs=1e-12)


def test_exact_size_matches_monte_carlo(dense8, rng):
    sigma, alpha, m = 0.05, 0.1, 20000
    test = map_test(dense8, PriorSpec.power_law(1.0, 1.0), sigma, alpha)
    u = dense8.u_dagger * 0.3
    clean = dense8.op.apply(u).values
    data = clean + sigma / math.sqrt(dense8.grid.h) * rng.standard_normal((m, 8))
    rate = float(np.mean(test.decide_batch(data)))
    exact = exact_size(dense8, test, u, sigma)
    assert abs(rate - exact) <= 3 * math.sqrt(exact * (1 - exact) / m) + 1.0 / m


def test_decide_batch_matches_decide(dense4, rng):
    test = map_test(dense4, PriorSpec.power_law(1.0, 1.0), 0.1, 0.1)
    data = rng.standard_normal((20, 4))
    expected = [test.decide(dense4.grid.function(row)) for row in data]
    assert list(test.decide_batch(data)) == expected


def test_power_from_j():
    assert power_from_j(0.0, 0.1, 0.1) == pytest.approx(0.1)
    assert power_from_j(-10.0, 0.1, 0.1) == pytest.approx(1.0)
    values = power_from_j(np.array([1.0, 0.0, -1.0]), 0.5, 0.1)
    assert np.all(np.diff(values) > 0)


def test_j_empirical_with_noiseless_data_is_j_true(dense4):
    probe = map_probe(dense4, PriorSpec.power_law(0.5, 1.0), 0.1)
    y = dense4.op.apply(dense4.u_dagger)
    assert j_empirical(dense4, probe, y) == pytest.approx(j_true(dense4, probe, dense4.u_dagger), rel=1e-10)


def test_j_empirical_averages_to_j_true(dense4, rng):
    sigma = 0.1
    probe = map_probe(dense4, PriorSpec.power_law(0.5, 1.0), sigma)
    values = np.array([j_empirical(dense4, probe, sample_data(dense4, dense4.u_dagger, sigma, rng))
                       for _ in range(10000)])
    se = values.std(ddof=1) / math.sqrt(values.size)
    assert abs(values.mean() - j_true(dense4, probe, dense4.u_dagger)) <= 3 * se


def test_j_of_unregularized_probe(dense4):
    probe = unregularized_probe(dense4)
    expected = -dense4.feature_value / probe.norm()
    assert j_true(dense4, probe, dense4.u_dagger) == pytest.approx(expected, rel=1e-10)


def test_j_without_source_term(dense4):
    probe = map_probe(dense4, PriorSpec.power_law(0.5, 1.0), 0.1)
    flat = custom_scenario(dense4.op, dense4.phi, dense4.u_dagger, rho=0.0)
    expected = -probe.inner(dense4.op.apply(dense4.u_dagger)) / probe.norm()
    assert j_true(flat, probe, dense4.u_dagger) == pytest.approx(expected, rel=1e-10)


def test_posterior_probability_matches_decision(dense4, rng):
    prior = PriorSpec.power_law(1.0, 1.0)
    for _ in range(20):
        y = dense4.grid.function(rng.standard_normal(4))
        p = posterior_alternative_probability(dense4, prior, y, 0.1)
        assert (p > 0.5) == map_decision(dense4, prior, y, 0.1)


def test_posterior_mean_is_map_estimate(dense4):
    prior = PriorSpec.power_law(1.0, 1.0)
    y = dense4.op.apply(dense4.u_dagger)
    summary = posterior_summary(dense4, prior, y, 0.1)
    probe = map_probe(dense4, prior, 0.1)
    assert summary.feature_mean == pytest.approx(probe.inner(y), rel=1e-10)
    assert summary.feature_var > 0


def test_posterior_summary_matches_dense_matrix_formula(dense3, rng):
    op, h, sigma = dense3.op, dense3.grid.h, 0.2
    m0 = dense3.grid.function(rng.standard_normal(3))
    prior = PriorSpec.power_law(0.7, 1.0, m0=m0)
    y = dense3.grid.function(rng.standard_normal(3))

    basis = op.basis_matrix
    forward = basis @ np.diag(op.singular_values) @ basis.T
    prior_cov = basis @ np.diag(prior.variances(op)) @ basis.T / h
    gain = prior_cov @ forward.T @ np.linalg.inv(forward @ prior_cov @ forward.T + sigma ** 2 / h * np.eye(3))
    mean = m0.values + gain @ (y.values - forward @ m0.values)
    post_cov = prior_cov - gain @ forward @ prior_cov

    summary = posterior_summary(dense3, prior, y, sigma)
    np.testing.assert_allclose(summary.mean.values, mean, rtol=1e-10, atol=1e-12)
    assert summary.feature_mean == pytest.approx(h * dense3.phi.values @ mean, rel=1e-10)
    weights = h * dense3.phi.values
    assert summary.feature_var == pytest.approx(weights @ post_cov @ weights, rel=1e-10)


def test_calibrated_m0_makes_map_rule_the_threshold_test(dense8, rng):
    sigma, alpha = 0.05, 0.1
    prior = PriorSpec.power_law(1.0, 1.0)
    test = map_test(dense8, prior, sigma, alpha)
    calibrated = PriorSpec.power_law(1.0, 1.0, m0=calibrate_m0(dense8, test.probe, sigma, alpha))
    clean = dense8.op.apply(dense8.u_dagger)
    for _ in range(200):
        y = clean.with_values(clean.values + sigma / math.sqrt(dense8.grid.h) * rng.standard_normal(8))
        assert map_decision(dense8, calibrated, y, sigma) == test.decide(y)


def test_calibrated_m0_on_deconvolution(rng):
    scn = build_scenario('deconvolution', 1024, beta=1.0)
    sigma, alpha = 0.1, 0.1
    prior = PriorSpec.power_law(1.0, 2.0)
    test = map_test(scn, prior, sigma, alpha)
    calibrated = PriorSpec.power_law(1.0, 2.0, m0=calibrate_m0(scn, test.probe, sigma, alpha))
    for _ in range(1000):
        y = sample_data(scn, scn.u_dagger, sigma, rng)
        assert map_decision(scn, calibrated, y, sigma) == test.decide(y)


def test_calibrate_m0_is_linear_in_target(dense8):
    probe = map_probe(dense8, PriorSpec.power_law(1.0, 1.0), 0.1)
    assert calibrate_m0(dense8, probe, 0.1, 0.1, target=0.0).norm() == 0.0
    w1 = calibrate_m0(dense8, probe, 0.1, 0.1, target=0.3)
    w2 = calibrate_m0(dense8, probe, 0.1, 0.1, target=0.6)
    np.testing.assert_allclose(w2.values, 2.0 * w1.values, rtol=1e-12)


def test_calibrate_m0_not_identifiable(dense4):
    probe = unregularized_probe(dense4)
    with pytest.raises(IdentifiabilityError):
        calibrate_m0(dense4, probe, 0.1, 0.1)


def test_eigenvector_diagnostic():
    scn, prior = eigen_scenario()
    assert eigenvector_diagnostic(scn, prior) == pytest.approx(0.4, rel=1e-12)
    assert eigenvector_diagnostic(scn, PriorSpec.power_law(1.0, 1.0)) is None


def test_single_mode_feature_is_eigenvector():
    op = dense_operator([1.0, 0.5, 0.25])
    scn = custom_scenario(op, op.basis_vector(1), op.basis_vector(1) * 0.5)
    gamma_hat = eigenvector_diagnostic(scn, PriorSpec.power_law(2.0, 1.0))
    assert gamma_hat == pytest.approx(4.0 * 0.5 ** 4)


@pytest.mark.parametrize('sigma, alpha', [(0.1, 0.1), (1.0, 0.05), (0.01, 0.3)])
def test_eigenvector_test_has_level_alpha(sigma, alpha):
    scn, prior = eigen_scenario()
    test = eigenvector_map_test(scn, prior, sigma, alpha)
    assert test.provenance == 'eigenvector_closed_form'
    assert exact_size(scn, test, scn.grid.zeros(), sigma) == pytest.approx(alpha, abs=1e-10)


def test_eigenvector_closed_forms():
    scn, prior = eigen_scenario()
    sigma = 0.3
    kappa = 0.4 / (0.4 + sigma ** 2)
    probe = map_probe(scn, prior, sigma)
    np.testing.assert_allclose(scn.op.adjoint_apply(probe).values, kappa * scn.phi.values, atol=1e-10)
    assert probe.norm() == pytest.approx(kappa * unregularized_probe(scn).norm(), rel=1e-10)
    m0 = eigenvector_prior_mean(scn, prior, sigma, 0.1)
    assert m0.inner(scn.phi) < 0


def test_eigenvector_decisions_match_unregularized(rng):
    scn, prior = eigen_scenario()
    for sigma, alpha in [(0.1, 0.1), (0.5, 0.05)]:
        map_t = eigenvector_map_test(scn, prior, sigma, alpha)
        unreg = unregularized_test(scn, sigma, alpha)
        u = scn.phi * (sigma * rng.standard_normal())
        data = scn.op.apply(u).values + sigma / math.sqrt(scn.grid.h) * rng.standard_normal((10000, 4))
        assert np.array_equal(map_t.decide_batch(data), unreg.decide_batch(data))


def test_eigenvector_mean_requires_eigenvector(dense4):
    with pytest.raises(IdentifiabilityError):
        eigenvector_prior_mean(dense4, PriorSpec.power_law(1.0, 1.0), 0.1, 0.1)


def test_tikhonov_residual(small_scenario):
    prior = PriorSpec.power_law(0.3, small_scenario.mu)
    assert tikhonov_residual(small_scenario, prior, 0.01) <= 1e-8


def test_build_scenario_probe_is_finite_for_shipped_problems():
    scn = build_scenario('differentiation', 256)
    probe = map_probe(scn, PriorSpec.power_law(10.0, scn.mu), 1e-3)
    assert np.all(np.isfinite(probe.values))
