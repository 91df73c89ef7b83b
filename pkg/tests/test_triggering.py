import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from predtrig.specfun import chi2_cdf, chi2_sf, gammainc_lower, gammainc_upper
from predtrig.triggering import (
    ErrorStatistics, chernoff_cdf, closed_form_measure, mahalanobis_sq, priority, priority_chernoff,
    propagate_error_mean, propagation_variance, quantize, quantize_array, safe_inverse,
)

E_MAX = np.array([0.03, 0.03, 0.1, 0.3])


@pytest.mark.parametrize("a", [0.5, 1.0, 1.5, 2.0, 3.5, 10.0])
def test_incomplete_gamma_against_scipy(a):
    for x in np.concatenate([np.linspace(1e-6, 3, 25), np.linspace(3, 80, 40)]):
        assert math.isclose(gammainc_lower(a, x), special.gammainc(a, x), rel_tol=1e-10, abs_tol=1e-14)
        assert math.isclose(gammainc_upper(a, x), special.gammaincc(a, x), rel_tol=1e-10, abs_tol=1e-300)


def test_chi_square_table_values():
    # classical 95% quantiles
    for x, dof in [(3.841458820694124, 1), (5.991464547107979, 2), (9.487729036781154, 4)]:
        assert math.isclose(chi2_cdf(x, dof), 0.95, rel_tol=1e-10)
        assert math.isclose(chi2_sf(x, dof), 0.05, rel_tol=1e-9)


def test_incomplete_gamma_edges():
    assert gammainc_lower(2.0, 0.0) == 0.0 and gammainc_upper(2.0, 0.0) == 1.0
    assert gammainc_lower(2.0, math.inf) == 1.0 and gammainc_upper(2.0, math.inf) == 0.0
    with pytest.raises(ValueError):
        gammainc_lower(0.0, 1.0)


def test_mahalanobis_examples():
    assert mahalanobis_sq(np.zeros(4), np.eye(4)) == 0.0
    assert mahalanobis_sq(np.ones(4), np.eye(4)) == 4.0
    assert mahalanobis_sq([2.0, 0, 0, 0], np.linalg.inv(np.diag([4.0, 1, 1, 1]))) == 1.0


def test_variance_identity_dynamics():
    sigma = 0.3 ** 2
    V = propagation_variance(np.eye(4), sigma * np.eye(4), 2)
    np.testing.assert_allclose(V, 2 * sigma * np.eye(4), rtol=1e-15)
    np.testing.assert_allclose(safe_inverse(V) @ V, np.eye(4), atol=1e-9)


def test_variance_against_monte_carlo(rng, reference_setup):
    A = reference_setup.stats.A_cl[1]
    sigma = reference_setup.models[1].sigma_v
    L = np.linalg.cholesky(sigma)
    e = np.zeros((50_000, 4))
    for _ in range(2):
        e = e @ A.T + rng.standard_normal((50_000, 4)) @ L.T
    np.testing.assert_allclose(np.cov(e.T), propagation_variance(A, sigma, 2), rtol=0.05,
                               atol=0.05 * np.abs(sigma).max())


def test_safe_inverse_handles_singular():
    V = np.diag([1.0, 0.0])
    inv = safe_inverse(V, floor=1e-12)
    assert np.all(np.isfinite(inv)) and inv[1, 1] == 1e12


def test_error_mean_propagation(reference_setup):
    A = reference_setup.stats.A_cl[1]
    e = np.array([0.01, -0.02, 0.05, 0.1])
    np.testing.assert_array_equal(propagate_error_mean(A, np.zeros(4), 1), np.zeros(4))
    np.testing.assert_allclose(propagate_error_mean(A, e, 0), A @ e)


def test_error_mean_matches_estimator_recursion():
    # oracle: the estimation module run with zero noise and no communication
    from predtrig.control import CostSpec, solve_lqr
    from predtrig.dynamics import make_cartpole_model
    from predtrig.estimation import EstimatorDynamics, propagate_banks

    models = [make_cartpole_model() for _ in range(2)]
    gains = solve_lqr(models, CostSpec.uniform(2, np.diag([1.0, 10, 0.1, 0.1]), np.zeros((4, 4)), [[0.1]]))
    dyn = EstimatorDynamics.build(models, gains)
    x = np.array([[0.02, 0.01, 0.0, 0.1], [0, 0, 0, 0]])
    banks = np.zeros((2, 2, 4))
    F = gains.blocks()
    for H in range(4):
        x = np.stack([models[i].A @ x[i] + models[i].B @ (F[i, i] @ x[i]) for i in range(2)])
        banks = propagate_banks(banks, np.zeros((2, 2), bool), x, dyn)
    e0 = np.array([0.02, 0.01, 0.0, 0.1])
    np.testing.assert_allclose(x[0] - banks[0, 0], propagate_error_mean(dyn.A_cl[0], e0, 3), atol=1e-12)


def test_closed_form_measure_examples():
    assert closed_form_measure(5.0, 5.0, 4) == 0.0
    assert closed_form_measure(1e4, 0.0, 4) == pytest.approx(1.0, abs=1e-12)
    val = closed_form_measure(10.0, 8.0, 4)
    assert val == pytest.approx(1 - 2 * math.exp(-1), abs=1e-12)
    assert val == pytest.approx(0.26424, abs=1e-5)
    # numerical integration of the gamma integrand
    num, _ = integrate.quad(lambda t: t ** (2 - 1) * math.exp(-t), 0, 1.0)
    assert val == pytest.approx(num / math.gamma(2), abs=1e-10)


def test_priority_threshold_and_limits():
    for n in (1, 2, 4, 7):
        assert priority(10.0, 10.0, n) == 0.5
        assert priority(1e3, 0.0, n) == pytest.approx(0.0, abs=1e-12)
        assert priority(1.0, 1e3, n) == pytest.approx(1.0, abs=1e-12)
    assert quantize(priority(10.0, 10.0, 4), 4) == quantize(0.5, 4) == 8


def _mc_priority(delta, d_sq, n, rng, samples=100_000):
    chi = (rng.standard_normal((samples, n)) ** 2).sum(axis=1)
    t = d_sq - delta
    if t <= 0:
        return 0.5 * np.mean(chi > -t)
    return 0.5 + 0.5 * np.mean(chi <= t)


def test_priority_against_monte_carlo(rng):
    for _ in range(12):
        n = int(rng.choice([2, 4]))
        delta = rng.uniform(1, 40)
        d_sq = rng.uniform(0, 2 * delta)
        assert abs(priority(delta, d_sq, n) - _mc_priority(delta, d_sq, n, rng)) < 0.02


def test_closed_form_against_monte_carlo(rng):
    for _ in range(8):
        n = int(rng.choice([2, 4]))
        delta, d_sq = rng.uniform(1, 20), rng.uniform(0, 20)
        chi = (rng.standard_normal((100_000, n)) ** 2).sum(axis=1)
        mc = np.mean(chi <= delta - d_sq) if d_sq < delta else 0.0
        assert abs(closed_form_measure(delta, d_sq, n) - mc) < 0.02


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 200.0), st.floats(0.0, 400.0), st.floats(0.0, 400.0), st.sampled_from([1, 2, 4, 6]))
def test_priorities_monotone_in_distance(delta, d1, d2, n):
    lo, hi = sorted((d1, d2))
    assert priority(delta, lo, n) <= priority(delta, hi, n)
    assert priority_chernoff(delta, lo, n) <= priority_chernoff(delta, hi, n)
    for p in (priority(delta, lo, n), priority_chernoff(delta, hi, n)):
        assert 0.0 <= p <= 1.0


def test_chernoff_boundary_and_bound_property():
    assert priority_chernoff(7.0, 7.0, 4) == 0.5
    for n in (2, 4):
        for x in np.linspace(0.01, 5 * n, 60):
            exact = stats.chi2.cdf(x, n)
            beta = x / n
            f = (beta * math.exp(1 - beta)) ** (n / 2)
            if beta < 1:
                assert exact <= f + 1e-12
            elif beta > 1:
                assert 1 - exact <= f + 1e-12
            assert 0.0 < chernoff_cdf(x, n) < 1.0


def test_chernoff_rank_agreement(rng):
    deltas = rng.uniform(1, 60, 1000)
    d_sq = rng.uniform(0, 120, 1000)
    for n in (2, 4):
        exact = np.array([priority(a, b, n) for a, b in zip(deltas, d_sq)])
        approx = priority_chernoff(deltas, d_sq, n)
        # identical induced ordering over all pairs (ties excepted)
        i, j = np.triu_indices(1000, 1)
        se, sa = np.sign(exact[i] - exact[j]), np.sign(approx[i] - approx[j])
        mask = (se != 0) & (sa != 0)
        assert np.all(se[mask] == sa[mask])


def test_quantize_examples():
    assert quantize(0.0, 4) == 0
    assert quantize(1.0, 4) == 15
    assert quantize(0.1, 4, e=[0.05, 0, 0, 0], e_max=E_MAX) == 15
    assert quantize(0.1, 4, e=[0.01, 0, 0, 0], e_max=E_MAX) == 2
    np.testing.assert_array_equal(quantize_array(np.array([0.0, 0.5, 1.0]), 4, np.array([True, False, False])),
                                  [15, 8, 15])


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(1, 8))
def test_quantize_order_preserving(a, b, W):
    lo, hi = sorted((a, b))
    assert quantize(lo, W) <= quantize(hi, W)
    assert 0 <= quantize(hi, W) <= 2 ** W - 1


def test_error_statistics_threshold(reference_setup):
    st_ = reference_setup.stats
    for i in (0, 1, 6):
        V2 = propagation_variance(st_.A_cl[i], reference_setup.models[i].sigma_v, 2)
        assert st_.delta_H[i] == pytest.approx(E_MAX @ np.linalg.inv(V2) @ E_MAX, rel=1e-9)
        np.testing.assert_allclose(st_.V_inv_H[i] @ st_.V_H[i], np.eye(4), atol=1e-9)


def test_error_statistics_methods_agree_on_order(reference_setup, rng):
    st_ = reference_setup.stats
    e = rng.normal(size=(20, 4)) * E_MAX / 4
    PH_c, P0_c = st_.priorities(e, "chernoff")
    PH_e, P0_e = st_.priorities(e, "exact")
    np.testing.assert_array_equal(np.argsort(PH_c, kind="stable"), np.argsort(PH_e, kind="stable"))
    assert np.all((PH_c > 0.5) == (PH_e > 0.5))
    with pytest.raises(ValueError):
        st_.priorities(e, "bogus")


def test_instantaneous_priority_is_zero_horizon_case(reference_setup, rng):
    st_ = reference_setup.stats
    e = rng.normal(size=(20, 4)) * E_MAX / 3
    _, P0 = st_.priorities(e, "exact")
    for i in (1, 6):
        V1 = propagation_variance(st_.A_cl[i], reference_setup.models[i].sigma_v, 1)
        mu = propagate_error_mean(st_.A_cl[i], e[i], 0)
        delta = E_MAX @ np.linalg.inv(V1) @ E_MAX
        assert P0[i] == pytest.approx(priority(delta, mu @ np.linalg.inv(V1) @ mu, 4), rel=1e-9)
