import math

import numpy as np
import pytest

from lqpoison.errors import DimensionMismatch, NonPositiveDefinite
from lqpoison.estimator import (
    AttackBudget,
    ConfidenceEllipsoid,
    IncrementalCovariance,
    RegressionInputs,
    attacked_radius_apriori,
    attacked_radius_oracle,
    clean_radius,
    covariance,
    det_upper_bound,
    least_squares_estimate,
    logdet_pd,
    membership,
    self_normalized_check,
)


def test_ridge_matches_normal_equations():
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((40, 3))
    X = rng.standard_normal((40, 2))
    est = least_squares_estimate(RegressionInputs(Z, X, 0.5))
    ref = np.linalg.solve(Z.T @ Z + 0.5 * np.eye(3), Z.T @ X)
    np.testing.assert_allclose(est, ref, rtol=1e-10)


def test_single_row_hand_value():
    # (z^2 + 1)^-1 z x with z = 2, x = 3
    est = least_squares_estimate(RegressionInputs(np.array([[2.0]]), np.array([[3.0]]), 1.0))
    assert est[0, 0] == pytest.approx(6.0 / 5.0)


def test_empty_data_gives_zero_estimate():
    est = least_squares_estimate(RegressionInputs(np.zeros((0, 2)), np.zeros((0, 1)), 1.0))
    np.testing.assert_array_equal(est, np.zeros((2, 1)))


def test_row_count_mismatch():
    with pytest.raises(DimensionMismatch):
        RegressionInputs(np.zeros((3, 2)), np.zeros((2, 1)), 1.0)


def test_incremental_covariance_matches_batch():
    rng = np.random.default_rng(1)
    rows = rng.standard_normal((25, 2))
    inc = IncrementalCovariance(2, 1.0)
    for z in rows:
        inc.update(z)
    batch = covariance(rows, 1.0)
    np.testing.assert_allclose(inc.copy(), batch, rtol=1e-12)
    assert inc.logdet() == pytest.approx(np.linalg.slogdet(batch)[1], rel=1e-12)


def test_logdet_rejects_indefinite():
    with pytest.raises(NonPositiveDefinite):
        logdet_pd(np.diag([1.0, -1.0]))


def test_clean_radius_hand_value():
    V = np.diag([2.0, 3.0])
    budget = AttackBudget(L=0.1, s=1.0)
    log_term = 0.5 * math.log(6.0) - math.log(0.1)
    expected = (0.1 * math.sqrt(2 * log_term) + 1.0) ** 2
    assert clean_radius(V, budget, 0.1, 1.0, 1) == pytest.approx(expected, rel=1e-14)


def test_oracle_radius_grows_with_attack_terms():
    V = np.diag([5.0, 4.0])
    budget = AttackBudget(L=0.1, s=1.0)
    base = clean_radius(V, budget, 0.05, 1.0, 1)
    assert attacked_radius_oracle(V, 0.0, 0.0, budget, 0.05, 1.0, 1) == pytest.approx(base, rel=1e-14)
    assert attacked_radius_oracle(V, 0.3, 0.0, budget, 0.05, 1.0, 1) > base
    assert attacked_radius_oracle(V, 0.0, 0.3, budget, 0.05, 1.0, 1) > base


def test_apriori_radius_zero_budget_form():
    budget = AttackBudget(Lambda=0.0, state_bound=2.0, gain_bound=0.5, L=0.1, s=1.0)
    t, delta, lam, n, m = 100, 0.01, 1.0, 1, 1
    p = n + m
    arg = (p * lam + 2 * t * (1 + 0.25) * 4.0) / (p * delta * lam)
    expected = (n * 0.1 * math.sqrt(p * math.log(arg)) + 1.0) ** 2
    assert attacked_radius_apriori(budget, t, delta, lam, n, m) == pytest.approx(expected, rel=1e-14)


def test_apriori_radius_monotone_in_budget():
    vals = [
        attacked_radius_apriori(AttackBudget(Lambda=lam_, state_bound=1.0, gain_bound=1.0, L=0.1), 50, 0.05, 1.0, 1, 1)
        for lam_ in (0.0, 0.01, 0.1, 0.5)
    ]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_det_upper_bound_dominates():
    rng = np.random.default_rng(2)
    Z = rng.standard_normal((30, 2))
    zeta = 0.1 * rng.standard_normal((30, 2))
    Zbar = Z + zeta
    V = np.eye(2) + Zbar.T @ Zbar
    bound = det_upper_bound(np.linalg.norm(Z, axis=1), np.linalg.norm(zeta, axis=1), 1.0, 2)
    assert bound >= np.linalg.det(V)


def test_membership_boundary_is_inclusive():
    ell = ConfidenceEllipsoid(np.zeros((2, 1)), np.diag([1.0, 4.0]), 4.0)
    assert membership(ell, np.array([[2.0], [0.0]]))
    assert membership(ell, np.array([[0.0], [1.0]]))
    assert not membership(ell, np.array([[2.0], [0.1]]))
    with pytest.raises(DimensionMismatch):
        membership(ell, np.zeros((3, 1)))


def test_self_normalized_check_hand_value():
    Z = np.array([[1.0], [2.0]])
    W = np.array([[0.5], [-0.25]])
    V = np.array([[6.0]])
    norm_sq, bound = self_normalized_check(Z, W, V, 1.0, 0.1, 1.0)
    assert norm_sq == pytest.approx(0.0)
    assert bound == pytest.approx(2 * (0.5 * math.log(6.0) - math.log(0.1)))
