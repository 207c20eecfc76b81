import math

import numpy as np
import pytest

from lqpoison.errors import NoFeasiblePoint
from lqpoison.estimator import ConfidenceEllipsoid, membership
from lqpoison.lqr import CostWeights, SystemParams, check_admissible, solve_dare
from lqpoison.ofu import (
    OfuConfig,
    optimize_ofu,
    project_to_admissible,
    project_to_confidence,
    trace_p_gradient,
)
from oracles import grid_ofu_infimum, scalar_dare

W = CostWeights(np.eye(1), 0.1 * np.eye(1))


def ellipsoid(center, shape, radius):
    return ConfidenceEllipsoid(np.asarray(center, float).reshape(2, 1), np.asarray(shape, float), radius)


def test_projection_inside_is_identity_and_outside_lands_on_boundary():
    ell = ellipsoid([0.2, 0.3], np.diag([4.0, 1.0]), 0.04)
    inside = np.array([[0.25], [0.3]])
    np.testing.assert_array_equal(project_to_confidence(inside, ell), inside)
    out = project_to_confidence(np.array([[1.0], [1.0]]), ell)
    assert ell.quadratic(out) == pytest.approx(ell.radius, rel=1e-12)
    proj = project_to_confidence(SystemParams(np.array([[1.0], [1.0]])), ell)
    assert isinstance(proj, SystemParams)


def test_admissible_projection_scales_and_nudges():
    out = project_to_admissible(SystemParams(np.array([[3.0], [4.0]])), 1.0, W)
    assert out.trace_norm_sq() == pytest.approx(1.0)
    nudged = project_to_admissible(SystemParams(np.array([[0.5], [0.0]])), 1.0, W)
    assert nudged.B[0, 0] != 0.0 and check_admissible(nudged, W, 1.0)


def test_gradient_matches_closed_form_derivative():
    a, b = 0.6, 0.4
    grad = trace_p_gradient(SystemParams(np.array([[a], [b]])), W)
    h = 1e-6
    da = (scalar_dare(a + h, b, 1.0, 0.1) - scalar_dare(a - h, b, 1.0, 0.1)) / (2 * h)
    db = (scalar_dare(a, b + h, 1.0, 0.1) - scalar_dare(a, b - h, 1.0, 0.1)) / (2 * h)
    np.testing.assert_allclose(grad.ravel(), [da, db], rtol=1e-5)


@pytest.mark.parametrize("center", [(0.5, 0.3), (0.0, 0.0), (-0.4, 0.6)])
def test_result_is_feasible_and_near_grid_optimum(center):
    ell = ellipsoid(center, np.diag([20.0, 30.0]), 1.0)
    res = optimize_ofu(ell, W, 1.0, 10, OfuConfig(), rng=np.random.default_rng(0))
    assert membership(ell, res.params) or ell.quadratic(res.params.theta) <= ell.radius * (1 + 1e-9)
    assert check_admissible(res.params, W, 1.0)
    assert res.J == pytest.approx(solve_dare(res.params, W).J, rel=1e-9)
    grid = grid_ofu_infimum(center, ell.shape, ell.radius, 1.0, 1.0, 0.1)
    assert res.J <= grid + 1e-3


def test_result_never_worse_than_center():
    ell = ellipsoid((0.7, 0.2), np.diag([50.0, 50.0]), 0.5)
    res = optimize_ofu(ell, W, 1.0, 5, OfuConfig(restarts=2), rng=np.random.default_rng(1))
    start = solve_dare(SystemParams(ell.center), W).J
    assert res.J <= start + 1e-12
    assert all(f <= s + 1e-12 for s, f in zip(res.start_costs, res.final_costs))


def test_infeasible_region_raises():
    ell = ellipsoid((5.0, 5.0), np.diag([100.0, 100.0]), 0.01)
    with pytest.raises(NoFeasiblePoint):
        optimize_ofu(ell, W, 1.0, 1, OfuConfig(restarts=2), rng=np.random.default_rng(0))


def test_relaxed_ball_accepts_far_ellipsoid():
    ell = ellipsoid((5.0, 5.0), np.diag([100.0, 100.0]), 0.01)
    res = optimize_ofu(ell, W, math.inf, 1, OfuConfig(restarts=2), rng=np.random.default_rng(0))
    assert ell.quadratic(res.params.theta) <= ell.radius * (1 + 1e-9)


def test_seeded_search_is_reproducible():
    ell = ellipsoid((0.3, 0.3), np.diag([5.0, 5.0]), 1.0)
    r1 = optimize_ofu(ell, W, 1.0, 3, OfuConfig(restarts=3), rng=np.random.default_rng(4))
    r2 = optimize_ofu(ell, W, 1.0, 3, OfuConfig(restarts=3), rng=np.random.default_rng(4))
    np.testing.assert_array_equal(r1.params.theta, r2.params.theta)
