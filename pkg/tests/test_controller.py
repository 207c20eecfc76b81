import numpy as np
import pytest

from lqpoison import database as dbm
from lqpoison.controller import ControllerConfig, controller_step, new_state, observe, should_switch
from lqpoison.errors import NoFeasiblePoint
from lqpoison.lqr import CostWeights
from lqpoison.ofu import OfuConfig

W = CostWeights(np.eye(1), 0.1 * np.eye(1))
FAST = OfuConfig(steps=10, restarts=2)


def test_switches_at_start_then_on_determinant_doubling():
    state = new_state(1, 1, 1.0)
    db = dbm.LearningDatabase(1, 1)
    cfg = ControllerConfig(W, ofu=FAST)
    assert should_switch(state)
    controller_step(state, db, [0.0], cfg)
    assert state.switch_log == [0]
    # det(V) = 1 at the switch; z = (0.9, 0) gives det 1.81, then (0.5, 0) gives 2.06.
    z = np.array([0.9, 0.0])
    dbm.append(db, z, [0.1])
    observe(state, z)
    assert not should_switch(state)
    z = np.array([0.5, 0.0])
    dbm.append(db, z, [0.1])
    observe(state, z)
    assert should_switch(state)
    controller_step(state, db, [0.1], cfg)
    assert state.switch_log == [0, 2]


def test_action_is_gain_times_state():
    state = new_state(1, 1, 1.0)
    db = dbm.LearningDatabase(1, 1)
    u = controller_step(state, db, [0.7], ControllerConfig(W, ofu=FAST))
    np.testing.assert_allclose(u, state.K @ np.array([0.7]))
    assert state.state_max == pytest.approx(0.7)


def _far_database():
    # Data generated by x' = 3x + 3u: the estimate leaves the unit trace ball.
    db = dbm.LearningDatabase(1, 1)
    rng = np.random.default_rng(0)
    for _ in range(50):
        z = rng.standard_normal(2)
        dbm.append(db, z, [3 * z[0] + 3 * z[1]])
    return db


def test_infeasible_set_relaxes_or_aborts():
    db = _far_database()
    state = new_state(1, 1, 1.0)
    for z in db.z_true:
        observe(state, z)
    state.t = 0
    controller_step(state, db, [0.0], ControllerConfig(W, ofu=FAST, L=0.01, delta=0.5))
    assert state.switches[-1].relaxed
    state = new_state(1, 1, 1.0)
    with pytest.raises(NoFeasiblePoint):
        controller_step(state, db, [0.0], ControllerConfig(W, ofu=FAST, L=0.01, delta=0.5, on_infeasible="abort"))


def test_self_correcting_radius_exceeds_clean():
    db = dbm.LearningDatabase(1, 1)
    for k in range(5):
        dbm.append(db, [0.1 * k, 0.0], [0.1])
    radii = {}
    for mode in ("naive", "self_correcting"):
        state = new_state(1, 1, 1.0)
        state.state_max = 1.0
        controller_step(state, db, [0.0], ControllerConfig(W, mode=mode, Lambda=0.1, gain_bound=1.0, ofu=FAST))
        radii[mode] = state.beta
    assert radii["self_correcting"] > radii["naive"]


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(W, mode="bogus")
    with pytest.raises(ValueError):
        ControllerConfig(W, delta=1.5)
    with pytest.raises(ValueError):
        ControllerConfig(W, on_infeasible="ignore")
