import numpy as np
import pytest

from lqpoison.controller import ControllerConfig
from lqpoison.database import AttackPlan
from lqpoison.errors import DegenerateCurve, LengthMismatch, MissingSnapshot
from lqpoison.harness import (
    EpisodeConfig,
    EpisodeTrace,
    NoiseModel,
    cumulative_regret,
    empirical_regret,
    episode_seed,
    fit_regret_exponent,
    monte_carlo,
    optimal_cost,
    regret_decomposition,
    run_episode,
    simulate_step,
    splitmix64,
    summarize,
)
from lqpoison.lqr import CostWeights, SystemParams, solve_dare
from lqpoison.ofu import OfuConfig
from oracles import scalar_dare

W = CostWeights(np.eye(1), 0.1 * np.eye(1))
STAR = SystemParams.from_ab([[0.001]], [[0.001]])
FAST = OfuConfig(steps=10, restarts=2)


def config(mode="oracle_clean", horizon=200, attack=AttackPlan(), **kw):
    ctrl = ControllerConfig(W, mode=mode, Lambda=attack.Lambda, gain_bound=1.0, ofu=FAST, **kw)
    return EpisodeConfig(STAR, ctrl, horizon, NoiseModel(0.1, 0.1), attack)


def fixed_gain_trace(theta_star, K, horizon, seed, sigma=1.0, index=0):
    rng = np.random.default_rng(seed)
    n = theta_star.n
    xs = np.zeros((horizon + 2, n))
    us = np.zeros((horizon + 1, theta_star.m))
    cost = np.zeros(horizon + 1)
    for t in range(horizon + 1):
        us[t] = K @ xs[t]
        cost[t] = xs[t] @ xs[t] + 0.1 * us[t] @ us[t]
        xs[t + 1] = simulate_step(theta_star, xs[t], us[t], sigma * rng.standard_normal(n))
    tildes = np.repeat(theta_star.theta[None], horizon + 1, axis=0)
    sw = np.zeros(horizon + 1, dtype=bool)
    sw[0] = True
    return EpisodeTrace(index, seed, "fixed", xs, us, cost, sw, np.zeros(horizon + 1), tildes)


def test_simulate_step_examples():
    np.testing.assert_array_equal(simulate_step(STAR, [0.0], [0.0], [0.0]), [0.0])
    assert simulate_step(STAR, [1.0], [1.0], [0.0])[0] == pytest.approx(0.002)


def test_seed_derivation():
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert episode_seed(0, 1) != episode_seed(0, 2)
    assert episode_seed(1, 0) != episode_seed(0, 0)


def test_noise_model_requires_l_at_least_sigma():
    with pytest.raises(ValueError):
        NoiseModel(sigma=1.0, L=0.1)
    assert NoiseModel(sigma=1.0, L=0.1, allow_small_L=True).L == 0.1


def test_episode_is_deterministic():
    a = run_episode(config(), 123)
    b = run_episode(config(), 123)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.theta_tilde, b.theta_tilde)
    assert a.switch_steps == b.switch_steps


def test_trace_invariants():
    tr = run_episode(config(mode="naive", attack=AttackPlan("constant_bias", 0.5)), 5)
    assert not tr.aborted
    assert np.all(tr.cost >= 0)
    assert np.all(np.diff(tr.state_max) >= 0)
    assert tr.switch[0] and tr.switch_steps[0] == 0
    assert len(tr.cost) == 201 and tr.x.shape == (202, 1)
    assert np.all(np.isfinite(tr.theta_tilde))


def test_monte_carlo_single_run_repeats_and_order_free():
    t1, _ = monte_carlo(config(horizon=50), 1, base_seed=9)
    t2, _ = monte_carlo(config(horizon=50), 1, base_seed=9)
    np.testing.assert_array_equal(t1[0].cost, t2[0].cost)
    traces, summary = monte_carlo(config(horizon=50), 3, base_seed=9)
    assert len(traces) == 3 and summary.aborted == 0
    shuffled = summarize(traces[::-1], summary.J_star)
    np.testing.assert_array_equal(shuffled.mean_regret, summary.mean_regret)
    assert shuffled.switch_histogram == summary.switch_histogram


def test_aborts_are_reported_not_raised():
    cfg = config(horizon=50, state_guard=1e-6)
    traces, summary = monte_carlo(cfg, 2)
    assert summary.aborted == 2 and summary.mean_regret is None
    assert all("OverflowError" in tr.abort_reason for tr in traces)


def test_regret_of_constant_cost_is_zero():
    tr = fixed_gain_trace(STAR, np.zeros((1, 1)), 10, 0)
    tr.cost[:] = 0.3
    np.testing.assert_array_equal(empirical_regret([tr], 0.3), 0.0)


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        empirical_regret([fixed_gain_trace(STAR, np.zeros((1, 1)), 10, 0),
                          fixed_gain_trace(STAR, np.zeros((1, 1)), 12, 1)], 0.0)


def test_optimal_policy_regret_has_flat_tail():
    star = SystemParams.from_ab([[0.5]], [[1.0]])
    sol = solve_dare(star, W)
    traces = [fixed_gain_trace(star, sol.K, 20000, s, index=s) for s in range(8)]
    curve = empirical_regret(traces, sol.J)
    tail = curve[-len(curve) // 4:]
    slope = np.polyfit(np.arange(tail.size), tail, 1)[0]
    assert abs(slope) <= 0.05 * sol.J


def test_clean_controller_not_below_optimal_cost():
    cfg = config(horizon=400)
    traces, summary = monte_carlo(cfg, 4, base_seed=2)
    costs = np.concatenate([tr.cost[1:] for tr in traces])
    se = costs.std() / np.sqrt(costs.size)
    assert costs.mean() >= summary.J_star - 3 * se
    assert optimal_cost(cfg) == pytest.approx(0.01 * scalar_dare(0.001, 0.001, 1.0, 0.1))


@pytest.mark.parametrize("power", [1.0, 0.5])
def test_exponent_of_exact_powers(power):
    t = np.arange(1, 4001, dtype=float)
    p, c = fit_regret_exponent(t**power)
    assert p == pytest.approx(power, abs=1e-6)
    assert c == pytest.approx(1.0, rel=1e-6)


def test_exponent_with_multiplicative_noise():
    rng = np.random.default_rng(0)
    t = np.arange(1, 4001, dtype=float)
    p, _ = fit_regret_exponent(3 * t**0.7 * (1 + 0.01 * rng.standard_normal(t.size)))
    assert 0.65 <= p <= 0.75


def test_degenerate_curve():
    with pytest.raises(DegenerateCurve):
        fit_regret_exponent(-np.arange(1, 100, dtype=float))


def _hand_trace():
    xs = np.array([[0.5], [-0.2], [0.3], [0.1]])
    us = np.array([[0.1], [0.4], [-0.3]])
    tildes = np.array([[[0.2], [0.7]], [[0.2], [0.7]], [[0.6], [0.3]]])
    return EpisodeTrace(0, 0, "hand", xs, us, np.zeros(3), np.array([1, 0, 1], bool), np.zeros(3), tildes)


def test_decomposition_three_step_hand_oracle():
    star = SystemParams.from_ab([[0.4]], [[0.5]])
    tr = _hand_trace()
    P = [scalar_dare(th[0, 0], th[1, 0], 1.0, 0.1) for th in tr.theta_tilde]
    R1 = R2 = R3 = 0.0
    for t in range(2):
        x, u = tr.x[t, 0], tr.u[t, 0]
        mean = 0.4 * x + 0.5 * u
        pred = tr.theta_tilde[t][0, 0] * x + tr.theta_tilde[t][1, 0] * u
        R1 += x * P[t] * x - mean * P[t + 1] * mean
        R2 += mean * (P[t] - P[t + 1]) * mean
        R3 += pred * P[t] * pred - mean * P[t + 1] * mean
    got = regret_decomposition(tr, star, W)
    np.testing.assert_allclose(got, (R1, R2, R3), rtol=1e-12, atol=1e-12)


def test_decomposition_special_cases():
    star = SystemParams.from_ab([[0.4]], [[0.5]])
    tr = fixed_gain_trace(star, solve_dare(star, W).K, 30, 0)
    R1, R2, R3 = regret_decomposition(tr, star, W)
    assert R2 == 0.0
    assert R3 == pytest.approx(0.0, abs=1e-12)


def test_decomposition_needs_history():
    tr = _hand_trace()
    tr.theta_tilde[1] = np.nan
    with pytest.raises(MissingSnapshot):
        regret_decomposition(tr, STAR, W)
