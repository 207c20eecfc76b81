"""Adaptive OFU controller with a determinant-doubling policy switch."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import database as dbm
from .errors import NoFeasiblePoint
from .estimator import (
    AttackBudget,
    ConfidenceEllipsoid,
    IncrementalCovariance,
    attacked_radius_apriori,
    clean_radius,
    covariance_from_matrix,
    least_squares_estimate,
    logdet_pd,
)
from .lqr import CostWeights, SystemParams, solve_dare
from .ofu import OfuConfig, optimize_ofu

MODES = ("naive", "self_correcting", "oracle_clean")
LOG2 = math.log(2.0)


@dataclass(frozen=True)
class ControllerConfig:
    """Inputs of the adaptive loop.

    ``mode`` picks the data source and radius: ``naive`` runs the clean
    radius on stored (possibly poisoned) data, ``self_correcting`` inflates
    the radius from the attack budget ``Lambda``, ``oracle_clean`` reads the
    true shadow trajectory. ``gain_bound`` is the configured bound on
    ``|K|``; the controller never uses less than the largest gain it has
    actually applied.
    """

    weights: CostWeights
    mode: str = "oracle_clean"
    s: float = 1.0
    delta: float = 1.0 / 8000
    lam: float = 1.0
    L: float = 0.1
    Lambda: float = 0.0
    gain_bound: float = 0.0
    ofu: OfuConfig = OfuConfig()
    state_guard: float = 1e6
    on_infeasible: str = "relax"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown controller mode {self.mode!r}")
        if self.on_infeasible not in ("relax", "abort"):
            raise ValueError("on_infeasible must be 'relax' or 'abort'")
        if not 0 < self.delta < 1 or self.lam <= 0 or self.s <= 0:
            raise ValueError("need 0 < delta < 1, lam > 0, s > 0")


@dataclass
class SwitchRecord:
    t: int
    theta_hat: np.ndarray
    theta_tilde: np.ndarray
    beta: float
    J_tilde: float
    logdet_vbar: float
    ellipsoid: ConfidenceEllipsoid
    relaxed: bool = False


@dataclass
class ControllerState:
    n: int
    m: int
    lam: float
    theta_tilde: SystemParams | None = None
    K: np.ndarray | None = None
    P: np.ndarray | None = None
    V_now: IncrementalCovariance = None  # type: ignore[assignment]
    logdet_at_switch: float = -math.inf
    t: int = 0
    switch_log: list[int] = field(default_factory=list)
    switches: list[SwitchRecord] = field(default_factory=list)
    state_max: float = 0.0
    gain_max: float = 0.0
    beta: float = float("nan")
    rng: np.random.Generator | None = None

    def __post_init__(self) -> None:
        if self.V_now is None:
            self.V_now = IncrementalCovariance(self.n + self.m, self.lam)
        if self.rng is None:
            self.rng = np.random.default_rng(0)


def new_state(n: int, m: int, lam: float, seed: int | np.random.SeedSequence = 0) -> ControllerState:
    return ControllerState(n=n, m=m, lam=lam, rng=np.random.default_rng(seed))


def should_switch(state: ControllerState) -> bool:
    """True at ``t = 0`` or once ``det(V_now) > 2 det(V_at_switch)``."""
    if state.t == 0 or state.theta_tilde is None:
        return True
    return state.V_now.logdet() > LOG2 + state.logdet_at_switch


def _estimate(state: ControllerState, db: dbm.LearningDatabase, cfg: ControllerConfig):
    p = state.n + state.m
    if len(db) == 0:
        return np.zeros((p, state.n)), cfg.lam * np.eye(p)
    if cfg.mode == "oracle_clean":
        data = dbm.true_matrices(db, cfg.lam)
    else:
        data = dbm.materialize(db, cfg.lam)
    return least_squares_estimate(data), covariance_from_matrix(data.Zbar, cfg.lam)


def _radius(state: ControllerState, shape: np.ndarray, rows: int, cfg: ControllerConfig) -> float:
    if cfg.mode == "self_correcting":
        budget = AttackBudget(
            Lambda=cfg.Lambda,
            state_bound=state.state_max,
            gain_bound=max(cfg.gain_bound, state.gain_max),
            L=cfg.L,
            s=cfg.s,
        )
        return attacked_radius_apriori(budget, rows, cfg.delta, cfg.lam, state.n, state.m)
    return clean_radius(shape, AttackBudget(L=cfg.L, s=cfg.s), cfg.delta, cfg.lam, state.n)


def controller_step(
    state: ControllerState, db: dbm.LearningDatabase, x_t, cfg: ControllerConfig
) -> np.ndarray:
    """One pass of the adaptive loop; returns ``u_t = K x_t``.

    On a switch the estimate and covariance are rebuilt from the database,
    the mode's radius is evaluated, an optimistic parameter is selected and
    its Riccati gain installed. The caller appends ``(z_t, x_{t+1})`` and
    then calls :func:`observe`.

    When the confidence set misses the trace ball and ``on_infeasible`` is
    ``"relax"``, the search is repeated over the ellipsoid alone (only
    controllability and observability enforced) and the switch is flagged.

    :raises NoFeasiblePoint: no admissible point even after relaxing, or the
        set misses the ball with ``on_infeasible="abort"``.
    """
    x_t = np.asarray(x_t, dtype=float).ravel()
    state.state_max = max(state.state_max, float(np.linalg.norm(x_t)))
    if should_switch(state):
        theta_hat, shape = _estimate(state, db, cfg)
        beta = _radius(state, shape, len(db), cfg)
        ellipsoid = ConfidenceEllipsoid(theta_hat, shape, beta, cfg.delta)
        relaxed = False
        try:
            result = optimize_ofu(ellipsoid, cfg.weights, cfg.s, max(state.t, 1), cfg.ofu,
                                  previous=state.theta_tilde, rng=state.rng)
        except NoFeasiblePoint:
            if cfg.on_infeasible != "relax":
                raise
            relaxed = True
            result = optimize_ofu(ellipsoid, cfg.weights, math.inf, max(state.t, 1), cfg.ofu,
                                  previous=state.theta_tilde, rng=state.rng)
        sol = solve_dare(result.params, cfg.weights)
        state.theta_tilde = result.params
        state.K = sol.K
        state.P = sol.P
        state.beta = beta
        state.logdet_at_switch = state.V_now.logdet()
        state.switch_log.append(state.t)
        state.switches.append(
            SwitchRecord(state.t, theta_hat, result.params.theta, beta, sol.J, logdet_pd(shape),
                         ellipsoid, relaxed)
        )
        state.gain_max = max(state.gain_max, float(np.linalg.norm(sol.K, 2)))
    return state.K @ x_t


def observe(state: ControllerState, z_t) -> None:
    """Fold the row written at time ``t`` into the switch statistic and advance."""
    state.V_now.update(z_t)
    state.t += 1
