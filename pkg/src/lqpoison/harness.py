"""Plant simulation, Monte Carlo orchestration and empirical regret."""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import database as dbm
from .controller import ControllerConfig, controller_step, new_state, observe
from .errors import DegenerateCurve, LengthMismatch, MissingSnapshot, NoFeasiblePoint, NonConvergent
from .estimator import AttackBudget, clean_radius, covariance_from_matrix, least_squares_estimate
from .lqr import SystemParams, solve_dare

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """SplitMix64 finalizer, used to derive per-episode seeds."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def episode_seed(base_seed: int, index: int) -> int:
    """Seed of episode ``index``: ``splitmix64((base_seed << 32) ^ index)``."""
    return splitmix64(((base_seed & 0xFFFFFFFF) << 32) ^ (index & 0xFFFFFFFF))


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian process noise with per-component std ``sigma``.

    ``L`` is the sub-Gaussian constant fed to the radius formulas; a Gaussian
    is sub-Gaussian with constant ``sigma``, so ``L >= sigma`` is enforced
    unless ``allow_small_L`` is set.
    """

    sigma: float = 0.1
    L: float = 0.1
    allow_small_L: bool = False

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.L < self.sigma and not self.allow_small_L:
            raise ValueError(f"L={self.L} is below sigma={self.sigma}")

    @classmethod
    def strict(cls) -> "NoiseModel":
        """Unit-covariance noise with ``L = 1``."""
        return cls(sigma=1.0, L=1.0)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.sigma * rng.standard_normal(n)


def simulate_step(theta_star: SystemParams, x, u, noise) -> np.ndarray:
    """``A x + B u + noise``; ``noise`` is the drawn vector."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    return theta_star.A @ x + theta_star.B @ u + np.asarray(noise, dtype=float).ravel()


@dataclass(frozen=True)
class EpisodeConfig:
    theta_star: SystemParams
    controller: ControllerConfig
    horizon: int
    noise: NoiseModel = NoiseModel()
    attack: dbm.AttackPlan = dbm.AttackPlan()
    track_coverage: bool = False


@dataclass
class EpisodeTrace:
    """Per-step record of one episode.

    ``x`` holds ``x_0 .. x_{T+1}``, ``u`` and ``cost`` hold steps
    ``0 .. T``. ``theta_tilde`` is the parameter in force at each step.
    """

    index: int
    seed: int
    mode: str
    x: np.ndarray
    u: np.ndarray
    cost: np.ndarray
    switch: np.ndarray
    beta: np.ndarray
    theta_tilde: np.ndarray
    switches: list = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""
    coverage: np.ndarray | None = None
    star_in_switch_sets: bool = True
    final_theta_hat: np.ndarray | None = None
    gain_max: float = 0.0
    db: dbm.LearningDatabase | None = None

    @property
    def horizon(self) -> int:
        return len(self.cost) - 1

    @property
    def state_max(self) -> np.ndarray:
        """Running maximum of ``|x_t|`` (nondecreasing)."""
        return np.maximum.accumulate(np.linalg.norm(self.x[: len(self.cost)], axis=1))

    @property
    def switch_steps(self) -> list[int]:
        return [int(t) for t in np.flatnonzero(self.switch)]


def run_episode(cfg: EpisodeConfig, seed: int, index: int = 0, keep_db: bool = False) -> EpisodeTrace:
    """Simulate ``horizon + 1`` controller steps from ``x_0 = 0``.

    Noise and solver randomness come from independent children of
    ``SeedSequence(seed)``.
    """
    theta_star = cfg.theta_star
    ctrl = cfg.controller
    n, m = theta_star.n, theta_star.m
    p = n + m
    T = cfg.horizon
    noise_seq, ofu_seq = np.random.SeedSequence(seed).spawn(2)
    noise_rng = np.random.default_rng(noise_seq)
    state = new_state(n, m, ctrl.lam, ofu_seq)
    db = dbm.LearningDatabase(n, m, capacity=T + 2)

    xs = np.zeros((T + 2, n))
    us = np.zeros((T + 1, m))
    costs = np.zeros(T + 1)
    switch = np.zeros(T + 1, dtype=bool)
    betas = np.full(T + 1, np.nan)
    tildes = np.full((T + 1, p, n), np.nan)
    coverage = np.ones(T + 1, dtype=bool) if cfg.track_coverage else None
    Q, R = ctrl.weights.Q, ctrl.weights.R
    cov_V = ctrl.lam * np.eye(p)
    cov_ZX = np.zeros((p, n))
    cov_budget = AttackBudget(L=ctrl.L, s=ctrl.s)

    trace = EpisodeTrace(index, seed, ctrl.mode, xs, us, costs, switch, betas, tildes)
    x = xs[0]
    last = T
    try:
        for t in range(T + 1):
            if cfg.track_coverage:
                # Confidence set built from the data seen so far (t rows).
                theta_hat_t = np.linalg.solve(cov_V, cov_ZX)
                d = theta_hat_t - theta_star.theta
                beta_t = clean_radius(cov_V, cov_budget, ctrl.delta, ctrl.lam, n)
                coverage[t] = float(np.sum(d * (cov_V @ d))) <= beta_t
            n_switch = len(state.switch_log)
            u = controller_step(state, db, x, ctrl)
            if len(state.switch_log) > n_switch:
                switch[t] = True
                rec = state.switches[-1]
                d = rec.theta_hat - theta_star.theta
                if float(np.sum(d * (rec.ellipsoid.shape @ d))) > rec.beta:
                    trace.star_in_switch_sets = False
            us[t] = u
            betas[t] = state.beta
            tildes[t] = state.theta_tilde.theta
            costs[t] = float(x @ Q @ x + u @ R @ u)
            x_next = simulate_step(theta_star, x, u, cfg.noise.draw(noise_rng, n))
            z = np.concatenate([x, u])
            dbm.append(db, z, x_next)
            dbm.apply_attack(db, cfg.attack, len(db))
            observe(state, z)
            if cfg.track_coverage:
                cov_V += np.outer(z, z)
                cov_ZX += np.outer(z, x_next)
            xs[t + 1] = x_next
            x = x_next
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > ctrl.state_guard:
                raise OverflowError(f"state norm exceeded {ctrl.state_guard} at t={t + 1}")
    except (NoFeasiblePoint, NonConvergent, OverflowError) as exc:
        trace.aborted = True
        trace.abort_reason = f"{type(exc).__name__}: {exc}"
        last = t

    if trace.aborted:
        # Truncate to the steps actually completed.
        trace.x = xs[: last + 1]
        trace.u = us[:last]
        trace.cost = costs[:last]
        trace.switch = switch[:last]
        trace.beta = betas[:last]
        trace.theta_tilde = tildes[:last]
        if coverage is not None:
            coverage = coverage[:last]
    trace.switches = state.switches
    trace.coverage = coverage
    trace.gain_max = state.gain_max
    if len(db):
        data = dbm.true_matrices(db, ctrl.lam) if ctrl.mode == "oracle_clean" else dbm.materialize(db, ctrl.lam)
        trace.final_theta_hat = least_squares_estimate(data)
    if keep_db:
        trace.db = db
    return trace


def _run_indexed(args):
    cfg, base_seed, index, keep_db = args
    return run_episode(cfg, episode_seed(base_seed, index), index, keep_db)


@dataclass
class MonteCarloSummary:
    n_runs: int
    aborted: int
    mean_regret: np.ndarray | None
    max_regret: np.ndarray | None
    switch_histogram: dict[int, int]
    J_star: float


def optimal_cost(cfg: EpisodeConfig) -> float:
    """Average cost of the optimal policy under the episode's noise level."""
    sol = solve_dare(cfg.theta_star, cfg.controller.weights)
    return float(np.trace(sol.P)) * cfg.noise.sigma**2


def monte_carlo(cfg: EpisodeConfig, n_runs: int, base_seed: int = 0, workers: int = 1,
                keep_db: bool = False) -> tuple[list[EpisodeTrace], MonteCarloSummary]:
    """Run ``n_runs`` independent episodes and aggregate them.

    Aborted episodes are reported in the summary and left out of the
    regret curves.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    jobs = [(cfg, base_seed, i, keep_db) for i in range(n_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_indexed, jobs))
    else:
        traces = [_run_indexed(j) for j in jobs]
    return traces, summarize(traces, optimal_cost(cfg))


def summarize(traces: list[EpisodeTrace], J_star: float) -> MonteCarloSummary:
    ordered = sorted(traces, key=lambda tr: tr.index)
    complete = [tr for tr in ordered if not tr.aborted]
    mean_curve = max_curve = None
    if complete:
        mean_curve = empirical_regret(complete, J_star)
        per_run = np.array([cumulative_regret(tr, J_star) for tr in complete])
        max_curve = per_run.max(axis=0)
    hist = Counter(len(tr.switch_steps) for tr in ordered)
    return MonteCarloSummary(
        n_runs=len(ordered),
        aborted=sum(tr.aborted for tr in ordered),
        mean_regret=mean_curve,
        max_regret=max_curve,
        switch_histogram=dict(sorted(hist.items())),
        J_star=J_star,
    )


def cumulative_regret(trace: EpisodeTrace, J_star: float) -> np.ndarray:
    """``sum_{s=1}^{t} (c_s - J*)`` for ``t = 1 .. T`` on one trace."""
    return np.cumsum(trace.cost[1:] - J_star)


def empirical_regret(traces, J_star: float) -> np.ndarray:
    """Cumulative regret with ``E[c_t]`` replaced by the cross-episode mean.

    Returns the array ``R_1 .. R_T``.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("no traces")
    lengths = {len(tr.cost) for tr in traces}
    if len(lengths) != 1:
        raise LengthMismatch(f"traces have different lengths: {sorted(lengths)}")
    costs = np.array([tr.cost for tr in sorted(traces, key=lambda tr: tr.index)])
    return np.cumsum(costs.mean(axis=0)[1:] - J_star)


def fit_regret_exponent(curve, burn_in: float = 0.1) -> tuple[float, float]:
    """Least-squares fit of ``log R_t = log c + p log t`` past the burn-in.

    Time is indexed ``t = 1 .. len(curve)``. Nonpositive points are dropped;
    if they make up half the window or more the fit is refused.
    """
    r = np.asarray(curve, dtype=float)
    t = np.arange(1, r.size + 1, dtype=float)
    window = t > burn_in * r.size
    t, r = t[window], r[window]
    positive = r > 0
    if r.size < 2 or positive.sum() < 2 or positive.mean() <= 0.5:
        raise DegenerateCurve("regret curve is not positive over the fit window")
    slope, intercept = np.polyfit(np.log(t[positive]), np.log(r[positive]), 1)
    return float(slope), float(math.exp(intercept))


def _p_cache(theta_tilde: np.ndarray, weights):
    cache: dict[bytes, np.ndarray] = {}
    out = []
    for th in theta_tilde:
        if not np.all(np.isfinite(th)):
            raise MissingSnapshot("parameter history has gaps")
        key = th.tobytes()
        if key not in cache:
            cache[key] = solve_dare(SystemParams(th), weights).P
        out.append(cache[key])
    return out


def regret_decomposition(trace: EpisodeTrace, theta_star: SystemParams, weights, riccati=None):
    """Plug-in evaluation of the three regret terms.

    Conditional expectations of next-state quadratics are replaced by the
    quadratic at the noise-free prediction ``theta_star' z_t``. Terms run over
    ``t = 0 .. T-1`` with ``P_t = P(theta_tilde_t)``. Returns ``(R1, R2, R3)``.
    """
    tildes = trace.theta_tilde
    if tildes is None or len(tildes) < 2:
        raise MissingSnapshot("trace has no parameter history")
    Ps = riccati if riccati is not None else _p_cache(tildes, weights)
    if len(Ps) != len(tildes):
        raise MissingSnapshot("Riccati cache does not match the parameter history")
    R1 = R2 = R3 = 0.0
    for t in range(len(tildes) - 1):
        x = trace.x[t]
        z = np.concatenate([x, trace.u[t]])
        P_t, P_next = Ps[t], Ps[t + 1]
        mean_next = theta_star.theta.T @ z
        pred_tilde = tildes[t].T @ z
        R1 += x @ P_t @ x - mean_next @ P_next @ mean_next
        R2 += mean_next @ (P_t - P_next) @ mean_next
        R3 += pred_tilde @ P_t @ pred_tilde - mean_next @ P_next @ mean_next
    return float(R1), float(R2), float(R3)


def coverage_fraction(traces) -> float:
    """Fraction of episodes whose coverage flag held at every step."""
    flags = [bool(np.all(tr.coverage)) for tr in traces if tr.coverage is not None]
    if not flags:
        raise ValueError("no coverage data; run with track_coverage=True")
    return float(np.mean(flags))


def with_mode(cfg: EpisodeConfig, mode: str) -> EpisodeConfig:
    return replace(cfg, controller=replace(cfg.controller, mode=mode))


def estimation_error(trace: EpisodeTrace, theta_star: SystemParams, which: str = "tilde") -> float:
    """Terminal error of the acted-on (``tilde``) or least-squares (``hat``) estimate."""
    if which == "tilde":
        est = trace.theta_tilde[-1]
    elif which == "hat":
        est = trace.final_theta_hat
    else:
        raise ValueError(which)
    return float(np.linalg.norm(est - theta_star.theta))


def covariance_of(trace: EpisodeTrace, lam: float) -> np.ndarray:
    """``lam I + Z'Z`` over the true rows of the trace."""
    Z = np.hstack([trace.x[: len(trace.u)], trace.u])
    return covariance_from_matrix(Z, lam)
