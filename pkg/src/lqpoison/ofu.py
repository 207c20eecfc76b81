"""Optimistic parameter selection by projected Newton descent on trace(P)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import Inadmissible, NoFeasiblePoint, NonConvergent
from .estimator import ConfidenceEllipsoid, membership
from .lqr import CostWeights, SystemParams, check_admissible, solve_dare

B_PERTURBATION = 1e-8
_SHRINK = 1e-7


@dataclass(frozen=True)
class OfuConfig:
    steps: int = 200
    step_size: float = 0.1
    restarts: int = 4
    fd_eps: float = 1e-4
    hessian_regularization: float = 1e-6
    max_halvings: int = 20
    dare_tol: float = 1e-12
    dare_max_iter: int = 20_000
    feasibility_iters: int = 200
    ftol: float = 1e-10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 1 or self.step_size <= 0 or self.fd_eps <= 0:
            raise ValueError("steps >= 1, step_size > 0 and fd_eps > 0 are required")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")


@dataclass
class OfuResult:
    params: SystemParams
    J: float
    start_costs: list[float] = field(default_factory=list)
    final_costs: list[float] = field(default_factory=list)
    steps_taken: list[int] = field(default_factory=list)


def _cost(theta: np.ndarray, weights: CostWeights, cfg: OfuConfig, p0=None) -> float:
    try:
        return solve_dare(SystemParams(theta), weights, tol=cfg.dare_tol,
                          max_iter=cfg.dare_max_iter, p0=p0).J
    except (NonConvergent, np.linalg.LinAlgError):
        return math.inf


def _p_at(theta, weights, cfg):
    try:
        return solve_dare(SystemParams(theta), weights, tol=cfg.dare_tol, max_iter=cfg.dare_max_iter).P
    except NonConvergent:
        return None


def trace_p_gradient(params: SystemParams, weights: CostWeights, fd_eps: float = 1e-4,
                     cfg: OfuConfig | None = None) -> np.ndarray:
    """Central finite-difference gradient of ``trace(P)`` with respect to theta."""
    grad, _ = _derivatives(params.theta, weights, fd_eps, cfg or OfuConfig(), hessian=False)
    return grad


def trace_p_hessian(params: SystemParams, weights: CostWeights, fd_eps: float = 1e-4,
                    cfg: OfuConfig | None = None) -> np.ndarray:
    """Finite-difference Hessian over the flattened theta entries."""
    _, hess = _derivatives(params.theta, weights, fd_eps, cfg or OfuConfig(), hessian=True)
    return hess


def _derivatives(theta, weights, h, cfg, hessian=True):
    p0 = _p_at(theta, weights, cfg)
    if p0 is None:
        raise NonConvergent("Riccati iteration failed at the expansion point")
    shape = theta.shape
    flat = theta.ravel()
    d = flat.size

    def f(x):
        val = _cost(x.reshape(shape), weights, cfg, p0)
        if not math.isfinite(val):
            raise NonConvergent("Riccati iteration failed at a perturbed point")
        return val

    f0 = float(np.trace(p0))
    plus = np.empty(d)
    minus = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        plus[i] = f(flat + e)
        minus[i] = f(flat - e)
    grad = ((plus - minus) / (2 * h)).reshape(shape)
    if not hessian:
        return grad, None
    H = np.empty((d, d))
    for i in range(d):
        H[i, i] = (plus[i] - 2 * f0 + minus[i]) / (h * h)
        for j in range(i + 1, d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = h
            ej[j] = h
            val = (f(flat + ei + ej) - f(flat + ei - ej) - f(flat - ei + ej) + f(flat - ei - ej)) / (4 * h * h)
            H[i, j] = H[j, i] = val
    return grad, H


def project_to_confidence(candidate: SystemParams | np.ndarray, ellipsoid: ConfidenceEllipsoid):
    """Radial projection in the ellipsoid's own metric.

    Points already inside are returned unchanged; others are pulled toward
    the center onto the boundary.
    """
    is_params = isinstance(candidate, SystemParams)
    theta = candidate.theta if is_params else np.asarray(candidate, dtype=float)
    delta = theta - ellipsoid.center
    q = float(np.sum(delta * (ellipsoid.shape @ delta)))
    if q <= ellipsoid.radius:
        out = theta
    else:
        out = ellipsoid.center + delta / math.sqrt(q / ellipsoid.radius)
    return SystemParams(out) if is_params else out


def _scale_to_ball(theta: np.ndarray, s: float) -> np.ndarray:
    nrm2 = float(np.sum(theta**2))
    if nrm2 > s * s:
        return theta * (s / math.sqrt(nrm2))
    return theta


def project_to_admissible(candidate: SystemParams, s: float, weights: CostWeights) -> SystemParams:
    """Rescale into the trace ball, then nudge ``B`` once if the pair is not
    controllable or observable."""
    if s <= 0:
        raise ValueError("s must be positive")
    theta = _scale_to_ball(candidate.theta, s)
    params = SystemParams(theta)
    if check_admissible(params, weights, s):
        return params
    n = params.n
    nudged = theta.copy()
    b_block = nudged[n:]
    sign = np.where(b_block >= 0, 1.0, -1.0)
    nudged[n:] = b_block + B_PERTURBATION * sign
    nudged = _scale_to_ball(nudged, s)
    params = SystemParams(nudged)
    if check_admissible(params, weights, s):
        return params
    raise Inadmissible("candidate is not controllable/observable after perturbation")


def _euclid_project_ellipsoid(theta, center, eigvals, eigvecs, radius):
    delta = theta - center
    rot = eigvecs.T @ delta
    weighted = float(np.sum(eigvals[:, None] * rot**2))
    if weighted <= radius:
        return theta

    def g(mu):
        return float(np.sum(eigvals[:, None] * (rot / (1.0 + mu * eigvals[:, None])) ** 2)) - radius

    hi = 1.0 / eigvals.min()
    while g(hi) > 0:
        hi *= 4.0
    mu = optimize.brentq(g, 0.0, hi, xtol=1e-14, rtol=1e-14)
    return center + eigvecs @ (rot / (1.0 + mu * eigvals[:, None]))


class _Feasible:
    """Maps arbitrary points into ellipsoid ∩ trace ball ∩ admissible pairs."""

    def __init__(self, ellipsoid: ConfidenceEllipsoid, s: float, weights: CostWeights, cfg: OfuConfig):
        self.ell = ellipsoid
        self.s = s
        self.weights = weights
        self.cfg = cfg
        self.eigvals, self.eigvecs = np.linalg.eigh(ellipsoid.shape)
        self.inner_radius = ellipsoid.radius * (1 - _SHRINK)
        self.inner_s = s * (1 - _SHRINK)

    def inside(self, theta) -> bool:
        return membership(self.ell, theta) and float(np.sum(theta**2)) <= self.s**2

    def __call__(self, theta: np.ndarray) -> np.ndarray | None:
        """Radial ellipsoid projection then ball rescaling, repaired by
        alternating Euclidean projections when the rescaling leaves the
        ellipsoid."""
        theta = project_to_confidence(theta, self.ell)
        theta = _scale_to_ball(theta, self.s)
        if not membership(self.ell, theta):
            theta = self.euclid(theta)
            if theta is None:
                return None
        return self._admissible(theta)

    def euclid(self, theta: np.ndarray) -> np.ndarray | None:
        """Dykstra projection onto the (slightly shrunken) ellipsoid ∩ ball."""
        x = np.array(theta, dtype=float)
        p_corr = np.zeros_like(x)
        q_corr = np.zeros_like(x)
        for _ in range(self.cfg.feasibility_iters):
            y = _euclid_project_ellipsoid(x + p_corr, self.ell.center, self.eigvals, self.eigvecs,
                                          self.inner_radius)
            p_corr = x + p_corr - y
            x_new = _scale_to_ball(y + q_corr, self.inner_s)
            q_corr = y + q_corr - x_new
            if self.inside(x_new) and np.max(np.abs(x_new - x)) < 1e-13:
                return x_new
            x = x_new
        return x if self.inside(x) else None

    def project_euclid(self, theta: np.ndarray) -> np.ndarray | None:
        x = self.euclid(theta)
        return None if x is None else self._admissible(x)

    def _admissible(self, theta):
        try:
            params = project_to_admissible(SystemParams(theta), self.s, self.weights)
        except Inadmissible:
            return None
        if not self.inside(params.theta):
            return None
        return params.theta


def _random_interior(ellipsoid: ConfidenceEllipsoid, rng: np.random.Generator) -> np.ndarray:
    chol = linalg.cholesky(ellipsoid.shape, lower=True)
    g = rng.standard_normal(ellipsoid.center.shape)
    g /= np.linalg.norm(g)
    scale = math.sqrt(ellipsoid.radius) * rng.random() ** (1.0 / g.size)
    return ellipsoid.center + linalg.solve_triangular(chol.T, g * scale, lower=False)


def _descend(theta, weights, feasible: _Feasible, cfg: OfuConfig):
    J = _cost(theta, weights, cfg)
    taken = 0
    for _ in range(cfg.steps):
        try:
            grad, H = _derivatives(theta, weights, cfg.fd_eps, cfg)
        except NonConvergent:
            try:
                grad, H = _derivatives(theta, weights, cfg.fd_eps / 10, cfg)
            except NonConvergent:
                break
        g = grad.ravel()
        if not np.any(g):
            break
        mu = cfg.hessian_regularization * max(float(np.max(np.abs(H))), 1e-300)
        try:
            c = linalg.cho_factor(H + mu * np.eye(H.shape[0]), lower=True)
            direction = linalg.cho_solve(c, g)
        except linalg.LinAlgError:
            direction = g
        direction = direction.reshape(theta.shape)
        # Newton step with the ellipsoid-metric projection; when it stalls
        # (typically on the boundary) fall back to a Euclidean projected
        # gradient step, which can slide along the boundary.
        accepted = False
        for step_dir, project in ((direction, feasible), (grad, feasible.project_euclid)):
            alpha = cfg.step_size
            for _ in range(cfg.max_halvings + 1):
                cand = project(theta - alpha * step_dir)
                if cand is not None:
                    J_new = _cost(cand, weights, cfg)
                    if J_new < J:
                        gain = J - J_new
                        theta, J, accepted = cand, J_new, True
                        break
                alpha *= 0.5
            if accepted:
                break
        if not accepted:
            break
        taken += 1
        if gain <= cfg.ftol * max(1.0, abs(J)):
            break
    return theta, J, taken


def optimize_ofu(
    ellipsoid: ConfidenceEllipsoid,
    weights: CostWeights,
    s: float,
    t: int,
    cfg: OfuConfig = OfuConfig(),
    previous: SystemParams | None = None,
    rng: np.random.Generator | None = None,
) -> OfuResult:
    """Multi-start projected Newton search over the ellipsoid ∩ admissible set.

    Starts are the ellipsoid center, ``previous`` when supplied, then random
    interior draws; the lowest final cost wins, earlier starts on ties.

    :raises NoFeasiblePoint: no start could be mapped into the feasible set.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    feasible = _Feasible(ellipsoid, s, weights, cfg)
    starts = [ellipsoid.center]
    if previous is not None:
        starts.append(previous.theta)
    attempts = 0
    result = OfuResult(params=None, J=math.inf)  # type: ignore[arg-type]
    best = None
    while len(result.start_costs) < cfg.restarts and attempts < cfg.restarts + 20:
        if attempts < len(starts):
            raw = starts[attempts]
        else:
            raw = _random_interior(ellipsoid, rng)
        attempts += 1
        x0 = feasible(np.array(raw, dtype=float))
        if x0 is None:
            continue
        J0 = _cost(x0, weights, cfg)
        if not math.isfinite(J0):
            continue
        theta, J, taken = _descend(x0, weights, feasible, cfg)
        result.start_costs.append(J0)
        result.final_costs.append(J)
        result.steps_taken.append(taken)
        if best is None or J < best[1]:
            best = (theta, J)
    if best is None:
        raise NoFeasiblePoint("no admissible point found in the confidence ellipsoid")
    result.params = SystemParams(best[0])
    result.J = best[1]
    return result


def select_optimistic(
    ellipsoid: ConfidenceEllipsoid,
    weights: CostWeights,
    s: float,
    t: int,
    cfg: OfuConfig = OfuConfig(),
    previous: SystemParams | None = None,
    rng: np.random.Generator | None = None,
) -> SystemParams:
    """Optimistic parameter: approximately minimizes ``trace(P)`` over the
    confidence ellipsoid intersected with the admissible set."""
    return optimize_ofu(ellipsoid, weights, s, t, cfg, previous, rng).params
