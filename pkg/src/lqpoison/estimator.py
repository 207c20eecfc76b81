"""Regularized least squares, covariance bookkeeping and confidence radii."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, NonPositiveDefinite
from .lqr import SystemParams


@dataclass(frozen=True)
class RegressionInputs:
    """Stored regressors ``Zbar`` (t x (n+m)) and targets ``Xbar`` (t x n)."""

    Zbar: np.ndarray
    Xbar: np.ndarray
    lam: float

    def __post_init__(self) -> None:
        if self.Zbar.shape[0] != self.Xbar.shape[0]:
            raise DimensionMismatch(
                f"Zbar has {self.Zbar.shape[0]} rows, Xbar has {self.Xbar.shape[0]}"
            )
        if self.lam <= 0:
            raise ValueError("lambda must be positive")


@dataclass(frozen=True)
class ConfidenceEllipsoid:
    r"""The set :math:`\{\Theta : tr((\hat\Theta - \Theta)^T V (\hat\Theta - \Theta)) \le \beta\}`."""

    center: np.ndarray
    shape: np.ndarray
    radius: float
    delta: float = float("nan")

    def __post_init__(self) -> None:
        p = self.center.shape[0]
        if self.shape.shape != (p, p):
            raise DimensionMismatch(f"shape {self.shape.shape} does not match center {self.center.shape}")
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    def quadratic(self, theta: np.ndarray) -> float:
        d = self.center - theta
        return float(np.sum(d * (self.shape @ d)))


@dataclass(frozen=True)
class AttackBudget:
    """A priori bounds entering the radius formulas.

    ``Lambda`` bounds every attack perturbation, ``state_bound`` is the
    running maximum of the true state norm, ``gain_bound`` bounds the
    feedback gains in use, ``L`` is the sub-Gaussian constant of the noise
    and ``s`` the radius of the parameter trace ball. ``Lambda = 0`` means
    no attack is assumed.
    """

    Lambda: float = 0.0
    state_bound: float = 0.0
    gain_bound: float = 0.0
    L: float = 1.0
    s: float = 1.0

    def __post_init__(self) -> None:
        for name in ("Lambda", "state_bound", "gain_bound", "L", "s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def logdet_pd(M: np.ndarray) -> float:
    """Log-determinant through a Cholesky factor."""
    try:
        c = linalg.cholesky(M, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NonPositiveDefinite(str(exc)) from None
    d = np.diag(c)
    if np.any(d <= 0):
        raise NonPositiveDefinite("non-positive pivot")
    return 2.0 * float(np.sum(np.log(d)))


def least_squares_estimate(inputs: RegressionInputs) -> np.ndarray:
    """Ridge estimate ``(Z'Z + lam I)^-1 Z'X`` via a Cholesky solve."""
    Z, X = inputs.Zbar, inputs.Xbar
    if Z.shape[0] == 0:
        return np.zeros((Z.shape[1], X.shape[1]))
    V = covariance_from_matrix(Z, inputs.lam)
    return linalg.cho_solve(linalg.cho_factor(V, lower=True), Z.T @ X)


def covariance_from_matrix(Z: np.ndarray, lam: float) -> np.ndarray:
    return lam * np.eye(Z.shape[1]) + Z.T @ Z


def covariance(rows: Iterable[Sequence[float]], lam: float, dim: int | None = None) -> np.ndarray:
    """Batch covariance ``lam I + sum z z'``.

    ``dim`` is required when ``rows`` is empty.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    Z = np.array([np.asarray(r, dtype=float).ravel() for r in rows])
    if Z.size == 0:
        if dim is None:
            raise DimensionMismatch("dim is required for an empty row set")
        return lam * np.eye(dim)
    if Z.ndim != 2 or (dim is not None and Z.shape[1] != dim):
        raise DimensionMismatch("rows have inconsistent length")
    return covariance_from_matrix(Z, lam)


class IncrementalCovariance:
    """Rank-one updated ``lam I + sum z z'`` (single writer)."""

    def __init__(self, dim: int, lam: float):
        if lam <= 0:
            raise ValueError("lambda must be positive")
        self.lam = lam
        self.V = lam * np.eye(dim)
        self.count = 0

    def update(self, z) -> None:
        z = np.asarray(z, dtype=float).ravel()
        if z.shape[0] != self.V.shape[0]:
            raise DimensionMismatch(f"row has length {z.shape[0]}, expected {self.V.shape[0]}")
        self.V += np.outer(z, z)
        self.count += 1

    def logdet(self) -> float:
        return logdet_pd(self.V)

    def copy(self) -> np.ndarray:
        return self.V.copy()


def _confidence_log_term(shape: np.ndarray, lam: float, delta: float) -> float:
    # log(det(V)^1/2 det(lam I)^-1/2 / delta)
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    p = shape.shape[0]
    return 0.5 * (logdet_pd(shape) - p * math.log(lam)) - math.log(delta)


def clean_radius(shape: np.ndarray, budget: AttackBudget, delta: float, lam: float, n: int) -> float:
    """Confidence radius for unpoisoned data."""
    log_term = _confidence_log_term(shape, lam, delta)
    return (n * budget.L * math.sqrt(2.0 * log_term) + math.sqrt(lam) * budget.s) ** 2


def attacked_radius_oracle(
    shape: np.ndarray,
    norm_zh: float,
    norm_zy: float,
    budget: AttackBudget,
    delta: float,
    lam: float,
    n: int,
) -> float:
    """Radius for poisoned data given the true attack-term norms.

    ``norm_zh`` and ``norm_zy`` are the spectral norms of ``Zbar' H`` and
    ``Zbar' Y``; only a simulation with access to the true trajectory can
    supply them.
    """
    log_term = _confidence_log_term(shape, lam, delta)
    root_lam = math.sqrt(lam)
    return (
        n * budget.L * math.sqrt(2.0 * log_term)
        + norm_zh / root_lam
        + (root_lam + norm_zy / root_lam) * budget.s
    ) ** 2


def row_norm_bound(budget: AttackBudget) -> float:
    """Bound on stored regressor norms, ``sqrt(1 + C^2) X + Lambda``."""
    return math.sqrt(1.0 + budget.gain_bound**2) * budget.state_bound + budget.Lambda


def attacked_radius_apriori(budget: AttackBudget, t: int, delta: float, lam: float, n: int, m: int) -> float:
    """Radius computable from the attack budget alone."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    p = n + m
    C, X, Lam = budget.gain_bound, budget.state_bound, budget.Lambda
    growth = p * lam + 2.0 * t * ((1.0 + C * C) * X * X + Lam * Lam)
    log_arg = growth / (p * delta * lam)
    root_lam = math.sqrt(lam)
    attack = row_norm_bound(budget) * Lam * t / root_lam
    return (
        n * budget.L * math.sqrt(p * math.log(log_arg))
        + attack
        + (root_lam + attack) * budget.s
    ) ** 2


def log_det_upper_bound(z_norms, zeta_norms, lam: float, p: int) -> float:
    z = np.asarray(z_norms, dtype=float)
    zeta = np.asarray(zeta_norms, dtype=float)
    if z.shape != zeta.shape:
        raise DimensionMismatch("z_norms and zeta_norms differ in length")
    total = p * lam + 2.0 * float(np.sum(z**2) + np.sum(zeta**2))
    return p * math.log(total / p)


def det_upper_bound(z_norms, zeta_norms, lam: float, p: int) -> float:
    """AM-GM bound ``((p lam + 2 sum(|z|^2 + |zeta|^2)) / p) ** p`` on det(Vbar)."""
    return math.exp(log_det_upper_bound(z_norms, zeta_norms, lam, p))


def membership(ellipsoid: ConfidenceEllipsoid, candidate: SystemParams | np.ndarray) -> bool:
    theta = candidate.theta if isinstance(candidate, SystemParams) else np.asarray(candidate)
    if theta.shape != ellipsoid.center.shape:
        raise DimensionMismatch(f"candidate {theta.shape} vs center {ellipsoid.center.shape}")
    return ellipsoid.quadratic(theta) <= ellipsoid.radius


def self_normalized_check(
    Zbar: np.ndarray, W: np.ndarray, shape: np.ndarray, L: float, delta: float, lam: float
) -> tuple[float, float]:
    """Weighted norm of the noise martingale and its high-probability bound.

    Returns ``(norm_sq, bound)`` where ``norm_sq`` is the largest over noise
    components of ``|Zbar' w|^2`` in the inverse-``shape`` metric and
    ``bound = 2 L^2 log(det(V)^1/2 det(lam I)^-1/2 / delta)``. Needs the true
    noise realizations, so it is for tests and diagnostics only.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] != Zbar.shape[0]:
        W = W.T
    S = Zbar.T @ W
    weighted = linalg.cho_solve(linalg.cho_factor(shape, lower=True), S)
    norm_sq = float(np.max(np.sum(S * weighted, axis=0))) if S.size else 0.0
    bound = 2.0 * L * L * _confidence_log_term(shape, lam, delta)
    return norm_sq, bound
