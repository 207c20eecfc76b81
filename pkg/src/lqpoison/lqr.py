"""Riccati solution, optimal gain and admissibility checks for LQ systems."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonConvergent

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000


@dataclass(frozen=True)
class SystemParams:
    r"""Linear dynamics stored as the stacked parameter matrix.

    ``theta`` has shape ``(n + m, n)`` with :math:`\Theta^T = (A, B)`, so the
    transition reads ``x_next = theta.T @ concat(x, u) + noise``.
    """

    theta: np.ndarray

    def __post_init__(self) -> None:
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        if theta.ndim != 2 or theta.shape[0] <= theta.shape[1]:
            raise DimensionMismatch(f"theta must be (n+m) x n with m >= 1, got {theta.shape}")
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_ab(cls, A, B) -> "SystemParams":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionMismatch(f"B has {B.shape[0]} rows, A has {A.shape[0]}")
        return cls(np.vstack([A.T, B.T]))

    @property
    def n(self) -> int:
        return self.theta.shape[1]

    @property
    def m(self) -> int:
        return self.theta.shape[0] - self.theta.shape[1]

    @property
    def A(self) -> np.ndarray:
        return self.theta[: self.n].T

    @property
    def B(self) -> np.ndarray:
        return self.theta[self.n :].T

    def trace_norm_sq(self) -> float:
        """``trace(theta.T @ theta)``, the squared Frobenius norm."""
        return float(np.sum(self.theta**2))


@dataclass(frozen=True)
class CostWeights:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self) -> None:
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        for name, mat in (("Q", Q), ("R", R)):
            if mat.shape[0] != mat.shape[1]:
                raise DimensionMismatch(f"{name} must be square, got {mat.shape}")
            if np.max(np.abs(mat - mat.T)) > 1e-12:
                raise ValueError(f"{name} is not symmetric")
            if np.linalg.eigvalsh(mat)[0] <= 0:
                raise ValueError(f"{name} is not positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True)
class RiccatiSolution:
    P: np.ndarray
    K: np.ndarray
    J: float
    iterations: int = 0
    closed_loop_norm: float = field(default=float("nan"))
    spectral_radius: float = field(default=float("nan"))

    @property
    def norm_stable(self) -> bool:
        """Operator 2-norm of ``A + B K`` below one."""
        return self.closed_loop_norm < 1.0


def _check_dims(params: SystemParams, weights: CostWeights) -> None:
    if params.n != weights.n or params.m != weights.m:
        raise DimensionMismatch(
            f"system is n={params.n}, m={params.m}; weights are n={weights.n}, m={weights.m}"
        )


def _solve_scalar(a, b, q, r, tol, max_iter, p):
    # Same fixed-point map as the matrix path, on floats; 1x1 numpy calls are ~50x slower.
    a2 = a * a
    ab = a * b
    b2 = b * b
    for it in range(1, max_iter + 1):
        p_new = q + a2 * p - (ab * p) ** 2 / (b2 * p + r)
        if abs(p_new - p) < tol:
            return p_new, it
        p = p_new
    raise NonConvergent(f"Riccati iteration did not converge in {max_iter} iterations")


def solve_dare(
    params: SystemParams,
    weights: CostWeights,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    p0: np.ndarray | None = None,
) -> RiccatiSolution:
    """Solve the discrete algebraic Riccati equation by fixed-point iteration.

    Iterates ``P <- Q + A'PA - A'PB (B'PB + R)^-1 B'PA`` from ``P0 = Q``
    (or ``p0`` when warm-starting) until the max-abs change drops below
    ``tol``. Returns ``P``, the gain ``K = -(B'PB + R)^-1 B'PA`` and the
    average cost ``J = trace(P)``.

    :raises NonConvergent: ``max_iter`` reached, typically because the pair
        is not stabilizable or sits close to that boundary.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter at least 1")
    _check_dims(params, weights)
    A, B, Q, R = params.A, params.B, weights.Q, weights.R

    if params.n == 1 and params.m == 1:
        p_start = float(Q[0, 0] if p0 is None else np.asarray(p0).reshape(-1)[0])
        a, b, r = float(A[0, 0]), float(B[0, 0]), float(R[0, 0])
        p, it = _solve_scalar(a, b, float(Q[0, 0]), r, tol, max_iter, p_start)
        k = -(b * p * a) / (b * b * p + r)
        cl = abs(a + b * k)
        return RiccatiSolution(
            P=np.array([[p]]), K=np.array([[k]]), J=p, iterations=it,
            closed_loop_norm=cl, spectral_radius=cl,
        )

    P = Q.copy() if p0 is None else np.array(p0, dtype=float)
    At = A.T
    for it in range(1, max_iter + 1):
        AtP = At @ P
        BtP = B.T @ P
        gain = np.linalg.solve(BtP @ B + R, BtP @ A)
        P_new = Q + AtP @ A - AtP @ B @ gain
        P_new = 0.5 * (P_new + P_new.T)
        if np.max(np.abs(P_new - P)) < tol:
            P = P_new
            break
        P = P_new
    else:
        raise NonConvergent(f"Riccati iteration did not converge in {max_iter} iterations")

    BtP = B.T @ P
    K = -np.linalg.solve(BtP @ B + R, BtP @ A)
    closed = A + B @ K
    return RiccatiSolution(
        P=P,
        K=K,
        J=float(np.trace(P)),
        iterations=it,
        closed_loop_norm=float(np.linalg.norm(closed, 2)),
        spectral_radius=float(np.max(np.abs(np.linalg.eigvals(closed)))),
    )


def dare_residual(params: SystemParams, weights: CostWeights, P: np.ndarray) -> float:
    """Max-abs residual of the Riccati equation at ``P``."""
    A, B, Q, R = params.A, params.B, weights.Q, weights.R
    rhs = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(B.T @ P @ B + R, B.T @ P @ A)
    return float(np.max(np.abs(P - rhs)))


def average_cost(params: SystemParams, weights: CostWeights, noise_cov=None, **kwargs) -> float:
    """Optimal average cost ``trace(P)``.

    With ``noise_cov`` given, returns ``trace(P @ noise_cov)``, the average
    cost when the process noise covariance is not the identity.
    """
    sol = solve_dare(params, weights, **kwargs)
    if noise_cov is None:
        return sol.J
    W = np.atleast_2d(np.asarray(noise_cov, dtype=float))
    if W.shape == (1, 1) and params.n > 1:
        W = W[0, 0] * np.eye(params.n)
    return float(np.trace(sol.P @ W))


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric positive semi-definite square root."""
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def observability_matrix(A: np.ndarray, M: np.ndarray) -> np.ndarray:
    blocks = [M]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def check_admissible(params: SystemParams, weights: CostWeights, s: float) -> bool:
    """Membership in the trace ball of radius ``s`` intersected with the
    controllable/observable pairs, where observability is tested for
    ``(A, M)`` with ``M`` the symmetric square root of ``Q``."""
    if s <= 0:
        raise ValueError("s must be positive")
    if params.trace_norm_sq() > s * s:
        return False
    n = params.n
    A, B = params.A, params.B
    if n == 1 and params.m == 1:
        return B[0, 0] != 0.0
    if np.linalg.matrix_rank(controllability_matrix(A, B)) < n:
        return False
    M = psd_sqrt(weights.Q)
    return bool(np.linalg.matrix_rank(observability_matrix(A, M)) == n)
