"""Theoretical regret, state and switch-count bounds, and their constants."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidConstants, NonConvergent
from .estimator import AttackBudget, clean_radius, logdet_pd
from .harness import EpisodeTrace, covariance_of
from .lqr import CostWeights, SystemParams, check_admissible, solve_dare

RHO_CAP = 0.99


@dataclass(frozen=True)
class BoundConstants:
    """Constants entering the bounds.

    ``D`` and ``C`` bound ``|P(theta)|`` and ``|K(theta)|`` over the
    admissible set; ``rho`` bounds the closed-loop norm of well-controlled
    steps and ``eta_spec`` that of the remaining ones. ``nu``, ``M``,
    ``U0`` and ``Hc`` feed the auxiliary terms; ``G`` is derived from them.
    """

    D: float
    C: float
    rho: float
    eta_spec: float
    s: float
    p: int
    nu: float = 1.0
    M: float | None = None
    U0: float | None = None
    Hc: float | None = None
    method: str = "sampled"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.D) and math.isfinite(self.C)) or self.D <= 0 or self.C < 0:
            raise InvalidConstants("D and C must be finite, D positive")
        M = self.s if self.M is None else self.M
        object.__setattr__(self, "M", M)
        p, S = self.p, self.s
        if self.U0 is None:
            object.__setattr__(self, "U0", 1.0 / (16.0 ** (p - 2) * max(1.0, S ** (2 * (p - 2)))))
        if self.Hc is None:
            object.__setattr__(self, "Hc", max(16.0, 4 * S * S * M * M / (p * self.U0)))

    @property
    def U(self) -> float:
        return self.U0 / self.Hc

    @property
    def G(self) -> float:
        p = self.p
        return 2.0 * (2.0 * self.s * p ** (p + 0.5) / math.sqrt(self.U)) ** (1.0 / (p + 1))

    def as_dict(self) -> dict:
        out = asdict(self)
        out["G"] = self.G
        return out


def sample_admissible(weights: CostWeights, s: float, n: int, m: int, count: int, rng) -> list[SystemParams]:
    """Uniform draws from the trace ball that pass the admissibility check."""
    d = (n + m) * n
    out = []
    tries = 0
    while len(out) < count and tries < 50 * count:
        tries += 1
        g = rng.standard_normal(d)
        g *= s * rng.random() ** (1.0 / d) / np.linalg.norm(g)
        params = SystemParams(g.reshape(n + m, n))
        if check_admissible(params, weights, s):
            out.append(params)
    return out


def estimate_constants(
    weights: CostWeights,
    s: float,
    n: int,
    m: int,
    samples: int = 1000,
    seed: int = 0,
    theta_star: SystemParams | None = None,
    nu: float = 1.0,
) -> BoundConstants:
    """Sample-based ``D``, ``C``, ``rho`` and ``eta_spec``.

    ``rho`` is the largest closed-loop norm ``|A + B K(theta)|`` seen over
    the sweep, capped at 0.99; ``eta_spec`` is the largest norm seen over
    both that and ``|A* + B* K(theta)|`` when ``theta_star`` is given.
    Draws whose Riccati iteration fails are skipped.
    """
    rng = np.random.default_rng(seed)
    D = C = 0.0
    cl_max = 0.0
    true_max = 0.0
    for params in sample_admissible(weights, s, n, m, samples, rng):
        try:
            sol = solve_dare(params, weights)
        except NonConvergent:
            continue
        D = max(D, float(np.linalg.norm(sol.P, 2)))
        C = max(C, float(np.linalg.norm(sol.K, 2)))
        cl_max = max(cl_max, sol.closed_loop_norm)
        if theta_star is not None:
            true_max = max(true_max, float(np.linalg.norm(theta_star.A + theta_star.B @ sol.K, 2)))
    rho = min(cl_max, RHO_CAP)
    eta_spec = max(cl_max, true_max, rho)
    return BoundConstants(D=D, C=C, rho=rho, eta_spec=eta_spec, s=s, p=n + m, nu=nu)


def switch_count_bound(T: int, X: float, C: float, Lambda: float, lam: float, p: int) -> float:
    """``p log2(1 + 2T/lam ((1 + C^2) X^2 + Lambda^2))``."""
    return p * math.log2(1.0 + 2.0 * T / lam * (X * X * (1.0 + C * C) + Lambda * Lambda))


def noise_width(L: float, n: int, delta: float, T: int | None = None) -> float:
    """``W = L n sqrt(2 n log(8 n T / delta))`` (``T`` omitted gives the clean form)."""
    inner = 8.0 * n * (T if T is not None else 1) / delta
    return L * n * math.sqrt(2.0 * n * math.log(inner))


def b_prime(consts: BoundConstants, T: int, X: float, n: int, delta: float) -> float:
    growth = consts.nu + T * consts.D**2 * consts.s**2 * X * X * (1.0 + consts.C**2)
    return growth * math.log(4.0 * n / (math.sqrt(consts.nu) * delta) * math.sqrt(growth))


@dataclass(frozen=True)
class RealizedQuantities:
    """Episode quantities plugged into the regret bound.

    ``logdet_ratio`` is ``log(det V_T / det(lam I))``; ``beta_T`` the radius
    at confidence ``delta/4``; ``zeta_sum`` the sum of
    ``min(|zeta_s|^2_{V_s^-1}, 1/2)`` (``None`` falls back to ``T/2``).
    """

    X: float
    logdet_ratio: float
    beta_T: float
    Lambda: float = 0.0
    zeta_sum: float | None = 0.0


def realized_from_trace(
    trace: EpisodeTrace,
    lam: float,
    delta: float,
    L: float,
    s: float,
    Lambda: float = 0.0,
    zeta_sum: float | None = 0.0,
) -> RealizedQuantities:
    """Realized quantities of a completed episode from its true trajectory."""
    n = trace.x.shape[1]
    V = covariance_of(trace, lam)
    p = V.shape[0]
    logdet = logdet_pd(V)
    beta = clean_radius(V, AttackBudget(L=L, s=s), delta / 4.0, lam, n)
    return RealizedQuantities(
        X=float(trace.state_max[-1]),
        logdet_ratio=logdet - p * math.log(lam),
        beta_T=beta,
        Lambda=Lambda,
        zeta_sum=zeta_sum,
    )


def theoretical_bound(
    kind: str,
    consts: BoundConstants,
    realized: RealizedQuantities,
    T: int,
    delta: float,
    lam: float,
    n: int,
    m: int,
    L: float,
) -> float:
    """Four-term high-probability regret bound.

    Both kinds share one expression: the noise term uses the horizon-aware
    width, the confidence term multiplies the log-determinant ratio by two
    and adds the poisoning sum. With ``Lambda = 0`` and a zero poisoning sum
    the attacked bound equals the clean one.
    """
    if kind not in ("clean", "attacked"):
        raise ValueError(f"unknown bound kind {kind!r}")
    Lam = realized.Lambda if kind == "attacked" else 0.0
    zeta = 0.0
    if kind == "attacked":
        zeta = T / 2.0 if realized.zeta_sum is None else realized.zeta_sum
    p = n + m
    D, C, s = consts.D, consts.C, consts.s
    X = realized.X
    W = noise_width(L, n, delta, T)
    term1 = 2.0 * D * W * W * math.sqrt(2.0 * T * math.log(8.0 / delta))
    term2 = n * math.sqrt(max(b_prime(consts, T, X, n, delta), 0.0))
    term3 = 2.0 * D * X * X * p * math.log2(1.0 + 2.0 * T / lam * (X * X * (1.0 + C * C) + Lam * Lam))
    conf = max(2.0 * realized.logdet_ratio + zeta, 0.0)
    term4 = (
        8.0 / math.sqrt(lam) * ((1.0 + C * C) * X * X + Lam * Lam) * s * D
        * math.sqrt(realized.beta_T) * math.sqrt(conf) * math.sqrt(T)
    )
    return term1 + term2 + term3 + term4


def state_bound_alpha(
    consts: BoundConstants,
    beta_a: float,
    Z_a: float,
    Lambda: float,
    t: int,
    delta: float,
    n: int,
    m: int,
    L: float,
) -> float:
    """High-probability bound on the state norm up to time ``t``.

    ``beta_a`` is the radius at confidence ``delta/4`` and ``Z_a`` the
    running maximum of the regressor norm.
    """
    if not consts.rho < 1:
        raise InvalidConstants("rho must be below one")
    p = n + m
    prefactor = (consts.eta_spec / consts.rho) ** p / (1.0 - consts.rho)
    model_term = 2.0 * consts.s * Lambda + consts.G * (Z_a + Lambda) ** (p / (p + 1.0)) * beta_a ** (
        1.0 / (2.0 * (p + 1))
    )
    tt = max(t, 1)
    noise_term = 2.0 * L * math.sqrt(n * math.log(4.0 * n * tt * (tt + 1) / delta))
    return prefactor * (model_term + noise_term)
