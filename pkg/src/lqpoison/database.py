"""Learning database with trusted-at-write appends and retroactive poisoning.

Row ``k`` holds the regressor ``z_k = (x_k, u_k)`` and the target
``x_{k+1}``. An attack at time ``now`` (the index of the freshest stored
state, equal to the row count) rewrites every stored copy of the states
``x_1 .. x_{now-1}`` as ``x_s + eta_s``. Inputs, the initial state and the
freshest state are never touched.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BudgetViolation, DimensionMismatch, EmptyDatabase
from .estimator import RegressionInputs

ATTACK_MODES = ("none", "constant_bias", "sinusoid", "random_bounded")


@dataclass(frozen=True)
class AttackPlan:
    """Generator of bounded perturbations ``eta_s`` indexed by state time ``s``.

    Bias modes scale the unit ``direction``; ``random_bounded`` draws
    uniformly from the ball of radius ``Lambda`` with a stream derived from
    ``(seed, s)``, so each ``eta_s`` is a pure function of ``s``.
    """

    mode: str = "none"
    Lambda: float = 0.0
    direction: tuple[float, ...] | None = None
    frequency: float = 0.05
    phase: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ATTACK_MODES:
            raise ValueError(f"unknown attack mode {self.mode!r}")
        if self.Lambda < 0:
            raise ValueError("Lambda must be nonnegative")

    def _unit(self, n: int) -> np.ndarray:
        if self.direction is None:
            return np.ones(n) / math.sqrt(n)
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (n,):
            raise DimensionMismatch(f"direction has shape {d.shape}, state dimension is {n}")
        return d / np.linalg.norm(d)

    def etas(self, steps: np.ndarray, n: int) -> np.ndarray:
        """Perturbations for each state index in ``steps``, shape (len, n)."""
        steps = np.asarray(steps, dtype=np.int64)
        if self.mode == "none" or self.Lambda == 0 or steps.size == 0:
            return np.zeros((steps.size, n))
        if self.mode == "constant_bias":
            return np.tile(self.Lambda * self._unit(n), (steps.size, 1))
        if self.mode == "sinusoid":
            amp = self.Lambda * np.sin(2 * math.pi * self.frequency * steps + self.phase)
            return amp[:, None] * self._unit(n)[None, :]
        out = np.empty((steps.size, n))
        for i, s in enumerate(steps):
            rng = np.random.default_rng([self.seed, int(s)])
            v = rng.standard_normal(n)
            radius = self.Lambda * rng.random() ** (1.0 / n)
            out[i] = radius * v / np.linalg.norm(v)
        return _clip_rows(out, self.Lambda)


def _clip_rows(eta: np.ndarray, Lambda: float) -> np.ndarray:
    norms = np.linalg.norm(eta, axis=1)
    scale = np.where(norms > Lambda, Lambda / np.where(norms > 0, norms, 1.0), 1.0)
    return eta * scale[:, None]


class LearningDatabase:
    """Append-only store with oracle shadow copies of the true trajectory.

    Controllers must read through :func:`materialize` only; the ``*_true``
    arrays exist for diagnostics and tests.
    """

    def __init__(self, n: int, m: int, capacity: int = 256):
        self.n, self.m = n, m
        self._z_true = np.empty((capacity, n + m))
        self._x_true = np.empty((capacity, n))
        self._z_stored = np.empty((capacity, n + m))
        self._x_stored = np.empty((capacity, n))
        self._eta_cache = np.zeros((0, n))
        self._eta_plan: AttackPlan | None = None
        self.count = 0

    def __len__(self) -> int:
        return self.count

    def _grow(self) -> None:
        cap = 2 * self._z_true.shape[0]
        for name in ("_z_true", "_x_true", "_z_stored", "_x_stored"):
            old = getattr(self, name)
            new = np.empty((cap, old.shape[1]))
            new[: self.count] = old[: self.count]
            setattr(self, name, new)

    @property
    def steps(self) -> np.ndarray:
        return np.arange(self.count)

    @property
    def z_true(self) -> np.ndarray:
        return self._z_true[: self.count]

    @property
    def x_next_true(self) -> np.ndarray:
        return self._x_true[: self.count]

    @property
    def z_stored(self) -> np.ndarray:
        return self._z_stored[: self.count]

    @property
    def x_next_stored(self) -> np.ndarray:
        return self._x_stored[: self.count]

    def to_csv(self, path) -> None:
        """Dump stored and true copies, one row per database step."""
        p = self.n + self.m
        header = (
            ["step"]
            + [f"z_stored_{i}" for i in range(p)]
            + [f"x_next_stored_{i}" for i in range(self.n)]
            + [f"z_true_{i}" for i in range(p)]
            + [f"x_next_true_{i}" for i in range(self.n)]
        )
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(self.count):
                vals = np.concatenate(
                    [self._z_stored[k], self._x_stored[k], self._z_true[k], self._x_true[k]]
                )
                w.writerow([k] + [format(v, ".17g") for v in vals])


def append(db: LearningDatabase, z, x_next) -> None:
    """Store ``(z_t, x_{t+1})``; the new row is written unpoisoned."""
    z = np.asarray(z, dtype=float).ravel()
    x_next = np.asarray(x_next, dtype=float).ravel()
    if z.shape != (db.n + db.m,) or x_next.shape != (db.n,):
        raise DimensionMismatch(f"expected z of length {db.n + db.m} and x of length {db.n}")
    if db.count == db._z_true.shape[0]:
        db._grow()
    k = db.count
    db._z_true[k] = z
    db._x_true[k] = x_next
    db._z_stored[k] = z
    db._x_stored[k] = x_next
    db.count += 1


def _etas_for(db: LearningDatabase, plan: AttackPlan, upto: int) -> np.ndarray:
    # eta_s is a pure function of s for a fixed plan, so cache by plan.
    if db._eta_plan != plan:
        db._eta_cache = np.zeros((0, db.n))
        db._eta_plan = plan
    have = db._eta_cache.shape[0]
    if upto > have:
        fresh = plan.etas(np.arange(have, upto), db.n)
        db._eta_cache = np.vstack([db._eta_cache, fresh])
    return db._eta_cache[:upto]


def apply_attack(db: LearningDatabase, plan: AttackPlan, now: int | None = None) -> None:
    """Poison stored states ``x_1 .. x_{now-1}`` as ``x_s + eta_s``.

    Recomputed from the shadow copies, so repeated calls at the same
    ``now`` leave the database unchanged.
    """
    if now is None:
        now = db.count
    if now != db.count:
        raise ValueError(f"now={now} but the freshest stored state is x_{db.count}")
    if now < 2 or plan.mode == "none" or plan.Lambda == 0:
        return
    eta = _etas_for(db, plan, now)
    if np.any(np.linalg.norm(eta, axis=1) > plan.Lambda * (1 + 1e-12)):
        raise BudgetViolation("generated perturbation exceeds the budget")
    n, k = db.n, db.count
    # x_next of row j is x_{j+1}: poisoned for rows 0 .. now-2.
    db._x_stored[:k] = db._x_true[:k]
    db._x_stored[: now - 1] += eta[1:now]
    # State block of z_j is x_j: poisoned for rows 1 .. now-1.
    db._z_stored[:k] = db._z_true[:k]
    db._z_stored[1:now, :n] += eta[1:now]


def materialize(db: LearningDatabase, lam: float = 1.0) -> RegressionInputs:
    """Copies of the stored (possibly poisoned) regression matrices."""
    if db.count == 0:
        raise EmptyDatabase("database has no rows")
    return RegressionInputs(db.z_stored.copy(), db.x_next_stored.copy(), lam)


def true_matrices(db: LearningDatabase, lam: float = 1.0) -> RegressionInputs:
    """Oracle view of the unpoisoned trajectory matrices."""
    if db.count == 0:
        raise EmptyDatabase("database has no rows")
    return RegressionInputs(db.z_true.copy(), db.x_next_true.copy(), lam)


def attack_matrices_oracle(db: LearningDatabase) -> tuple[np.ndarray, np.ndarray]:
    """``H = Xbar - X`` and ``Y = Zbar - Z`` from the shadow copies."""
    return db.x_next_stored - db.x_next_true, db.z_stored - db.z_true
