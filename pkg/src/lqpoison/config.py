"""Experiment configuration: YAML schema, presets, overrides and resolution.

A config file is a YAML mapping. Only ``system``, ``weights`` and
``horizon`` are required; every other key falls back to the default listed
in :data:`DEFAULTS`.

.. code-block:: yaml

    system: {A: [[0.001]], B: [[0.001]]}
    weights: {Q: [[1.0]], R: [[0.1]]}
    horizon: 8000
    delta: 0.000125          # 0 < delta < 1
    lambda: 1.0              # ridge regularizer, > 0
    L: 0.1                   # sub-Gaussian constant, >= noise_sigma
    s: 1.0                   # trace-norm bound of the admissible set
    noise_sigma: 0.1
    mode: oracle_clean       # naive | self_correcting | oracle_clean
    gain_bound: null         # bound on |K|; null uses the sampled C
    attack: {mode: constant_bias, Lambda: 0.5}
    n_runs: 50
    base_seed: 0
    workers: 1
    output_dir: null
    ofu: {steps: 200, restarts: 4}
    bounds: {nu: 1.0, M: null, U0: null, Hc: null, samples: 1000, seed: 0}

A top-level ``derived`` block (written into run metadata) is ignored, so
metadata files load back as configs.

``--set key=value`` overrides use dotted keys (``attack.Lambda=0.2``) and
YAML scalars for values.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .database import ATTACK_MODES, AttackPlan
from .errors import ConfigInvalid
from .lqr import CostWeights, SystemParams
from .ofu import OfuConfig

REQUIRED = ("system", "weights", "horizon")
# Informational block written into run metadata; ignored when re-parsed.
INFO_KEY = "derived"
MODE_NAMES = ("naive", "self_correcting", "oracle_clean")

_OFU_KEYS = {f.name for f in fields(OfuConfig)}
_ATTACK_KEYS = {f.name for f in fields(AttackPlan)}
_BOUND_KEYS = {"nu", "M", "U0", "Hc", "samples", "seed"}

DEFAULTS: dict[str, Any] = {
    "delta": 1.0 / 8000,
    "lambda": 1.0,
    "L": 0.1,
    "s": 1.0,
    "noise_sigma": 0.1,
    "mode": "oracle_clean",
    "gain_bound": None,
    "attack": {"mode": "none", "Lambda": 0.0},
    "n_runs": 50,
    "base_seed": 0,
    "workers": 1,
    "output_dir": None,
    "ofu": {},
    "bounds": {"nu": 1.0, "M": None, "U0": None, "Hc": None, "samples": 1000, "seed": 0},
}

_REFERENCE_BASE: dict[str, Any] = {
    "system": {"A": [[0.001]], "B": [[0.001]]},
    "weights": {"Q": [[1.0]], "R": [[0.1]]},
    "horizon": 8000,
    "delta": 1.0 / 8000,
    "lambda": 1.0,
    "L": 0.1,
    "s": 1.0,
    "noise_sigma": 0.1,
    "n_runs": 50,
    "base_seed": 0,
}

PRESETS: dict[str, dict[str, Any]] = {
    "paper-clean": {**_REFERENCE_BASE, "mode": "oracle_clean", "attack": {"mode": "none", "Lambda": 0.0}},
    "paper-naive-attacked": {
        **_REFERENCE_BASE,
        "mode": "naive",
        "attack": {"mode": "constant_bias", "Lambda": 0.5},
    },
    "paper-self-correcting": {
        **_REFERENCE_BASE,
        "mode": "self_correcting",
        "attack": {"mode": "constant_bias", "Lambda": 0.5},
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description."""

    theta_star: SystemParams
    weights: CostWeights
    horizon: int
    delta: float
    lam: float
    L: float
    s: float
    noise_sigma: float
    mode: str
    gain_bound: float | None
    attack: AttackPlan
    n_runs: int
    base_seed: int
    workers: int
    output_dir: str | None
    ofu: OfuConfig
    bounds: dict

    @property
    def n(self) -> int:
        return self.theta_star.n

    @property
    def m(self) -> int:
        return self.theta_star.m

    def to_dict(self) -> dict[str, Any]:
        """Plain-data form that :func:`resolve` maps back to an equal config."""
        atk = {f.name: getattr(self.attack, f.name) for f in fields(AttackPlan)}
        if atk["direction"] is not None:
            atk["direction"] = [float(v) for v in atk["direction"]]
        return {
            "system": {"A": self.theta_star.A.tolist(), "B": self.theta_star.B.tolist()},
            "weights": {"Q": self.weights.Q.tolist(), "R": self.weights.R.tolist()},
            "horizon": self.horizon,
            "delta": self.delta,
            "lambda": self.lam,
            "L": self.L,
            "s": self.s,
            "noise_sigma": self.noise_sigma,
            "mode": self.mode,
            "gain_bound": self.gain_bound,
            "attack": atk,
            "n_runs": self.n_runs,
            "base_seed": self.base_seed,
            "workers": self.workers,
            "output_dir": self.output_dir,
            "ofu": {f.name: getattr(self.ofu, f.name) for f in fields(OfuConfig)},
            "bounds": dict(self.bounds),
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None  # type: ignore[assignment]


def load_raw(source: str | Path) -> dict[str, Any]:
    """Preset name or YAML path to a raw mapping (defaults not yet applied)."""
    if str(source) in PRESETS:
        return copy.deepcopy(PRESETS[str(source)])
    path = Path(source)
    if not path.is_file():
        raise ConfigInvalid("config", f"{source!r} is neither a preset ({', '.join(PRESETS)}) nor a file")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigInvalid("config", f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid("config", f"{path} must hold a mapping at the top level")
    return data


def apply_override(raw: dict[str, Any], assignment: str) -> None:
    """Apply one ``key=value`` override in place; dotted keys reach nested maps."""
    if "=" not in assignment:
        raise ConfigInvalid(assignment, "override must look like key=value")
    key, text = assignment.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigInvalid(assignment, "empty key")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(key, f"cannot parse value {text!r}") from exc
    if isinstance(value, str):
        # YAML 1.1 reads exponent forms such as 1e6 as strings.
        try:
            value = float(value)
        except ValueError:
            pass
    parts = key.split(".")
    node = raw
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = copy.deepcopy(DEFAULTS.get(part, {})) if node is raw else {}
            node[part] = child
        if not isinstance(child, dict):
            raise ConfigInvalid(key, f"{part!r} is not a mapping")
        node = child
    node[parts[-1]] = value


def _matrix(raw, key: str, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    try:
        arr = np.atleast_2d(np.asarray(raw, dtype=float))
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(key, "must be a numeric matrix") from exc
    if arr.ndim != 2 or (rows is not None and arr.shape[0] != rows) or (cols is not None and arr.shape[1] != cols):
        raise ConfigInvalid(key, f"has shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigInvalid(key, "must be finite")
    return arr


def _number(raw: dict, key: str, lo: float | None = None, hi: float | None = None,
            lo_open: bool = True, hi_open: bool = True, integer: bool = False, prefix: str = ""):
    value = raw[key]
    key = prefix + key
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigInvalid(key, f"must be a number, got {value!r}")
    if integer:
        if float(value) != int(value):
            raise ConfigInvalid(key, f"must be an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
    if not math.isfinite(value):
        raise ConfigInvalid(key, "must be finite")
    if lo is not None and (value <= lo if lo_open else value < lo):
        raise ConfigInvalid(key, f"must be {'>' if lo_open else '>='} {lo}, got {value}")
    if hi is not None and (value >= hi if hi_open else value > hi):
        raise ConfigInvalid(key, f"must be {'<' if hi_open else '<='} {hi}, got {value}")
    return value


def _sub(raw: dict, key: str, allowed: set[str]) -> dict:
    value = raw.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigInvalid(key, "must be a mapping")
    unknown = sorted(set(value) - allowed)
    if unknown:
        raise ConfigInvalid(f"{key}.{unknown[0]}", "unknown key")
    return value


def resolve(raw: dict[str, Any]) -> ExperimentConfig:
    """Validate a raw mapping and build an :class:`ExperimentConfig`.

    :raises ConfigInvalid: the message and ``.key`` name the offending key.
    """
    if not isinstance(raw, dict):
        raise ConfigInvalid("config", "must be a mapping")
    for key in REQUIRED:
        if key not in raw or raw[key] is None:
            raise ConfigInvalid(key, "required key is missing")
    raw = {k: v for k, v in raw.items() if k != INFO_KEY}
    unknown = sorted(set(raw) - set(REQUIRED) - set(DEFAULTS))
    if unknown:
        raise ConfigInvalid(unknown[0], "unknown key")
    merged = {**copy.deepcopy(DEFAULTS), **raw}
    merged["bounds"] = {**DEFAULTS["bounds"], **(raw.get("bounds") or {})}

    sys_raw = _sub(merged, "system", {"A", "B"})
    if "A" not in sys_raw or "B" not in sys_raw:
        raise ConfigInvalid("system.A" if "A" not in sys_raw else "system.B", "required key is missing")
    A = _matrix(sys_raw["A"], "system.A")
    if A.shape[0] != A.shape[1]:
        raise ConfigInvalid("system.A", f"must be square, got shape {A.shape}")
    n = A.shape[0]
    B = _matrix(sys_raw["B"], "system.B", rows=n)
    m = B.shape[1]
    w_raw = _sub(merged, "weights", {"Q", "R"})
    if "Q" not in w_raw or "R" not in w_raw:
        raise ConfigInvalid("weights.Q" if "Q" not in w_raw else "weights.R", "required key is missing")
    Q = _matrix(w_raw["Q"], "weights.Q", n, n)
    R = _matrix(w_raw["R"], "weights.R", m, m)
    try:
        weights = CostWeights(Q, R)
    except ValueError as exc:
        raise ConfigInvalid("weights", str(exc)) from exc

    horizon = _number(merged, "horizon", lo=1, lo_open=False, integer=True)
    delta = _number(merged, "delta", lo=0, hi=1)
    lam = _number(merged, "lambda", lo=0)
    sigma = _number(merged, "noise_sigma", lo=0, lo_open=False)
    L = _number(merged, "L", lo=0)
    if L < sigma:
        raise ConfigInvalid("L", f"must be at least noise_sigma={sigma}")
    s = _number(merged, "s", lo=0)
    mode = merged["mode"]
    if isinstance(mode, str):
        mode = mode.replace("-", "_")
    if mode not in MODE_NAMES:
        raise ConfigInvalid("mode", f"must be one of {', '.join(MODE_NAMES)}, got {merged['mode']!r}")
    gain_bound = None
    if merged["gain_bound"] is not None:
        gain_bound = _number(merged, "gain_bound", lo=0, lo_open=False)
    n_runs = _number(merged, "n_runs", lo=1, lo_open=False, integer=True)
    base_seed = _number(merged, "base_seed", lo=0, lo_open=False, integer=True)
    workers = _number(merged, "workers", lo=1, lo_open=False, integer=True)
    output_dir = merged["output_dir"]
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigInvalid("output_dir", "must be a string path")

    a_raw = dict(_sub(merged, "attack", _ATTACK_KEYS))
    if a_raw.get("direction") is not None:
        a_raw["direction"] = tuple(float(v) for v in np.ravel(a_raw["direction"]))
    if a_raw.get("mode", "none") not in ATTACK_MODES:
        raise ConfigInvalid("attack.mode", f"must be one of {', '.join(ATTACK_MODES)}")
    try:
        attack = AttackPlan(**a_raw)
        if attack.mode != "none" and attack.Lambda > 0:
            attack.etas(np.array([1]), n)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid("attack", str(exc)) from exc

    o_raw = _sub(merged, "ofu", _OFU_KEYS)
    try:
        ofu = OfuConfig(**o_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid("ofu", str(exc)) from exc

    b_raw = _sub(merged, "bounds", _BOUND_KEYS)
    bounds = dict(b_raw)
    for key in ("nu", "M", "U0", "Hc"):
        if bounds[key] is not None:
            bounds[key] = _number(bounds, key, lo=0, prefix="bounds.")
    bounds["samples"] = _number(bounds, "samples", lo=1, lo_open=False, integer=True, prefix="bounds.")
    bounds["seed"] = _number(bounds, "seed", lo=0, lo_open=False, integer=True, prefix="bounds.")

    return ExperimentConfig(
        theta_star=SystemParams.from_ab(A, B),
        weights=weights,
        horizon=horizon,
        delta=delta,
        lam=lam,
        L=L,
        s=s,
        noise_sigma=sigma,
        mode=mode,
        gain_bound=gain_bound,
        attack=attack,
        n_runs=n_runs,
        base_seed=base_seed,
        workers=workers,
        output_dir=output_dir,
        ofu=ofu,
        bounds=bounds,
    )


def load(source: str | Path, overrides: list[str] | tuple[str, ...] = ()) -> ExperimentConfig:
    raw = load_raw(source)
    for item in overrides:
        apply_override(raw, item)
    return resolve(raw)


def dump(cfg: ExperimentConfig, extra: dict[str, Any] | None = None) -> str:
    """YAML text of the resolved config, with optional derived fields appended."""
    data = cfg.to_dict()
    if extra:
        data = {**data, **extra}
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)
