"""Command line entry point: run presets or config files and write artifacts.

::

    lqpoison run paper-clean --runs 5 --out results/
    lqpoison run my.yaml --mode naive --attack constant --lambda-budget 0.5
    lqpoison compare paper-self-correcting --runs 10 --set horizon=4000

``run`` executes one controller mode; ``compare`` runs the naive,
self-correcting and oracle-clean modes on the same configuration and seeds.
The output directory defaults to ``$LQPOISON_OUT`` or ``./lqpoison-out``.

Exit status: 0 on success, 2 for configuration errors, 3 when every episode
of a batch aborted, 1 for I/O failures.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .bounds import BoundConstants, estimate_constants
from .controller import ControllerConfig
from .errors import ConfigInvalid, DegenerateCurve
from .harness import (
    EpisodeConfig,
    EpisodeTrace,
    NoiseModel,
    cumulative_regret,
    fit_regret_exponent,
    monte_carlo,
    optimal_cost,
)
from .plots import emit_plots

ENV_OUT = "LQPOISON_OUT"
DEFAULT_OUT = "lqpoison-out"
EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_BATCH = 0, 1, 2, 3

CLI_MODES = {"naive": "naive", "self-correcting": "self_correcting", "oracle-clean": "oracle_clean"}
CLI_ATTACKS = {"none": "none", "constant": "constant_bias", "sinusoid": "sinusoid", "random": "random_bounded"}

log = logging.getLogger("lqpoison")


def bound_constants(cfg: cfgmod.ExperimentConfig) -> BoundConstants:
    """Sampled constants for ``cfg`` with any configured overrides applied."""
    b = cfg.bounds
    consts = estimate_constants(cfg.weights, cfg.s, cfg.n, cfg.m, samples=b["samples"], seed=b["seed"],
                                theta_star=cfg.theta_star, nu=b["nu"])
    over = {k: b[k] for k in ("M", "U0", "Hc") if b[k] is not None}
    if over:
        consts = BoundConstants(D=consts.D, C=consts.C, rho=consts.rho, eta_spec=consts.eta_spec, s=consts.s,
                                p=consts.p, nu=consts.nu, method=consts.method,
                                M=over.get("M"), U0=over.get("U0"), Hc=over.get("Hc"))
    return consts


def episode_config(cfg: cfgmod.ExperimentConfig, consts: BoundConstants, mode: str | None = None) -> EpisodeConfig:
    """Translate an experiment config into the harness's episode config.

    The controller's attack budget is the plan's ``Lambda``; an unset
    ``gain_bound`` falls back to the sampled ``C``.
    """
    ctrl = ControllerConfig(
        weights=cfg.weights,
        mode=mode or cfg.mode,
        s=cfg.s,
        delta=cfg.delta,
        lam=cfg.lam,
        L=cfg.L,
        Lambda=cfg.attack.Lambda if cfg.attack.mode != "none" else 0.0,
        gain_bound=consts.C if cfg.gain_bound is None else cfg.gain_bound,
        ofu=cfg.ofu,
    )
    return EpisodeConfig(
        theta_star=cfg.theta_star,
        controller=ctrl,
        horizon=cfg.horizon,
        noise=NoiseModel(sigma=cfg.noise_sigma, L=cfg.L),
        attack=cfg.attack,
    )


def _g(v: float) -> str:
    return format(float(v), ".17g")


def write_trace_csv(trace: EpisodeTrace, J_star: float, path: Path) -> None:
    """Columns ``t, x_*, u_*, cost, cum_regret, switch, beta, mode``."""
    n = trace.x.shape[1]
    m = trace.u.shape[1] if trace.u.ndim == 2 else 0
    regret = np.concatenate([[0.0], cumulative_regret(trace, J_star)]) if len(trace.cost) else np.zeros(0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i}" for i in range(n)] + [f"u{j}" for j in range(m)]
                   + ["cost", "cum_regret", "switch", "beta", "mode"])
        for t in range(len(trace.cost)):
            w.writerow([t] + [_g(v) for v in trace.x[t]] + [_g(v) for v in trace.u[t]]
                       + [_g(trace.cost[t]), _g(regret[t]), int(trace.switch[t]), _g(trace.beta[t]), trace.mode])


def _exponent(trace: EpisodeTrace, J_star: float) -> float:
    if trace.aborted or len(trace.cost) < 3:
        return float("nan")
    try:
        return fit_regret_exponent(cumulative_regret(trace, J_star))[0]
    except DegenerateCurve:
        return float("nan")


def write_summary_csv(rows: list[tuple[str, EpisodeTrace]], J_star: float, path: Path) -> None:
    """One row per run: index, mode, seed, terminal regret, exponent, switches, aborted."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "mode", "seed", "terminal_regret", "exponent", "switches", "aborted"])
        for mode, tr in rows:
            terminal = cumulative_regret(tr, J_star)[-1] if len(tr.cost) > 1 else float("nan")
            w.writerow([tr.index, mode, tr.seed, _g(terminal), _g(_exponent(tr, J_star)),
                        len(tr.switch_steps), int(tr.aborted)])


def run_experiment(cfg: cfgmod.ExperimentConfig, out_dir: Path, modes: list[str] | None = None) -> dict:
    """Run every requested mode and write traces, summary, metadata and plots.

    Returns ``{mode: (traces, summary)}``.
    """
    modes = modes or [cfg.mode]
    consts = bound_constants(cfg)
    out_dir = Path(out_dir)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    results = {}
    J_star = None
    for mode in modes:
        ep = episode_config(cfg, consts, mode)
        J_star = optimal_cost(ep)
        log.info("running %d episode(s) of mode %s", cfg.n_runs, mode)
        traces, summary = monte_carlo(ep, cfg.n_runs, cfg.base_seed, workers=cfg.workers)
        results[mode] = (traces, summary)
        for tr in traces:
            write_trace_csv(tr, J_star, out_dir / "traces" / f"{mode}_run{tr.index:03d}.csv")
    rows = [(mode, tr) for mode in modes for tr in results[mode][0]]
    write_summary_csv(rows, J_star, out_dir / "summary.csv")
    derived = {
        "derived": {
            "J_star": J_star,
            "constants": {k: (float(v) if isinstance(v, float) else v) for k, v in consts.as_dict().items()},
            "gain_bound_used": consts.C if cfg.gain_bound is None else cfg.gain_bound,
            "modes": modes,
            "aborted": {mode: results[mode][1].aborted for mode in modes},
        }
    }
    (out_dir / "metadata.yaml").write_text(cfgmod.dump(cfg, derived))
    by_mode = {mode: results[mode][0] for mode in modes if results[mode][1].aborted < results[mode][1].n_runs}
    if by_mode:
        emit_plots(by_mode, J_star, out_dir / "plots", theta_star=cfg.theta_star)
    return results


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lqpoison", description="Adaptive LQ control under database attacks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run one controller mode"), ("compare", "run all three modes")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help=f"preset ({', '.join(cfgmod.PRESETS)}) or YAML path")
        p.add_argument("--runs", type=int, help="number of episodes")
        p.add_argument("--seed", type=int, help="base seed")
        if name == "run":
            p.add_argument("--mode", choices=sorted(CLI_MODES))
        p.add_argument("--attack", choices=sorted(CLI_ATTACKS))
        p.add_argument("--lambda-budget", type=float, dest="lambda_budget", help="attack budget")
        p.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./{DEFAULT_OUT})")
        p.add_argument("--workers", type=int, help="parallel worker processes")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides",
                       help="override a config key; repeatable, dotted keys reach nested maps")
    sub.add_parser("presets", help="list bundled presets")
    return parser


def _overrides(args) -> list[str]:
    items = list(args.overrides)
    if args.runs is not None:
        items.append(f"n_runs={args.runs}")
    if args.seed is not None:
        items.append(f"base_seed={args.seed}")
    if getattr(args, "mode", None):
        items.append(f"mode={CLI_MODES[args.mode]}")
    if args.attack:
        items.append(f"attack.mode={CLI_ATTACKS[args.attack]}")
    if args.lambda_budget is not None:
        items.append(f"attack.Lambda={args.lambda_budget!r}")
    if args.workers is not None:
        items.append(f"workers={args.workers}")
    return items


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "presets":
        for name in cfgmod.PRESETS:
            print(name)
        return EXIT_OK
    try:
        cfg = cfgmod.load(args.config, _overrides(args))
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    out = Path(args.out or cfg.output_dir or os.environ.get(ENV_OUT) or DEFAULT_OUT)
    if args.out:
        cfg = replace(cfg, output_dir=str(out))
    modes = list(cfgmod.MODE_NAMES) if args.command == "compare" else None
    try:
        results = run_experiment(cfg, out, modes)
    except OSError as exc:
        print(f"cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_IO
    status = EXIT_OK
    for mode, (_, summary) in results.items():
        print(f"{mode}: {summary.n_runs} run(s), {summary.aborted} aborted", end="")
        if summary.mean_regret is not None and summary.mean_regret.size:
            print(f", mean terminal regret {summary.mean_regret[-1]:.6g}")
        else:
            print()
        if summary.aborted == summary.n_runs:
            status = EXIT_BATCH
    print(f"artifacts written to {out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
