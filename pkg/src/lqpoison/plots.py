"""Static SVG line plots written without a plotting library.

Output depends only on the input arrays: coordinates are rounded to fixed
precision and no timestamps or ids are embedded, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .harness import EpisodeTrace, cumulative_regret

WIDTH, HEIGHT = 720, 440
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 80, 170, 40, 60
MAX_POINTS = 600
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass(frozen=True)
class Series:
    label: str
    t: np.ndarray
    y: np.ndarray
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    dashed: bool = False


def _thin(n: int) -> np.ndarray:
    if n <= MAX_POINTS:
        return np.arange(n)
    idx = np.unique(np.linspace(0, n - 1, MAX_POINTS).round().astype(int))
    return idx


def _ticks(lo: float, hi: float, count: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** np.floor(np.log10(raw))
    step = min((f * mag for f in (1, 2, 5, 10) if f * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:.6g}"


def line_plot(series: list[Series], title: str, xlabel: str, ylabel: str) -> str:
    """SVG text of a line chart; series with ``lo``/``hi`` get a shaded band."""
    if not series:
        raise ValueError("nothing to plot")
    xs = np.concatenate([np.asarray(s.t, float) for s in series])
    ys = [np.asarray(s.y, float) for s in series]
    ys += [np.asarray(s.lo, float) for s in series if s.lo is not None]
    ys += [np.asarray(s.hi, float) for s in series if s.hi is not None]
    yall = np.concatenate(ys)
    yall = yall[np.isfinite(yall)]
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = (float(yall.min()), float(yall.max())) if yall.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def px(v):
        return MARGIN_L + (np.asarray(v, float) - x0) / (x1 - x0) * pw

    def py(v):
        return MARGIN_T + ph - (np.asarray(v, float) - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{MARGIN_L + pw / 2:.2f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for v in _ticks(x0, x1):
        X = _fmt(px(v))
        out.append(f'<line x1="{X}" y1="{MARGIN_T}" x2="{X}" y2="{MARGIN_T + ph}" stroke="#e5e5e5"/>')
        out.append(f'<text x="{X}" y="{MARGIN_T + ph + 18}" text-anchor="middle">{_label(v)}</text>')
    for v in _ticks(y0, y1):
        Y = _fmt(py(v))
        out.append(f'<line x1="{MARGIN_L}" y1="{Y}" x2="{MARGIN_L + pw}" y2="{Y}" stroke="#e5e5e5"/>')
        out.append(f'<text x="{MARGIN_L - 6}" y="{Y}" text-anchor="end" dominant-baseline="middle">{_label(v)}</text>')
    out.append(f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    out.append(f'<text x="{MARGIN_L + pw / 2:.2f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="18" y="{MARGIN_T + ph / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {MARGIN_T + ph / 2:.2f})">{escape(ylabel)}</text>'
    )
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        t = np.asarray(s.t, float)
        idx = _thin(t.size)
        if s.lo is not None and s.hi is not None:
            upper = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px(t[idx]), py(np.asarray(s.hi)[idx])))
            lower = " ".join(
                f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px(t[idx][::-1]), py(np.asarray(s.lo)[idx][::-1]))
            )
            out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.18" stroke="none"/>')
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px(t[idx]), py(np.asarray(s.y)[idx])))
        dash = ' stroke-dasharray="6 4"' if s.dashed else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        ly = MARGIN_T + 16 + 20 * i
        lx = MARGIN_L + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 30}" y="{ly}" dominant-baseline="middle">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def regret_series(traces: list[EpisodeTrace], J_star: float, label: str) -> Series:
    """Mean cumulative regret across complete runs, with a +/- one std band."""
    complete = sorted((tr for tr in traces if not tr.aborted), key=lambda tr: tr.index)
    if not complete:
        raise ValueError("no completed traces")
    curves = np.array([cumulative_regret(tr, J_star) for tr in complete])
    t = np.arange(1, curves.shape[1] + 1)
    mean = curves.mean(axis=0)
    if len(complete) == 1:
        return Series(label, t, mean)
    sd = curves.std(axis=0)
    return Series(label, t, mean, mean - sd, mean + sd)


def estimate_series(traces: list[EpisodeTrace], label: str, row: int = 0) -> Series:
    """Mean of the acted-on parameter entry ``theta_tilde[row, 0]`` over time."""
    complete = sorted((tr for tr in traces if not tr.aborted), key=lambda tr: tr.index)
    if not complete:
        raise ValueError("no completed traces")
    vals = np.array([tr.theta_tilde[:, row, 0] for tr in complete])
    t = np.arange(vals.shape[1])
    mean = vals.mean(axis=0)
    if len(complete) == 1:
        return Series(label, t, mean)
    sd = vals.std(axis=0)
    return Series(label, t, mean, mean - sd, mean + sd)


def emit_plots(traces_by_mode: dict[str, list[EpisodeTrace]], J_star: float, out_dir,
               theta_star=None) -> list[Path]:
    """Write ``regret_<mode>.svg`` per mode, ``regret_modes.svg`` when several
    modes are given, and ``estimate_<mode>.svg`` for scalar systems."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    regret = {}
    for mode in sorted(traces_by_mode):
        traces = traces_by_mode[mode]
        if not any(not tr.aborted for tr in traces):
            continue
        regret[mode] = regret_series(traces, J_star, mode)
        path = out / f"regret_{mode}.svg"
        path.write_text(line_plot([regret[mode]], f"Cumulative regret ({mode})", "t", "regret"))
        written.append(path)
        tildes = next(tr.theta_tilde for tr in traces if not tr.aborted)
        if tildes.shape[1:] == (2, 1):
            series = [estimate_series(traces, "a estimate", 0), estimate_series(traces, "b estimate", 1)]
            if theta_star is not None:
                t = series[0].t
                for k, name in enumerate(("a*", "b*")):
                    series.append(Series(name, t, np.full(t.size, theta_star.theta[k, 0]), dashed=True))
            path = out / f"estimate_{mode}.svg"
            path.write_text(line_plot(series, f"Parameter estimates ({mode})", "t", "value"))
            written.append(path)
    if len(regret) > 1:
        path = out / "regret_modes.svg"
        path.write_text(line_plot([regret[m] for m in sorted(regret)], "Cumulative regret by mode", "t", "regret"))
        written.append(path)
    return written
