"""Dependency-free SVG figures for run directories.

Every function here only reads its inputs and writes the one SVG file it
is asked for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from proxrl.docking import DockingConfig, max_speed

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
SAFE_FILL = "#b7e4b0"
UNSAFE_FILL = "#f4c7c3"


def nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [round(start + i * step, 12) for i in range(int((hi - start) / step + 1e-9) + 1)]


def _fmt(v: float) -> str:
    return f"{v:.4g}"


@dataclass
class Panel:
    """One set of axes; data coordinates map onto a pixel box."""

    x0: float
    y0: float
    width: float
    height: float
    xlim: tuple[float, float]
    ylim: tuple[float, float]
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    items: list[str] = field(default_factory=list)

    def px(self, x) -> np.ndarray:
        lo, hi = self.xlim
        return self.x0 + (np.asarray(x, dtype=float) - lo) / (hi - lo) * self.width

    def py(self, y) -> np.ndarray:
        lo, hi = self.ylim
        return self.y0 + self.height - (np.asarray(y, dtype=float) - lo) / (hi - lo) * self.height

    def polyline(self, x, y, color=PALETTE[0], width=1.5, dash=None):
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(self.px(x), self.py(y)) if math.isfinite(a + b))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>')

    def polygon(self, x, y, fill, opacity=1.0):
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(self.px(x), self.py(y)))
        self.items.append(f'<polygon points="{pts}" fill="{fill}" fill-opacity="{opacity}" stroke="none"/>')

    def circle(self, x, y, r_px, color, fill=None):
        self.items.append(f'<circle cx="{float(self.px(x)):.2f}" cy="{float(self.py(y)):.2f}" r="{r_px}" '
                          f'stroke="{color}" fill="{fill or color}"/>')

    def segment(self, x1, y1, x2, y2, color="#000", width=1.0):
        self.items.append(f'<line x1="{float(self.px(x1)):.2f}" y1="{float(self.py(y1)):.2f}" '
                          f'x2="{float(self.px(x2)):.2f}" y2="{float(self.py(y2)):.2f}" '
                          f'stroke="{color}" stroke-width="{width}"/>')

    def rect(self, x, y, w, h, fill):
        left, right = float(self.px(x)), float(self.px(x + w))
        top, bottom = float(self.py(y + h)), float(self.py(y))
        self.items.append(f'<rect x="{left:.2f}" y="{top:.2f}" width="{right - left:.2f}" '
                          f'height="{bottom - top:.2f}" fill="{fill}"/>')

    def text(self, x, y, s, anchor="start", size=11):
        self.items.append(f'<text x="{float(self.px(x)):.2f}" y="{float(self.py(y)):.2f}" font-size="{size}" '
                          f'text-anchor="{anchor}">{escape(s)}</text>')

    def render(self, xticks=None, xticklabels=None) -> str:
        out = [f'<g><rect x="{self.x0}" y="{self.y0}" width="{self.width}" height="{self.height}" '
               f'fill="none" stroke="#333"/>']
        out.append(f'<clipPath id="c{id(self)}"><rect x="{self.x0}" y="{self.y0}" width="{self.width}" '
                   f'height="{self.height}"/></clipPath><g clip-path="url(#c{id(self)})">')
        out.extend(self.items)
        out.append("</g>")
        xticks = nice_ticks(*self.xlim) if xticks is None else xticks
        labels = xticklabels or [_fmt(t) for t in xticks]
        for t, lab in zip(xticks, labels):
            x = float(self.px(t))
            yb = self.y0 + self.height
            out.append(f'<line x1="{x:.2f}" y1="{yb}" x2="{x:.2f}" y2="{yb + 4}" stroke="#333"/>')
            out.append(f'<text x="{x:.2f}" y="{yb + 16}" font-size="10" text-anchor="middle">{escape(lab)}</text>')
        for t in nice_ticks(*self.ylim):
            y = float(self.py(t))
            out.append(f'<line x1="{self.x0 - 4}" y1="{y:.2f}" x2="{self.x0}" y2="{y:.2f}" stroke="#333"/>')
            out.append(f'<text x="{self.x0 - 6}" y="{y + 3:.2f}" font-size="10" text-anchor="end">{_fmt(t)}</text>')
        cx = self.x0 + self.width / 2
        out.append(f'<text x="{cx}" y="{self.y0 - 8}" font-size="12" text-anchor="middle">{escape(self.title)}</text>')
        out.append(f'<text x="{cx}" y="{self.y0 + self.height + 32}" font-size="11" '
                   f'text-anchor="middle">{escape(self.xlabel)}</text>')
        cy = self.y0 + self.height / 2
        out.append(f'<text x="{self.x0 - 46}" y="{cy}" font-size="11" text-anchor="middle" '
                   f'transform="rotate(-90 {self.x0 - 46} {cy})">{escape(self.ylabel)}</text>')
        out.append("</g>")
        return "\n".join(out)


def _limits(*arrays, pad: float = 0.05, include=()) -> tuple[float, float]:
    vals = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays] + [np.asarray(include, float)])
    vals = vals[np.isfinite(vals)]
    if len(vals) == 0:
        return (0.0, 1.0)
    lo, hi = float(vals.min()), float(vals.max())
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    span = hi - lo
    return lo - pad * span, hi + pad * span


def write_svg(path, width: int, height: int, body: list[str], legend: list[tuple[str, str]] = ()) -> Path:
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    parts.extend(body)
    for i, (label, color) in enumerate(legend):
        y = 20 + 16 * i
        parts.append(f'<rect x="{width - 170}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{width - 155}" y="{y}" font-size="11">{escape(label)}</text>')
    parts.append("</svg>\n")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts))
    return path


def interval_plot(path, series: dict[str, list[dict]], metric_label: str) -> Path:
    """IQM point estimates with interval bars against the number of choices.

    ``series`` maps a legend label (e.g. a thrust magnitude) to rows with
    keys ``label``, ``iqm``, ``ci_low`` and ``ci_high``; rows share the
    categorical x axis in first-seen order.
    """
    categories: list[str] = []
    for rows in series.values():
        for r in rows:
            if r["label"] not in categories:
                categories.append(r["label"])
    lows = [r["ci_low"] for rows in series.values() for r in rows]
    highs = [r["ci_high"] for rows in series.values() for r in rows]
    width = max(480, 60 * len(categories) + 160)
    p = Panel(70, 40, width - 260, 300, (-0.5, len(categories) - 0.5), _limits(lows, highs),
              title=metric_label, xlabel="Action space", ylabel=metric_label)
    legend = []
    k = max(len(series), 1)
    for j, (name, rows) in enumerate(series.items()):
        color = PALETTE[j % len(PALETTE)]
        legend.append((name, color))
        offset = (j - (k - 1) / 2) * 0.15
        for r in rows:
            x = categories.index(r["label"]) + offset
            p.segment(x, r["ci_low"], x, r["ci_high"], color, 2.0)
            p.circle(x, r["iqm"], 3.5, color)
    body = [p.render(list(range(len(categories))), categories)]
    return write_svg(path, width, 400, body, legend)


def histogram_plot(path, centers, counts, title: str = "Action usage") -> Path:
    """Per-axis bar charts of thrust usage; ``counts`` is shaped (3, nbins)."""
    centers = np.asarray(centers, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if len(centers) > 1:
        gaps = np.diff(centers)
        bar = 0.8 * float(gaps.min())
    else:
        bar = 0.8
    xlim = (float(centers.min()) - bar, float(centers.max()) + bar)
    body = []
    for a, axis in enumerate("xyz"):
        p = Panel(70 + a * 250, 40, 200, 220, xlim, (0.0, max(1.0, float(counts[a].max())) * 1.05),
                  title=f"{title} ({axis})", xlabel="Thrust (N)", ylabel="Count" if a == 0 else "")
        for c, n in zip(centers, counts[a]):
            if n > 0:
                p.rect(c - bar / 2, 0.0, bar, n, PALETTE[a])
        body.append(p.render())
    return write_svg(path, 800, 310, body)


def trajectory_plot(path, traj: dict[str, np.ndarray], task: str, chief_radius: float = 10.0) -> Path:
    """Two orthogonal projections of a recorded trajectory around the chief."""
    x, y, z = traj["x"], traj["y"], traj["z"]
    body = []
    theta = np.linspace(0.0, 2.0 * math.pi, 73)
    for i, (a, b, la, lb) in enumerate(((x, y, "x (m)", "y (m)"), (x, z, "x (m)", "z (m)"))):
        lim = _limits(a, b, include=(-chief_radius, chief_radius))
        p = Panel(70 + i * 330, 40, 260, 260, lim, lim, title=f"{task} trajectory {la[0]}-{lb[0]}",
                  xlabel=la, ylabel=lb)
        p.polygon(chief_radius * np.cos(theta), chief_radius * np.sin(theta), "#999999", 0.6)
        p.polyline(a, b, PALETTE[0])
        p.circle(a[0], b[0], 4, PALETTE[2])
        p.circle(a[-1], b[-1], 4, PALETTE[1])
        body.append(p.render())
    return write_svg(path, 720, 350, body, [("start", PALETTE[2]), ("end", PALETTE[1]), ("chief", "#999999")])


def speedlimit_plot(path, traj: dict[str, np.ndarray], cfg: DockingConfig = DockingConfig()) -> Path:
    """Speed against distance with the region under the limit shaded as safe."""
    r = np.sqrt(traj["x"] ** 2 + traj["y"] ** 2 + traj["z"] ** 2)
    speed = np.sqrt(traj["vx"] ** 2 + traj["vy"] ** 2 + traj["vz"] ** 2)
    xlim = (0.0, max(float(r.max()), cfg.dock_radius) * 1.05)
    limit_hi = max_speed(xlim[1], cfg)
    ylim = (0.0, max(float(speed.max()), limit_hi) * 1.1)
    p = Panel(70, 40, 480, 300, xlim, ylim, title="Speed vs distance", xlabel="Distance to chief (m)",
              ylabel="Speed (m/s)")
    xs = np.array([xlim[0], xlim[1]])
    lim = np.array([max_speed(v, cfg) for v in xs])
    p.polygon([xs[0], xs[1], xs[1], xs[0]], [ylim[1], ylim[1], lim[1], lim[0]], UNSAFE_FILL)
    p.polygon([xs[0], xs[1], xs[1], xs[0]], [0.0, 0.0, lim[1], lim[0]], SAFE_FILL)
    p.polyline(xs, lim, "#2b7a2b", 1.5, dash="5,3")
    p.polyline(r, speed, PALETTE[0])
    p.circle(r[0], speed[0], 4, PALETTE[2])
    p.circle(r[-1], speed[-1], 4, PALETTE[1])
    return write_svg(path, 760, 400, [p.render()],
                     [("safe (under limit)", SAFE_FILL), ("unsafe", UNSAFE_FILL), ("speed", PALETTE[0])])


def curves_plot(path, curves: dict[str, tuple[np.ndarray, np.ndarray]], metric_label: str) -> Path:
    """Evaluation metric against training timesteps, one line per configuration."""
    xs = [np.asarray(c[0], dtype=float) for c in curves.values()]
    ys = [np.asarray(c[1], dtype=float) for c in curves.values()]
    xlim = (0.0, max((float(x.max()) for x in xs if len(x)), default=1.0))
    p = Panel(70, 40, 480, 300, xlim, _limits(*ys) if ys else (0.0, 1.0), title=metric_label,
              xlabel="Timesteps", ylabel=metric_label)
    legend = []
    for j, (name, (x, y)) in enumerate(curves.items()):
        color = PALETTE[j % len(PALETTE)]
        p.polyline(x, y, color)
        legend.append((name, color))
    return write_svg(path, 760, 400, [p.render()], legend)
