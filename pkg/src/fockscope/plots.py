"""Self-contained SVG line charts and diverging heatmaps.

Output is plain text built with fixed float formatting, so identical inputs
give identical bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .analysis import WignerMap

WIDTH, HEIGHT = 640, 440
MARGIN = dict(left=70, right=30, top=40, bottom=55)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
NEGATIVE_RGB = (33, 102, 172)
POSITIVE_RGB = (178, 24, 43)


@dataclass(frozen=True)
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    marker: bool = False


@dataclass(frozen=True)
class LineStyle:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logx: bool = False
    logy: bool = False


@dataclass(frozen=True)
class HeatmapStyle:
    title: str = ""
    xlabel: str = "x"
    ylabel: str = "p"
    colorbar_label: str = "W"
    extra: dict = field(default_factory=dict)


def _f(v: float) -> str:
    return f"{v:.2f}"


def _tick(v: float) -> str:
    return f"{v:.4g}"


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9) * step
    ticks, t = [], start
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


def _header(title: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]


def line_svg(series: list[Series], style: LineStyle = LineStyle()) -> str:
    """Axes, one polyline per series, legend; an empty list gives bare axes."""
    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def tx(v):
        return np.log10(v) if style.logx else v

    def ty(v):
        return np.log10(v) if style.logy else v

    xs, ys = [], []
    for s in series:
        x, y = tx(np.asarray(s.x, float)), ty(np.asarray(s.y, float))
        ok = np.isfinite(x) & np.isfinite(y)
        xs.append(x[ok])
        ys.append(y[ok])
    allx = np.concatenate(xs) if xs else np.array([])
    ally = np.concatenate(ys) if ys else np.array([])
    x0, x1 = (float(allx.min()), float(allx.max())) if allx.size else (0.0, 1.0)
    y0, y1 = (float(ally.min()), float(ally.max())) if ally.size else (0.0, 1.0)
    if x1 <= x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 <= y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = _header(style.title)
    out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for t in _nice_ticks(x0, x1):
        label = _tick(10 ** t) if style.logx else _tick(t)
        out.append(f'<line x1="{_f(px(t))}" y1="{top + ph}" x2="{_f(px(t))}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_f(px(t))}" y="{top + ph + 18}" text-anchor="middle">{label}</text>')
    for t in _nice_ticks(y0, y1):
        label = _tick(10 ** t) if style.logy else _tick(t)
        out.append(f'<line x1="{left - 5}" y1="{_f(py(t))}" x2="{left}" y2="{_f(py(t))}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{_f(py(t) + 4)}" text-anchor="end">{label}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(style.xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(style.ylabel)}</text>')
    for k, (s, x, y) in enumerate(zip(series, xs, ys)):
        color = PALETTE[k % len(PALETTE)]
        if x.size:
            pts = " ".join(f"{_f(px(a))},{_f(py(b))}" for a, b in zip(x, y))
            out.append(f'<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
            if s.marker:
                out += [f'<circle cx="{_f(px(a))}" cy="{_f(py(b))}" r="3" fill="{color}"/>' for a, b in zip(x, y)]
        if s.label:
            ly = top + 14 + 16 * k
            out.append(f'<line x1="{left + pw - 120}" y1="{ly}" x2="{left + pw - 100}" y2="{ly}" '
                       f'stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{left + pw - 95}" y="{ly + 4}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def diverging_rgb(value: float, scale: float) -> tuple[int, int, int]:
    """Blue below zero, white at zero, red above; ``scale`` maps to full colour."""
    t = 0.0 if scale <= 0 else max(-1.0, min(1.0, value / scale))
    end = POSITIVE_RGB if t >= 0 else NEGATIVE_RGB
    a = abs(t)
    return tuple(int(round(255 + (c - 255) * a)) for c in end)


def _hex(rgb) -> str:
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def heatmap_svg(wmap: WignerMap, style: HeatmapStyle = HeatmapStyle()) -> str:
    """Cell-per-grid-point heatmap, colour scale symmetric about zero."""
    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"] - 80
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    vals = np.asarray(wmap.values, float)
    scale = float(np.max(np.abs(vals))) if vals.size else 1.0
    nx, ny = len(wmap.x_grid), len(wmap.p_grid)
    cw, ch = pw / max(nx, 1), ph / max(ny, 1)
    out = _header(style.title)
    out.append(f'<g class="cells" shape-rendering="crispEdges">')
    for j in range(ny):
        y = top + ph - (j + 1) * ch  # p increases upward
        for i in range(nx):
            color = _hex(diverging_rgb(vals[j, i], scale))
            out.append(f'<rect x="{_f(left + i * cw)}" y="{_f(y)}" width="{_f(cw + 0.05)}" '
                       f'height="{_f(ch + 0.05)}" fill="{color}"/>')
    out.append("</g>")
    out.append(f'<rect x="{left}" y="{top}" width="{_f(pw)}" height="{ph}" fill="none" stroke="black"/>')
    if nx:
        for t in _nice_ticks(float(wmap.x_grid[0]), float(wmap.x_grid[-1])):
            x = left + (t - wmap.x_grid[0]) / max(wmap.x_grid[-1] - wmap.x_grid[0], 1e-300) * pw
            out.append(f'<text x="{_f(x)}" y="{top + ph + 18}" text-anchor="middle">{_tick(t)}</text>')
    if ny:
        for t in _nice_ticks(float(wmap.p_grid[0]), float(wmap.p_grid[-1])):
            y = top + ph - (t - wmap.p_grid[0]) / max(wmap.p_grid[-1] - wmap.p_grid[0], 1e-300) * ph
            out.append(f'<text x="{left - 8}" y="{_f(y + 4)}" text-anchor="end">{_tick(t)}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(style.xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(style.ylabel)}</text>')
    # colour legend from -scale (bottom) to +scale (top)
    bx, steps = left + pw + 25, 40
    out.append(f'<g class="legend" data-scale="{scale:.6g}">')
    for k in range(steps):
        v = scale * (1.0 - 2.0 * (k + 0.5) / steps)
        out.append(f'<rect x="{bx}" y="{_f(top + k * ph / steps)}" width="16" height="{_f(ph / steps + 0.05)}" '
                   f'fill="{_hex(diverging_rgb(v, scale))}"/>')
    for v, y in ((scale, top), (0.0, top + ph / 2), (-scale, top + ph)):
        out.append(f'<text x="{bx + 20}" y="{_f(y + 4)}">{_tick(v)}</text>')
    out.append(f'<text x="{bx}" y="{top - 8}">{escape(style.colorbar_label)}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(data, path, style=None) -> Path:
    """Write a line chart (list of Series) or heatmap (WignerMap) to ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, WignerMap):
        text = heatmap_svg(data, style or HeatmapStyle())
    else:
        text = line_svg(list(data), style or LineStyle())
    path.write_text(text, encoding="utf-8")
    return path
