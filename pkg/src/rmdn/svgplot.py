"""Minimal deterministic SVG line charts (axes, ticks, legend, polylines)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=40, bottom=55)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def line_chart(series, title: str = "", xlabel: str = "", ylabel: str = "", logy: bool = False) -> str:
    """Render ``series`` (``[(label, xs, ys), ...]``) as an SVG document string.

    With ``logy`` nonpositive values are dropped from the plot.
    """
    prepared = []
    for label, xs, ys in series:
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        keep = np.isfinite(xs) & np.isfinite(ys)
        if logy:
            keep &= ys > 0
            ys = np.where(keep, np.log10(np.where(ys > 0, ys, 1.0)), np.nan)
        prepared.append((str(label), xs[keep], ys[keep]))
    all_x = np.concatenate([p[1] for p in prepared]) if prepared else np.zeros(0)
    all_y = np.concatenate([p[2] for p in prepared]) if prepared else np.zeros(0)
    x0, x1 = (float(all_x.min()), float(all_x.max())) if all_x.size else (0.0, 1.0)
    y0, y1 = (float(all_y.min()), float(all_y.max())) if all_y.size else (0.0, 1.0)
    if x1 <= x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 <= y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.2f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
    ]
    bx, by = MARGIN["left"], MARGIN["top"] + ph
    out.append(f'<line x1="{bx}" y1="{by}" x2="{bx + pw}" y2="{by}" stroke="black"/>')
    out.append(f'<line x1="{bx}" y1="{MARGIN["top"]}" x2="{bx}" y2="{by}" stroke="black"/>')
    for t in _nice_ticks(x0, x1):
        x = sx(t)
        out.append(f'<line x1="{_fmt(x)}" y1="{by}" x2="{_fmt(x)}" y2="{by + 5}" stroke="black"/>')
        out.append(f'<text x="{_fmt(x)}" y="{by + 18}" text-anchor="middle" font-size="11">{t:g}</text>')
    for t in _nice_ticks(y0, y1):
        y = sy(t)
        text = f"1e{t:g}" if logy else f"{t:g}"
        out.append(f'<line x1="{bx - 5}" y1="{_fmt(y)}" x2="{bx}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(f'<text x="{bx - 8}" y="{_fmt(y + 4)}" text-anchor="end" font-size="11">{text}</text>')
    out.append(f'<text x="{bx + pw / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{MARGIN["top"] + ph / 2:.2f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.2f})">{escape(ylabel)}</text>'
    )
    for i, (label, xs, ys) in enumerate(prepared):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = MARGIN["top"] + 10 + 18 * i
        lx = WIDTH - MARGIN["right"] + 15
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
