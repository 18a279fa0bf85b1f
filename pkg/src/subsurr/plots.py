"""Minimal SVG line plots."""
from __future__ import annotations

import math
from typing import Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
           "#7f7f7f", "#bcbd22", "#e377c2")

Series = Tuple[str, Sequence[float], Sequence[float]]


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (m * step) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def line_plot(series: Sequence[Series], title: str = "", xlabel: str = "", ylabel: str = "",
              logy: bool = False, width: int = 560, height: int = 380) -> str:
    """Render ``(label, x, y)`` series as an SVG document.

    Non-finite points (failed runs) are skipped and break the line.  With
    ``logy`` non-positive values are skipped too.
    """
    ml, mr, mt, mb = 70, 150, 36, 48
    pw, ph = width - ml - mr, height - mt - mb
    xs_all, ys_all = [], []
    for _, x, y in series:
        for a, b in zip(x, y):
            if np.isfinite(a) and np.isfinite(b) and (b > 0 or not logy):
                xs_all.append(float(a))
                ys_all.append(math.log10(b) if logy else float(b))
    if not xs_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = min(xs_all), max(xs_all)
    y0, y1 = min(ys_all), max(ys_all)
    if logy:
        y0, y1 = math.floor(y0), math.ceil(y1)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{ml + pw / 2:.1f}" y="20" text-anchor="middle" font-size="13">'
           f'{escape(title)}</text>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for v in _ticks(x0, x1):
        out.append(f'<line x1="{px(v):.1f}" y1="{mt + ph}" x2="{px(v):.1f}" y2="{mt + ph + 4}" '
                   f'stroke="black"/><text x="{px(v):.1f}" y="{mt + ph + 16}" '
                   f'text-anchor="middle">{v:g}</text>')
    yt = range(int(y0), int(y1) + 1) if logy else _ticks(y0, y1)
    for v in yt:
        lab = f"1e{int(v)}" if logy else f"{v:g}"
        out.append(f'<line x1="{ml - 4}" y1="{py(v):.1f}" x2="{ml}" y2="{py(v):.1f}" '
                   f'stroke="black"/><text x="{ml - 6}" y="{py(v) + 4:.1f}" '
                   f'text-anchor="end">{lab}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, x, y) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        seg = []
        for a, b in list(zip(x, y)) + [(np.nan, np.nan)]:
            ok = np.isfinite(a) and np.isfinite(b) and (b > 0 or not logy)
            if ok:
                seg.append(f"{px(float(a)):.1f},{py(math.log10(b) if logy else float(b)):.1f}")
                continue
            if len(seg) > 1:
                out.append(f'<polyline points="{" ".join(seg)}" fill="none" stroke="{color}" '
                           f'stroke-width="1.5"/>')
            for p in seg:
                cx, cy = p.split(",")
                out.append(f'<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>')
            seg = []
        ly = mt + 14 + 16 * i
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 28}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/><text x="{ml + pw + 32}" y="{ly}">'
                   f'{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
