"""Log-log error plots written as plain SVG text.

Output depends only on the rows: fixed canvas, fixed number formatting, no
timestamps, so identical rows give identical bytes.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from pathlib import Path

import numpy as np

WIDTH, HEIGHT = 480, 360
MARGIN = 60


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def summarize(rows) -> list:
    """``(value, median, min, max)`` of positive err_inf per axis value, in row order."""
    groups: OrderedDict = OrderedDict()
    for r in rows:
        groups.setdefault(r.value, []).append(r.err_inf)
    out = []
    for value, errs in groups.items():
        errs = [e for e in errs if e > 0 and math.isfinite(e)]
        if value > 0 and errs:
            out.append((value, float(np.median(errs)), min(errs), max(errs)))
    return out


def render_svg(rows, title: str = "") -> str:
    pts = summarize(rows)
    if not pts:
        raise ValueError("no rows with positive axis values and errors to plot")
    lx = [math.log10(p[0]) for p in pts]
    ly = [math.log10(v) for p in pts for v in p[1:]]
    x0, x1 = min(lx), max(lx)
    y0, y1 = min(ly), max(ly)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(v):
        return MARGIN + (math.log10(v) - x0) / (x1 - x0) * (WIDTH - 2 * MARGIN)

    def sy(v):
        return HEIGHT - MARGIN - (math.log10(v) - y0) / (y1 - y0) * (HEIGHT - 2 * MARGIN)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 15}" text-anchor="middle" font-size="12">'
        f'log10 {_axis_name(rows)}</text>',
        f'<text x="15" y="{HEIGHT // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {HEIGHT // 2})">log10 err_inf</text>',
    ]
    if title:
        lines.append(f'<text x="{WIDTH // 2}" y="25" text-anchor="middle" font-size="14">{title}</text>')
    for v, med, lo, hi in pts:
        x = sx(v)
        lines.append(f'<line class="errbar" x1="{_fmt(x)}" y1="{_fmt(sy(lo))}" x2="{_fmt(x)}" '
                     f'y2="{_fmt(sy(hi))}" stroke="gray"/>')
    if len(pts) > 1:
        path = " ".join(f"{_fmt(sx(v))},{_fmt(sy(med))}" for v, med, _, _ in pts)
        lines.append(f'<polyline points="{path}" fill="none" stroke="steelblue"/>')
    for v, med, _, _ in pts:
        lines.append(f'<circle cx="{_fmt(sx(v))}" cy="{_fmt(sy(med))}" r="3" fill="steelblue"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _axis_name(rows) -> str:
    names = {r.axis for r in rows}
    return names.pop() if len(names) == 1 else "value"


def emit_plot(rows, path, title: str = "") -> None:
    rows = list(rows)
    if not rows:
        raise ValueError("nothing to plot")
    Path(path).write_text(render_svg(rows, title))
