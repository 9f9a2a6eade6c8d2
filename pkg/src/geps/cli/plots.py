"""Deterministic hand-written SVG charts (no timestamps, fixed precision)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

W, H = 640, 400
L, R, TOP, BOT = 70, 20, 40, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _n(x: float) -> str:
    return f"{x:.2f}"


def _header(title: str) -> list[str]:
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}">',
            f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W // 2}" y="22" text-anchor="middle" font-family="sans-serif" '
            f'font-size="14">{escape(title)}</text>',
            f'<line x1="{L}" y1="{H - BOT}" x2="{W - R}" y2="{H - BOT}" stroke="black"/>',
            f'<line x1="{L}" y1="{TOP}" x2="{L}" y2="{H - BOT}" stroke="black"/>']


def line_plot(series: Mapping[str, tuple[Sequence[float], Sequence[float]]], title: str,
              xlabel: str = "step", ylabel: str = "loss", logy: bool = True) -> str:
    """One polyline per series, one vertex per finite point."""
    pts = {}
    for name, (xs, ys) in series.items():
        keep = [(float(x), float(y)) for x, y in zip(xs, ys)
                if math.isfinite(float(y)) and (not logy or float(y) > 0)]
        pts[name] = [(x, math.log10(y) if logy else y) for x, y in keep]
    allp = [p for v in pts.values() for p in v]
    out = _header(title)
    if allp:
        x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
        y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
        x1 = x1 if x1 > x0 else x0 + 1
        y1 = y1 if y1 > y0 else y0 + 1

        def sx(x):
            return L + (x - x0) / (x1 - x0) * (W - L - R)

        def sy(y):
            return H - BOT - (y - y0) / (y1 - y0) * (H - TOP - BOT)

        for i, (name, p) in enumerate(pts.items()):
            colour = PALETTE[i % len(PALETTE)]
            coords = " ".join(f"{_n(sx(x))},{_n(sy(y))}" for x, y in p)
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" '
                       f'points="{coords}"/>')
            out.append(f'<text x="{W - R - 150}" y="{TOP + 14 * (i + 1)}" font-family="sans-serif" '
                       f'font-size="11" fill="{colour}">{escape(name)}</text>')
        lab = (lambda v: f"1e{v:.1f}") if logy else (lambda v: f"{v:.3g}")
        out.append(f'<text x="{L - 4}" y="{_n(sy(y1) + 4)}" text-anchor="end" '
                   f'font-size="10">{lab(y1)}</text>')
        out.append(f'<text x="{L - 4}" y="{_n(sy(y0))}" text-anchor="end" '
                   f'font-size="10">{lab(y0)}</text>')
        out.append(f'<text x="{L}" y="{H - BOT + 14}" font-size="10">{x0:g}</text>')
        out.append(f'<text x="{W - R}" y="{H - BOT + 14}" text-anchor="end" '
                   f'font-size="10">{x1:g}</text>')
    out.append(f'<text x="{W // 2}" y="{H - 12}" text-anchor="middle" font-size="12">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{H // 2}" font-size="12" transform="rotate(-90 16 {H // 2})" '
               f'text-anchor="middle">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_plot(labels: Sequence[str], values: Sequence[float], title: str,
             ylabel: str = "relative MSE") -> str:
    """One bar per label; non-finite values are drawn as empty slots."""
    out = _header(title)
    vals = [float(v) if math.isfinite(float(v)) else 0.0 for v in values]
    top = max(vals) if vals and max(vals) > 0 else 1.0
    n = max(len(labels), 1)
    slot = (W - L - R) / n
    for i, (lab, v) in enumerate(zip(labels, vals)):
        h = v / top * (H - TOP - BOT)
        x = L + i * slot + 0.15 * slot
        out.append(f'<rect class="bar" x="{_n(x)}" y="{_n(H - BOT - h)}" width="{_n(0.7 * slot)}" '
                   f'height="{_n(h)}" fill="{PALETTE[0]}"/>')
        out.append(f'<text x="{_n(x + 0.35 * slot)}" y="{H - BOT + 14}" text-anchor="middle" '
                   f'font-size="9">{escape(str(lab))}</text>')
    out.append(f'<text x="{L - 4}" y="{TOP + 4}" text-anchor="end" font-size="10">{top:.3g}</text>')
    out.append(f'<text x="16" y="{H // 2}" font-size="12" transform="rotate(-90 16 {H // 2})" '
               f'text-anchor="middle">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, text: str) -> None:
    Path(path).write_text(text)
