"""Minimal self-contained SVG line plots (no plotting dependency)."""

from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def _ticks(lo: float, hi: float, n: int = 5) -> List[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(1, n)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def line_plot_svg(series: Sequence[Tuple[np.ndarray, np.ndarray, str]],
                  title: str = "", xlabel: str = "", ylabel: str = "",
                  width: int = 720, height: int = 480,
                  hlines: Sequence[float] = ()) -> str:
    """Render (x, y, label) series as a self-contained SVG document."""
    if not series:
        raise ValueError("no rows")
    margin_l, margin_r, margin_t, margin_b = 64, 16, 36, 48
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b
    xs = np.concatenate([np.asarray(s[0], dtype=float) for s in series])
    ys = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    finite = np.isfinite(xs) & np.isfinite(ys)
    if not np.any(finite):
        raise ValueError("no finite data")
    x_lo, x_hi = float(np.min(xs[finite])), float(np.max(xs[finite]))
    y_lo, y_hi = float(np.min(ys[finite])), float(np.max(ys[finite]))
    for h in hlines:
        y_lo, y_hi = min(y_lo, h), max(y_hi, h)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.04 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x):
        return margin_l + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y):
        return margin_t + (y_hi - y) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin_l}" y="{margin_t}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#333"/>',
    ]
    for t in _ticks(x_lo, x_hi):
        px = sx(t)
        parts.append(f'<line x1="{px:.1f}" y1="{margin_t + plot_h}" x2="{px:.1f}" '
                     f'y2="{margin_t + plot_h + 5}" stroke="#333"/>')
        parts.append(f'<text x="{px:.1f}" y="{margin_t + plot_h + 18}" '
                     f'text-anchor="middle">{t:g}</text>')
    for t in _ticks(y_lo, y_hi):
        py = sy(t)
        parts.append(f'<line x1="{margin_l - 5}" y1="{py:.1f}" x2="{margin_l}" '
                     f'y2="{py:.1f}" stroke="#333"/>')
        parts.append(f'<text x="{margin_l - 8}" y="{py + 4:.1f}" '
                     f'text-anchor="end">{t:g}</text>')
    for h in hlines:
        parts.append(f'<line x1="{margin_l}" y1="{sy(h):.1f}" x2="{margin_l + plot_w}" '
                     f'y2="{sy(h):.1f}" stroke="#999" stroke-dasharray="4 3"/>')
    legend_y = margin_t + 14
    for k, (x, y, label) in enumerate(series):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x[ok], y[ok]))
        color = _PALETTE[k % len(_PALETTE)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        if label:
            parts.append(f'<line x1="{margin_l + plot_w - 150}" y1="{legend_y}" '
                         f'x2="{margin_l + plot_w - 130}" y2="{legend_y}" '
                         f'stroke="{color}" stroke-width="2"/>')
            parts.append(f'<text x="{margin_l + plot_w - 124}" y="{legend_y + 4}">{label}</text>')
            legend_y += 16
    if title:
        parts.append(f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" '
                     f'font-size="14">{title}</text>')
    if xlabel:
        parts.append(f'<text x="{margin_l + plot_w / 2:.0f}" y="{height - 10}" '
                     f'text-anchor="middle">{xlabel}</text>')
    if ylabel:
        parts.append(f'<text x="16" y="{margin_t + plot_h / 2:.0f}" text-anchor="middle" '
                     f'transform="rotate(-90 16 {margin_t + plot_h / 2:.0f})">{ylabel}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
