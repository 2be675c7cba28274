"""Minimal native SVG charts: histograms, grouped bars and line plots."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 480, 320
MARGIN = 50
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def _frame(title, xlabel, ylabel):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 8}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>',
        f'<text x="12" y="{HEIGHT / 2}" font-size="11" transform="rotate(-90 12 {HEIGHT / 2})" '
        f'text-anchor="middle">{escape(ylabel)}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN / 2}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]


def _plot_area():
    return MARGIN, WIDTH - MARGIN / 2, MARGIN, HEIGHT - MARGIN


def _tick(x, y, label, anchor="middle"):
    return f'<text x="{x:.1f}" y="{y:.1f}" font-size="9" text-anchor="{anchor}">{escape(label)}</text>'


def histogram_svg(values, bins=36, value_range=(-np.pi, np.pi), title="", xlabel="", ylabel="count"):
    counts, edges = np.histogram(np.asarray(values, dtype=np.float64), bins=bins, range=value_range)
    x0, x1, y0, y1 = _plot_area()
    top = max(int(counts.max()), 1)
    w = (x1 - x0) / bins
    out = _frame(title, xlabel, ylabel)
    for k, c in enumerate(counts):
        h = (y1 - y0) * c / top
        out.append(f'<rect x="{x0 + k * w:.2f}" y="{y1 - h:.2f}" width="{w:.2f}" height="{h:.2f}" '
                   f'fill="{PALETTE[0]}" stroke="white" stroke-width="0.5"/>')
    out.append(_tick(x0, y1 + 14, f"{edges[0]:.2f}"))
    out.append(_tick(x1, y1 + 14, f"{edges[-1]:.2f}"))
    out.append(_tick(x0 - 4, y0 + 4, str(top), "end"))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart_svg(groups, series, title="", ylabel="", errors=None):
    """``series``: {name: [value per group]}; optional ``errors`` with the same layout."""
    x0, x1, y0, y1 = _plot_area()
    names = list(series)
    vals = np.array([series[s] for s in names], dtype=np.float64)
    top = float(np.nanmax(vals)) if np.isfinite(vals).any() and np.nanmax(vals) > 0 else 1.0
    gw = (x1 - x0) / max(len(groups), 1)
    bw = gw * 0.8 / max(len(names), 1)
    out = _frame(title, "", ylabel)
    for g, group in enumerate(groups):
        for s, name in enumerate(names):
            v = vals[s, g]
            if not np.isfinite(v):
                continue
            h = (y1 - y0) * v / top
            x = x0 + g * gw + gw * 0.1 + s * bw
            out.append(f'<rect x="{x:.2f}" y="{y1 - h:.2f}" width="{bw:.2f}" height="{h:.2f}" '
                       f'fill="{PALETTE[s % len(PALETTE)]}"/>')
            if errors is not None:
                e = (y1 - y0) * errors[name][g] / top
                cx = x + bw / 2
                out.append(f'<line x1="{cx:.2f}" y1="{y1 - h - e:.2f}" x2="{cx:.2f}" y2="{y1 - h + e:.2f}" stroke="black"/>')
        out.append(_tick(x0 + (g + 0.5) * gw, y1 + 14, str(group)))
    for s, name in enumerate(names):
        out.append(f'<rect x="{x1 - 90}" y="{y0 + 12 * s}" width="8" height="8" fill="{PALETTE[s % len(PALETTE)]}"/>')
        out.append(_tick(x1 - 78, y0 + 12 * s + 8, name, "start"))
    out.append(_tick(x0 - 4, y0 + 4, f"{top:.3g}", "end"))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def line_plot_svg(x, ys, title="", xlabel="", ylabel="", log_y=False):
    """``ys``: {name: values aligned with x}."""
    x = np.asarray(x, dtype=np.float64)
    x0, x1, y0, y1 = _plot_area()
    data = {k: np.asarray(v, dtype=np.float64) for k, v in ys.items()}
    if log_y:
        data = {k: np.log10(np.clip(v, 1e-300, None)) for k, v in data.items()}
    allv = np.concatenate([v[np.isfinite(v)] for v in data.values()]) if data else np.zeros(1)
    lo, hi = (float(allv.min()), float(allv.max())) if allv.size else (0.0, 1.0)
    if hi == lo:
        hi = lo + 1.0
    xlo, xhi = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
    if xhi == xlo:
        xhi = xlo + 1.0
    out = _frame(title, xlabel, ("log10 " if log_y else "") + ylabel)
    for s, (name, v) in enumerate(data.items()):
        px = x0 + (x - xlo) / (xhi - xlo) * (x1 - x0)
        py = y1 - (v - lo) / (hi - lo) * (y1 - y0)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py) if np.isfinite(b))
        color = PALETTE[s % len(PALETTE)]
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<rect x="{x1 - 90}" y="{y0 + 12 * s}" width="8" height="8" fill="{color}"/>')
        out.append(_tick(x1 - 78, y0 + 12 * s + 8, name, "start"))
    out.append(_tick(x0 - 4, y0 + 4, f"{hi:.3g}", "end"))
    out.append(_tick(x0 - 4, y1, f"{lo:.3g}", "end"))
    out.append("</svg>")
    return "\n".join(out) + "\n"
