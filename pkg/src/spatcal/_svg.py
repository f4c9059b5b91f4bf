"""Minimal native SVG emitters: scatter, heat map, boxplot.

Just enough for the artifact plots; no plotting dependency.  All emitters
return the SVG document as a string.
"""

from __future__ import annotations

import numpy as np

_W, _H = 640, 480
_MARGIN = 56


def _axis(lo, hi):
    if hi <= lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _sx(v, lo, hi, width=_W):
    return _MARGIN + (v - lo) / (hi - lo) * (width - 2 * _MARGIN)


def _sy(v, lo, hi, height=_H):
    return height - _MARGIN - (v - lo) / (hi - lo) * (height - 2 * _MARGIN)


def _frame(title, xlabel, ylabel, width=_W, height=_H):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width/2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{width/2:.0f}" y="{height-12:.0f}" text-anchor="middle" '
        f'font-size="12">{xlabel}</text>',
        f'<text x="16" y="{height/2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {height/2:.0f})">{ylabel}</text>',
        f'<rect x="{_MARGIN}" y="{_MARGIN}" width="{width-2*_MARGIN}" '
        f'height="{height-2*_MARGIN}" fill="none" stroke="black"/>',
    ]


def scatter_svg(x, y, title="", xlabel="", ylabel="", lines=()):
    """Scatter of (x, y); lines is a list of (intercept, slope, color)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xlo, xhi = _axis(float(x.min()), float(x.max()))
    ylo, yhi = _axis(float(y.min()), float(y.max()))
    parts = _frame(title, xlabel, ylabel)
    for xi, yi in zip(x, y):
        parts.append(f'<circle cx="{_sx(xi,xlo,xhi):.2f}" cy="{_sy(yi,ylo,yhi):.2f}" '
                     f'r="2" fill="steelblue" fill-opacity="0.6"/>')
    for intercept, slope, color in lines:
        y0, y1 = intercept + slope * xlo, intercept + slope * xhi
        parts.append(f'<line x1="{_sx(xlo,xlo,xhi):.2f}" y1="{_sy(y0,ylo,yhi):.2f}" '
                     f'x2="{_sx(xhi,xlo,xhi):.2f}" y2="{_sy(y1,ylo,yhi):.2f}" '
                     f'stroke="{color}" stroke-width="1.5"/>')
    for lo, hi, horiz in ((xlo, xhi, False), (ylo, yhi, True)):
        for v in np.linspace(lo, hi, 5):
            if horiz:
                parts.append(f'<text x="{_MARGIN-6}" y="{_sy(v,ylo,yhi):.0f}" '
                             f'text-anchor="end" font-size="10">{v:.3g}</text>')
            else:
                parts.append(f'<text x="{_sx(v,xlo,xhi):.0f}" y="{_H-_MARGIN+14}" '
                             f'text-anchor="middle" font-size="10">{v:.3g}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def _color(frac):
    # blue -> yellow -> red
    frac = min(max(frac, 0.0), 1.0)
    if frac < 0.5:
        t = frac / 0.5
        r, g, b = int(60 + t * 195), int(80 + t * 175), int(200 - t * 140)
    else:
        t = (frac - 0.5) / 0.5
        r, g, b = 255, int(255 - t * 195), int(60 - t * 60)
    return f"rgb({r},{g},{b})"


def heatmap_svg(x, y, values, title="", xlabel="x (km)", ylabel="y (km)"):
    """Colored-cell map of values at grid points (x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = np.isfinite(v)
    vlo, vhi = (float(v[ok].min()), float(v[ok].max())) if ok.any() else (0.0, 1.0)
    if vhi <= vlo:
        vhi = vlo + 1.0
    xs, ys = np.unique(x), np.unique(y)
    cw = (xs[1] - xs[0]) if len(xs) > 1 else 1.0
    ch = (ys[1] - ys[0]) if len(ys) > 1 else 1.0
    xlo, xhi = _axis(float(x.min()) - cw / 2, float(x.max()) + cw / 2)
    ylo, yhi = _axis(float(y.min()) - ch / 2, float(y.max()) + ch / 2)
    parts = _frame(f"{title} [{vlo:.3g}, {vhi:.3g}]", xlabel, ylabel)
    for xi, yi, vi in zip(x, y, v):
        if not np.isfinite(vi):
            continue
        px = _sx(xi - cw / 2, xlo, xhi)
        py = _sy(yi + ch / 2, ylo, yhi)
        pw = _sx(xi + cw / 2, xlo, xhi) - px
        ph = _sy(yi - ch / 2, ylo, yhi) - py
        parts.append(f'<rect x="{px:.2f}" y="{py:.2f}" width="{pw:.2f}" '
                     f'height="{ph:.2f}" fill="{_color((vi-vlo)/(vhi-vlo))}"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def boxplot_svg(groups, title="", ylabel=""):
    """Boxplots per labeled group; groups is a list of (label, values)."""
    all_vals = np.concatenate([np.asarray(v, dtype=float) for _, v in groups])
    ylo, yhi = _axis(float(all_vals.min()), float(all_vals.max()))
    parts = _frame(title, "", ylabel)
    n = len(groups)
    span = _W - 2 * _MARGIN
    for i, (label, vals) in enumerate(groups):
        v = np.asarray(vals, dtype=float)
        q1, q2, q3 = np.quantile(v, [0.25, 0.5, 0.75])
        iqr = q3 - q1
        whisk_lo = float(v[v >= q1 - 1.5 * iqr].min())
        whisk_hi = float(v[v <= q3 + 1.5 * iqr].max())
        cx = _MARGIN + span * (i + 0.5) / n
        hw = span / n * 0.3
        parts.append(f'<line x1="{cx:.1f}" y1="{_sy(whisk_lo,ylo,yhi):.1f}" '
                     f'x2="{cx:.1f}" y2="{_sy(whisk_hi,ylo,yhi):.1f}" stroke="black"/>')
        parts.append(f'<rect x="{cx-hw:.1f}" y="{_sy(q3,ylo,yhi):.1f}" width="{2*hw:.1f}" '
                     f'height="{_sy(q1,ylo,yhi)-_sy(q3,ylo,yhi):.1f}" '
                     f'fill="lightsteelblue" stroke="black"/>')
        parts.append(f'<line x1="{cx-hw:.1f}" y1="{_sy(q2,ylo,yhi):.1f}" '
                     f'x2="{cx+hw:.1f}" y2="{_sy(q2,ylo,yhi):.1f}" '
                     f'stroke="black" stroke-width="2"/>')
        for out in v[(v < whisk_lo) | (v > whisk_hi)]:
            parts.append(f'<circle cx="{cx:.1f}" cy="{_sy(out,ylo,yhi):.1f}" r="2" '
                         f'fill="none" stroke="black"/>')
        parts.append(f'<text x="{cx:.1f}" y="{_H-_MARGIN+14}" text-anchor="middle" '
                     f'font-size="10">{label}</text>')
    for vv in np.linspace(ylo, yhi, 5):
        parts.append(f'<text x="{_MARGIN-6}" y="{_sy(vv,ylo,yhi):.0f}" '
                     f'text-anchor="end" font-size="10">{vv:.3g}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
