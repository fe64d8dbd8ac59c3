"""Static SVG log-log plots of rate reports, written without a plotting library."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 440
MARGIN = dict(left=70, right=20, top=40, bottom=55)


def _decades(lo: float, hi: float) -> list[float]:
    return [10.0**k for k in range(math.floor(math.log10(lo)), math.ceil(math.log10(hi)) + 1)]


def loglog_svg(
    x, y, se=None, *, title: str = "", x_label: str = "N", y_label: str = "error",
    fit: tuple[float, float] | None = None, guide_slope: float | None = None,
    log_correction: float = 0.0,
) -> str:
    """SVG 1.1 document with points, error bars, fitted and guide lines.

    ``fit`` is ``(slope, intercept)`` of ``ln y - c ln ln x`` against ``ln x``
    with ``c = log_correction``; the drawn curve adds the correction back.
    ``guide_slope`` is drawn through the first point.
    """
    pts = [(float(a), float(b), float(s) if se is not None else 0.0)
           for a, b, s in zip(x, y, se if se is not None else [0.0] * len(x)) if a > 0 and b > 0]
    if not pts:
        raise ValueError("nothing to plot on log axes")
    xs = [p[0] for p in pts]
    lows = [max(p[1] - p[2], p[1] * 0.2) for p in pts]
    highs = [p[1] + p[2] for p in pts]
    x_lo, x_hi = min(xs) / 1.3, max(xs) * 1.3
    y_lo, y_hi = min(lows) / 1.5, max(highs) * 1.5

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(v):
        return MARGIN["left"] + pw * (math.log(v) - math.log(x_lo)) / (math.log(x_hi) - math.log(x_lo))

    def py(v):
        return MARGIN["top"] + ph * (1 - (math.log(v) - math.log(y_lo)) / (math.log(y_hi) - math.log(y_lo)))

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v in _decades(x_lo, x_hi):
        if x_lo <= v <= x_hi:
            X = px(v)
            out.append(f'<line x1="{X:.2f}" y1="{MARGIN["top"]}" x2="{X:.2f}" y2="{MARGIN["top"] + ph}" stroke="#ddd"/>')
            out.append(f'<text x="{X:.2f}" y="{MARGIN["top"] + ph + 18}" text-anchor="middle">{v:g}</text>')
    for v in _decades(y_lo, y_hi):
        if y_lo <= v <= y_hi:
            Y = py(v)
            out.append(f'<line x1="{MARGIN["left"]}" y1="{Y:.2f}" x2="{MARGIN["left"] + pw}" y2="{Y:.2f}" stroke="#ddd"/>')
            out.append(f'<text x="{MARGIN["left"] - 6}" y="{Y + 4:.2f}" text-anchor="end">{v:g}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(x_label)}</text>')
    out.append(f'<text x="16" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.1f})">{escape(y_label)}</text>')

    def polyline(fn, colour, dash=""):
        n = 40
        coords = []
        for k in range(n + 1):
            v = math.exp(math.log(min(xs)) + k * (math.log(max(xs)) - math.log(min(xs))) / n)
            w = fn(v)
            if y_lo <= w <= y_hi:
                coords.append(f"{px(v):.2f},{py(w):.2f}")
        if len(coords) > 1:
            extra = f' stroke-dasharray="{dash}"' if dash else ""
            out.append(f'<polyline points="{" ".join(coords)}" fill="none" stroke="{colour}" stroke-width="1.5"{extra}/>')

    if fit is not None:
        slope, icpt = fit
        polyline(lambda v: math.exp(icpt + slope * math.log(v) + log_correction * math.log(math.log(v))), "#c03030")
    if guide_slope is not None:
        x0, y0 = pts[0][0], pts[0][1]
        polyline(lambda v: y0 * (v / x0) ** guide_slope, "#3050c0", "6,4")

    for a, b, s in pts:
        X, Y = px(a), py(b)
        if s > 0:
            lo, hi = max(b - s, y_lo), min(b + s, y_hi)
            out.append(f'<line x1="{X:.2f}" y1="{py(lo):.2f}" x2="{X:.2f}" y2="{py(hi):.2f}" stroke="black"/>')
        out.append(f'<circle cx="{X:.2f}" cy="{Y:.2f}" r="3.5" fill="black"/>')

    lx, ly = MARGIN["left"] + pw - 190, MARGIN["top"] + 16
    if fit is not None:
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="#c03030" stroke-width="1.5"/>')
        out.append(f'<text x="{lx + 30}" y="{ly + 4}">fit, slope {fit[0]:.3f}</text>')
        ly += 18
    if guide_slope is not None:
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" stroke="#3050c0" stroke-dasharray="6,4" stroke-width="1.5"/>')
        out.append(f'<text x="{lx + 30}" y="{ly + 4}">theory, slope {guide_slope:.3f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def rate_report_svg(report) -> str:
    fit = (report.fit.slope, report.fit.intercept) if report.fit else None
    target = report.target if math.isfinite(report.target) else None
    return loglog_svg(
        report.levels, report.e1, report.e1_se, title=report.name, x_label=report.x_name,
        y_label="E1", fit=fit, guide_slope=target,
        log_correction=report.fit.log_correction if report.fit else 0.0,
    )
