"""Minimal dependency-free SVG charts.

Output is deterministic and diffable: no timestamps, no generated ids.
The root element carries ``data-*`` attributes with the plotted extents,
and the run ids a chart was built from are embedded as an XML comment.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]

WIDTH, HEIGHT = 720, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 55


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / count))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= count:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-12 * span:
        ticks.append(v)
        v += step
    return ticks


def _log_ticks(lo: float, hi: float) -> list[float]:
    ticks = []
    e = math.floor(math.log10(lo))
    while 10**e <= hi * (1 + 1e-12):
        if 10**e >= lo * (1 - 1e-12):
            ticks.append(10.0**e)
        e += 1
    if not ticks:
        ticks = [lo, hi]
    return ticks


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:g}"


class _Frame:
    def __init__(self, xlo, xhi, ylo, yhi, logx, logy):
        self.logx, self.logy = logx, logy
        self.xlo = math.log10(xlo) if logx else xlo
        self.xhi = math.log10(xhi) if logx else xhi
        self.ylo = math.log10(ylo) if logy else ylo
        self.yhi = math.log10(yhi) if logy else yhi
        if self.xhi <= self.xlo:
            self.xhi = self.xlo + 1.0
        if self.yhi <= self.ylo:
            self.yhi = self.ylo + 1.0

    def px(self, x):
        x = math.log10(x) if self.logx else x
        return MARGIN_L + (x - self.xlo) / (self.xhi - self.xlo) * (WIDTH - MARGIN_L - MARGIN_R)

    def py(self, y):
        y = math.log10(y) if self.logy else y
        return HEIGHT - MARGIN_B - (y - self.ylo) / (self.yhi - self.ylo) * (HEIGHT - MARGIN_T - MARGIN_B)


def _axes(parts, frame, xticks, yticks, title, xlabel, ylabel):
    x0, x1 = MARGIN_L, WIDTH - MARGIN_R
    y0, y1 = HEIGHT - MARGIN_B, MARGIN_T
    parts.append(
        f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" '
        'fill="none" stroke="#333" stroke-width="1"/>'
    )
    for tv in xticks:
        px = frame.px(tv)
        parts.append(f'<line x1="{px:.2f}" y1="{y0}" x2="{px:.2f}" y2="{y0 + 5}" stroke="#333"/>')
        parts.append(
            f'<text x="{px:.2f}" y="{y0 + 18}" font-size="11" text-anchor="middle">{_fmt(tv)}</text>'
        )
    for tv in yticks:
        py = frame.py(tv)
        parts.append(f'<line x1="{x0 - 5}" y1="{py:.2f}" x2="{x0}" y2="{py:.2f}" stroke="#333"/>')
        parts.append(
            f'<text x="{x0 - 8}" y="{py + 4:.2f}" font-size="11" text-anchor="end">{_fmt(tv)}</text>'
        )
    parts.append(
        f'<text x="{(x0 + x1) / 2:.0f}" y="{HEIGHT - 12}" font-size="13" text-anchor="middle">'
        f"{escape(xlabel)}</text>"
    )
    parts.append(
        f'<text x="18" y="{(y0 + y1) / 2:.0f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 18 {(y0 + y1) / 2:.0f})">{escape(ylabel)}</text>'
    )
    parts.append(
        f'<text x="{(x0 + x1) / 2:.0f}" y="22" font-size="15" text-anchor="middle" '
        f'font-weight="bold">{escape(title)}</text>'
    )


def line_chart(
    series,
    *,
    title: str,
    xlabel: str,
    ylabel: str,
    logx: bool = False,
    logy: bool = False,
    run_ids=(),
) -> str:
    """Render (label, xs, ys) series as polylines.

    With a log axis, nonpositive values on that axis are dropped from the
    corresponding series.
    """
    cleaned = []
    for label, xs, ys in series:
        pts = [
            (float(x), float(y))
            for x, y in zip(xs, ys)
            if x is not None and y is not None
            and math.isfinite(x) and math.isfinite(y)
            and (not logx or x > 0) and (not logy or y > 0)
        ]
        if pts:
            cleaned.append((label, pts))
    if not cleaned:
        xlo = xhi = ylo = yhi = 1.0
    else:
        xlo = min(p[0] for _, pts in cleaned for p in pts)
        xhi = max(p[0] for _, pts in cleaned for p in pts)
        ylo = min(p[1] for _, pts in cleaned for p in pts)
        yhi = max(p[1] for _, pts in cleaned for p in pts)
    frame = _Frame(xlo, max(xhi, xlo * (1 + 1e-9) + 1e-12), ylo, max(yhi, ylo + 1e-12), logx, logy)
    xticks = _log_ticks(xlo, xhi) if logx else _nice_ticks(xlo, xhi)
    yticks = _log_ticks(ylo, yhi) if logy else _nice_ticks(ylo, yhi)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" data-xmin="{xlo!r}" data-xmax="{xhi!r}" '
        f'data-ymin="{ylo!r}" data-ymax="{yhi!r}" data-series="{len(cleaned)}">',
        f"<!-- runs: {escape(','.join(run_ids))} -->",
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    _axes(parts, frame, xticks, yticks, title, xlabel, ylabel)
    for k, (label, pts) in enumerate(cleaned):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{frame.px(x):.2f},{frame.py(y):.2f}" for x, y in pts)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        ly = MARGIN_T + 16 + 15 * k
        parts.append(
            f'<line x1="{WIDTH - MARGIN_R - 150}" y1="{ly - 4}" x2="{WIDTH - MARGIN_R - 130}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{WIDTH - MARGIN_R - 125}" y="{ly}" font-size="11">{escape(str(label))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def scatter_fit_chart(
    xs,
    ys,
    slope: float,
    intercept: float,
    *,
    title: str,
    xlabel: str,
    ylabel: str,
    run_ids=(),
) -> str:
    """Log-log scatter with the fitted power law overlay."""
    pts = [(float(x), float(y)) for x, y in zip(xs, ys) if x > 0 and y > 0]
    xlo, xhi = min(p[0] for p in pts), max(p[0] for p in pts)
    ylo, yhi = min(p[1] for p in pts), max(p[1] for p in pts)
    fit = [(x, 10 ** (intercept + slope * math.log10(x))) for x in (xlo, xhi)]
    ylo = min(ylo, min(p[1] for p in fit))
    yhi = max(yhi, max(p[1] for p in fit))
    frame = _Frame(xlo, xhi, ylo, yhi, True, True)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" data-xmin="{xlo!r}" data-xmax="{xhi!r}" '
        f'data-ymin="{ylo!r}" data-ymax="{yhi!r}" data-slope="{slope!r}">',
        f"<!-- runs: {escape(','.join(run_ids))} -->",
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    _axes(parts, frame, _log_ticks(xlo, xhi), _log_ticks(ylo, yhi), title, xlabel, ylabel)
    coords = " ".join(f"{frame.px(x):.2f},{frame.py(y):.2f}" for x, y in fit)
    parts.append(
        f'<polyline points="{coords}" fill="none" stroke="#d62728" stroke-width="1.5" '
        'stroke-dasharray="6 3"/>'
    )
    for x, y in pts:
        parts.append(
            f'<circle cx="{frame.px(x):.2f}" cy="{frame.py(y):.2f}" r="4" fill="#1f77b4"/>'
        )
    parts.append(
        f'<text x="{WIDTH - MARGIN_R - 150}" y="{MARGIN_T + 16}" font-size="12">'
        f"slope = {slope:.3f}</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts)


def bar_chart(labels, values, *, title: str, ylabel: str, run_ids=()) -> str:
    values = [float(v) for v in values]
    yhi = max(values + [1.0])
    frame = _Frame(0.0, max(1, len(values)), 0.0, yhi, False, False)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" data-ymin="0" data-ymax="{yhi!r}" '
        f'data-bars="{len(values)}">',
        f"<!-- runs: {escape(','.join(run_ids))} -->",
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    _axes(parts, frame, [], _nice_ticks(0.0, yhi), title, "", ylabel)
    slot = (WIDTH - MARGIN_L - MARGIN_R) / max(1, len(values))
    for k, (label, v) in enumerate(zip(labels, values)):
        x = MARGIN_L + k * slot + 0.15 * slot
        y = frame.py(v)
        parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{0.7 * slot:.2f}" '
            f'height="{HEIGHT - MARGIN_B - y:.2f}" fill="{PALETTE[k % len(PALETTE)]}"/>'
        )
        parts.append(
            f'<text x="{x + 0.35 * slot:.2f}" y="{HEIGHT - MARGIN_B + 18}" font-size="11" '
            f'text-anchor="middle">{escape(str(label))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
