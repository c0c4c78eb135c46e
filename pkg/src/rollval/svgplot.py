"""Tiny deterministic SVG line charts (no plotting dependency, diffable)."""
from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

WIDTH, HEIGHT = 860, 520
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 170, 48, 56
PALETTE = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd",
    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
    "#bcbd22", "#e377c2",
]


def _fmt(v: float) -> str:
    return format(v, ".6g")


def _ticks(lo: float, hi: float, target: int = 6) -> List[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(t) < 1e-12 * step else t)
        t += step
    return ticks


class Series:
    def __init__(
        self,
        label: str,
        xs: Sequence[float],
        ys: Sequence[float],
        color: Optional[str] = None,
        dashed: bool = False,
    ):
        pts = [
            (float(x), float(y))
            for x, y in zip(xs, ys)
            if math.isfinite(x) and math.isfinite(y)
        ]
        self.label = label
        self.points = pts
        self.color = color
        self.dashed = dashed


def line_chart(
    path,
    series: Sequence[Series],
    title: str,
    xlabel: str,
    ylabel: str,
    annotations: Sequence[str] = (),
) -> None:
    """Write a fixed-size line chart; output depends only on the arguments."""
    all_pts = [p for s in series for p in s.points]
    if all_pts:
        xlo = min(p[0] for p in all_pts)
        xhi = max(p[0] for p in all_pts)
        ylo = min(p[1] for p in all_pts)
        yhi = max(p[1] for p in all_pts)
    else:
        xlo, xhi, ylo, yhi = 0.0, 1.0, 0.0, 1.0
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0
    ypad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - ypad, yhi + ypad

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def px(x: float) -> float:
        return MARGIN_L + (x - xlo) / (xhi - xlo) * plot_w

    def py(y: float) -> float:
        return MARGIN_T + (yhi - y) / (yhi - ylo) * plot_h

    out: List[str] = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">'
    )
    out.append(f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
    out.append(
        f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{_escape(title)}</text>'
    )
    # axes box
    out.append(
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" '
        f'height="{plot_h}" fill="none" stroke="black"/>'
    )
    for t in _ticks(xlo, xhi):
        if t < xlo - 1e-12 or t > xhi + 1e-12:
            continue
        x = px(t)
        out.append(
            f'<line x1="{_fmt(x)}" y1="{MARGIN_T + plot_h}" x2="{_fmt(x)}" '
            f'y2="{MARGIN_T + plot_h + 5}" stroke="black"/>'
        )
        out.append(
            f'<text x="{_fmt(x)}" y="{MARGIN_T + plot_h + 20}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="11">'
            f"{_fmt(t)}</text>"
        )
    for t in _ticks(ylo, yhi):
        if t < ylo - 1e-12 or t > yhi + 1e-12:
            continue
        y = py(t)
        out.append(
            f'<line x1="{MARGIN_L - 5}" y1="{_fmt(y)}" x2="{MARGIN_L}" '
            f'y2="{_fmt(y)}" stroke="black"/>'
        )
        out.append(
            f'<text x="{MARGIN_L - 9}" y="{_fmt(y + 4)}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>'
        )
        out.append(
            f'<line x1="{MARGIN_L}" y1="{_fmt(y)}" x2="{MARGIN_L + plot_w}" '
            f'y2="{_fmt(y)}" stroke="#dddddd"/>'
        )
    out.append(
        f'<text x="{MARGIN_L + plot_w / 2}" y="{HEIGHT - 14}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="13">'
        f"{_escape(xlabel)}</text>"
    )
    out.append(
        f'<text x="20" y="{MARGIN_T + plot_h / 2}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 20 {MARGIN_T + plot_h / 2})">'
        f"{_escape(ylabel)}</text>"
    )

    for idx, s in enumerate(series):
        color = s.color or PALETTE[idx % len(PALETTE)]
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in s.points)
        if pts:
            out.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" '
                f'stroke-width="1.6"{dash}/>'
            )
        ly = MARGIN_T + 16 + 18 * idx
        lx = MARGIN_L + plot_w + 14
        out.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"{dash}/>'
        )
        out.append(
            f'<text x="{lx + 28}" y="{ly}" font-family="sans-serif" '
            f'font-size="12">{_escape(s.label)}</text>'
        )

    for k, note in enumerate(annotations):
        out.append(
            f'<text x="{MARGIN_L + 10}" y="{MARGIN_T + 18 + 16 * k}" '
            f'font-family="sans-serif" font-size="12" fill="#333333">'
            f"{_escape(note)}</text>"
        )
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")


def _escape(text: str) -> str:
    return (
        str(text)
        .replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
    )
