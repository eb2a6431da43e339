"""Minimal SVG rendering of boxplots and attainment staircases."""

from __future__ import annotations

from html import escape

import numpy as np

WIDTH, HEIGHT = 480, 320
MARGIN = dict(left=60, right=20, top=30, bottom=50)
PALETTE = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _frame(title: str, xlabel: str, ylabel: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 8}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>',
    ]


class _Scale:
    def __init__(self, lo: float, hi: float, a: float, b: float):
        if not np.isfinite(lo) or not np.isfinite(hi):
            lo, hi = 0.0, 1.0
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        self.lo, self.hi, self.a, self.b = lo, hi, a, b

    def __call__(self, v: float) -> float:
        return self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)


def _y_axis(parts: list[str], ys: _Scale, x0: float, x1: float) -> None:
    for v in np.linspace(ys.lo, ys.hi, 5):
        y = ys(v)
        parts.append(f'<line x1="{_fmt(x0)}" y1="{_fmt(y)}" x2="{_fmt(x1)}" y2="{_fmt(y)}" stroke="#ddd"/>')
        parts.append(f'<text x="{_fmt(x0 - 4)}" y="{_fmt(y + 4)}" text-anchor="end" font-size="10">{v:.3g}</text>')


def boxplot_svg(groups: dict[str, np.ndarray], title: str = "", ylabel: str = "") -> str:
    """One box (quartiles, median, 1.5 IQR whiskers) per group, in insertion order."""
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    vals = {k: np.asarray(v, dtype=float)[np.isfinite(np.asarray(v, dtype=float))] for k, v in groups.items()}
    pooled = np.concatenate([v for v in vals.values() if v.size] or [np.zeros(1)])
    ys = _Scale(float(pooled.min()), float(pooled.max()), y0, y1)
    parts = _frame(title, "", ylabel)
    _y_axis(parts, ys, x0, x1)
    n = max(len(vals), 1)
    step = (x1 - x0) / n
    for i, (name, v) in enumerate(vals.items()):
        cx = x0 + step * (i + 0.5)
        half = step * 0.3
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<text x="{_fmt(cx)}" y="{_fmt(y0 + 16)}" text-anchor="middle" font-size="11">{escape(name)}</text>')
        if not v.size:
            continue
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        iqr = q3 - q1
        lo = float(v[v >= q1 - 1.5 * iqr].min())
        hi = float(v[v <= q3 + 1.5 * iqr].max())
        parts.append(f'<line x1="{_fmt(cx)}" y1="{_fmt(ys(lo))}" x2="{_fmt(cx)}" y2="{_fmt(ys(hi))}" stroke="black"/>')
        top, bot = ys(q3), ys(q1)
        parts.append(
            f'<rect x="{_fmt(cx - half)}" y="{_fmt(top)}" width="{_fmt(2 * half)}" '
            f'height="{_fmt(max(bot - top, 0.5))}" fill="{color}" fill-opacity="0.5" stroke="black"/>'
        )
        parts.append(
            f'<line x1="{_fmt(cx - half)}" y1="{_fmt(ys(med))}" x2="{_fmt(cx + half)}" y2="{_fmt(ys(med))}" '
            'stroke="black" stroke-width="2"/>'
        )
        for o in v[(v < lo) | (v > hi)]:
            parts.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(ys(o))}" r="2" fill="none" stroke="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def attainment_svg(surfaces: dict[str, np.ndarray], title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Staircases of 2-D attainment surfaces (both axes minimised)."""
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    pts = [np.asarray(s, dtype=float).reshape(-1, 2) for s in surfaces.values()]
    pooled = np.vstack([s for s in pts if s.size] or [np.zeros((1, 2))])
    xs = _Scale(float(pooled[:, 0].min()), float(pooled[:, 0].max()), x0, x1)
    ys = _Scale(float(pooled[:, 1].min()), float(pooled[:, 1].max()), y0, y1)
    parts = _frame(title, xlabel, ylabel)
    _y_axis(parts, ys, x0, x1)
    for v in np.linspace(xs.lo, xs.hi, 5):
        parts.append(f'<text x="{_fmt(xs(v))}" y="{_fmt(y0 + 14)}" text-anchor="middle" font-size="10">{v:.3g}</text>')
    for i, (name, s) in enumerate(surfaces.items()):
        s = np.asarray(s, dtype=float).reshape(-1, 2)
        color = PALETTE[i % len(PALETTE)]
        parts.append(
            f'<text x="{_fmt(x1 - 4)}" y="{_fmt(y1 + 14 * (i + 1))}" text-anchor="end" font-size="11" '
            f'fill="{color}">{escape(name)}</text>'
        )
        if not s.size:
            continue
        s = s[np.argsort(s[:, 0], kind="stable")]
        path = [f"M {_fmt(xs(s[0, 0]))} {_fmt(y1)}"]
        for k in range(s.shape[0]):
            path.append(f"L {_fmt(xs(s[k, 0]))} {_fmt(ys(s[k, 1]))}")
            nxt = xs(s[k + 1, 0]) if k + 1 < s.shape[0] else x1
            path.append(f"L {_fmt(nxt)} {_fmt(ys(s[k, 1]))}")
        parts.append(f'<path d="{" ".join(path)}" fill="none" stroke="{color}" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
