"""Minimal SVG chart emission (no plotting dependency).

Charts carry the same numbers as the CSVs written next to them; the CSVs are
the source of truth and nothing downstream parses the SVG.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

_PALETTE = ("#2a9d4e", "#d62828", "#e9c46a", "#457b9d", "#9b5de5", "#f4845f")
_W, _H = 640, 400
_ML, _MR, _MT, _MB = 60, 20, 30, 45


def _axis_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return list(np.linspace(lo, hi, n))


def _frame(title: str, xlabel: str, ylabel: str, xlo, xhi, ylo, yhi) -> tuple[list[str], callable, callable]:
    def sx(v):
        return _ML + (v - xlo) / (xhi - xlo) * (_W - _ML - _MR)

    def sy(v):
        return _H - _MB - (v - ylo) / (yhi - ylo) * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{_W / 2}" y="{_H - 8}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{_H / 2}" text-anchor="middle" transform="rotate(-90 14 {_H / 2})">{escape(ylabel)}</text>',
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" height="{_H - _MT - _MB}" '
        f'fill="none" stroke="#999"/>',
    ]
    for tv in _axis_ticks(xlo, xhi):
        parts.append(
            f'<text x="{sx(tv):.1f}" y="{_H - _MB + 14}" text-anchor="middle">{tv:.3g}</text>'
        )
    for tv in _axis_ticks(ylo, yhi):
        parts.append(
            f'<text x="{_ML - 5}" y="{sy(tv):.1f}" text-anchor="end" dominant-baseline="middle">{tv:.3g}</text>'
        )
    return parts, sx, sy


def _legend(parts: list[str], labels: list[str]) -> None:
    for i, label in enumerate(labels):
        x = _ML + 10 + 130 * i
        parts.append(f'<rect x="{x}" y="{_MT + 6}" width="10" height="10" fill="{_PALETTE[i % len(_PALETTE)]}"/>')
        parts.append(f'<text x="{x + 14}" y="{_MT + 15}">{escape(label)}</text>')


def histogram_svg(bin_edges: np.ndarray, counts: dict[str, np.ndarray], title: str) -> str:
    """Grouped bar chart of per-label counts over shared bins."""
    labels = sorted(counts)
    ymax = max(1, max(int(c.max()) for c in counts.values()))
    parts, sx, sy = _frame(title, "recovery error", "count", float(bin_edges[0]), float(bin_edges[-1]), 0, ymax)
    nlab = len(labels)
    for li, label in enumerate(labels):
        color = _PALETTE[li % len(_PALETTE)]
        for i, c in enumerate(counts[label]):
            if c == 0:
                continue
            x0, x1 = sx(bin_edges[i]), sx(bin_edges[i + 1])
            bw = (x1 - x0) / nlab
            top = sy(float(c))
            parts.append(
                f'<rect x="{x0 + li * bw:.2f}" y="{top:.2f}" width="{max(bw, 0.5):.2f}" '
                f'height="{_H - _MB - top:.2f}" fill="{color}" fill-opacity="0.75"/>'
            )
    _legend(parts, labels)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def lines_svg(
    xs: np.ndarray,
    series: dict[str, np.ndarray],
    title: str,
    xlabel: str,
    ylabel: str,
    log_y: bool = False,
) -> str:
    """Multi-series line chart; optionally log10 on the y axis."""
    labels = sorted(series)
    ys = np.concatenate([np.asarray(series[k], dtype=np.float64) for k in labels])
    if log_y:
        floor = max(ys[ys > 0].min() if np.any(ys > 0) else 1e-12, 1e-12)
        tr = lambda v: np.log10(np.maximum(v, floor))
        ylabel = f"log10 {ylabel}"
    else:
        tr = lambda v: np.asarray(v, dtype=np.float64)
    ylo, yhi = float(tr(ys).min()), float(tr(ys).max())
    if yhi <= ylo:
        yhi = ylo + 1.0
    parts, sx, sy = _frame(title, xlabel, ylabel, float(xs[0]), float(xs[-1]), ylo, yhi)
    for li, label in enumerate(labels):
        pts = " ".join(
            f"{sx(float(x)):.2f},{sy(float(v)):.2f}" for x, v in zip(xs, tr(series[label]))
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{_PALETTE[li % len(_PALETTE)]}" stroke-width="1.8"/>'
        )
    _legend(parts, labels)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
