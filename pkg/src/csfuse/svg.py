"""Minimal self-contained SVG line plots (no external assets, no timestamps)."""

from __future__ import annotations

import numpy as np

__all__ = ["line_plot"]

_WIDTH, _HEIGHT = 640, 480
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 64, 16, 32, 48

_PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2",
)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def line_plot(
    series,
    xlabel: str,
    ylabel: str,
    title: str = "",
    xlim: tuple[float, float] | None = None,
    ylim: tuple[float, float] | None = None,
) -> str:
    """Render ``[(label, x, y), ...]`` as one SVG document string.

    Data coordinates map linearly into the plot box; the polyline ``points``
    attribute carries ``x,y`` pairs in pixel space with y growing downward.
    """
    series = [(str(lbl), np.asarray(x, float), np.asarray(y, float)) for lbl, x, y in series]
    xs = np.concatenate([s[1] for s in series]) if series else np.array([0.0, 1.0])
    ys = np.concatenate([s[2] for s in series]) if series else np.array([0.0, 1.0])
    x0, x1 = xlim if xlim else (float(xs.min()), float(xs.max()))
    y0, y1 = ylim if ylim else (float(ys.min()), float(ys.max()))
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0

    px0, px1 = _MARGIN_L, _WIDTH - _MARGIN_R
    py0, py1 = _HEIGHT - _MARGIN_B, _MARGIN_T

    def to_px(x, y):
        fx = px0 + (x - x0) / (x1 - x0) * (px1 - px0)
        fy = py0 + (y - y0) / (y1 - y0) * (py1 - py0)
        return fx, fy

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect x="0" y="0" width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<rect x="{px0}" y="{py1}" width="{px1 - px0}" height="{py0 - py1}" '
        f'fill="none" stroke="#333333"/>',
    ]
    # axis ticks at the box corners plus midpoints
    for frac in (0.0, 0.5, 1.0):
        xt = x0 + frac * (x1 - x0)
        yt = y0 + frac * (y1 - y0)
        fx, _ = to_px(xt, y0)
        _, fy = to_px(x0, yt)
        parts.append(
            f'<text x="{fx:.1f}" y="{py0 + 18:.1f}" font-size="12" '
            f'text-anchor="middle" fill="#333333">{_fmt(xt)}</text>'
        )
        parts.append(
            f'<text x="{px0 - 8:.1f}" y="{fy + 4:.1f}" font-size="12" '
            f'text-anchor="end" fill="#333333">{_fmt(yt)}</text>'
        )
    parts.append(
        f'<text x="{(px0 + px1) / 2:.1f}" y="{_HEIGHT - 12}" font-size="13" '
        f'text-anchor="middle" fill="#111111">{xlabel}</text>'
    )
    parts.append(
        f'<text x="16" y="{(py0 + py1) / 2:.1f}" font-size="13" text-anchor="middle" '
        f'fill="#111111" transform="rotate(-90 16 {(py0 + py1) / 2:.1f})">{ylabel}</text>'
    )
    if title:
        parts.append(
            f'<text x="{(px0 + px1) / 2:.1f}" y="20" font-size="14" '
            f'text-anchor="middle" fill="#111111">{title}</text>'
        )

    for i, (label, x, y) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{fx:.2f},{fy:.2f}" for fx, fy in (to_px(a, b) for a, b in zip(x, y)))
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'
        )
        ly = _MARGIN_T + 16 + 16 * i
        parts.append(
            f'<line x1="{px1 - 150}" y1="{ly - 4}" x2="{px1 - 126}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{px1 - 120}" y="{ly}" font-size="12" fill="#111111">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
