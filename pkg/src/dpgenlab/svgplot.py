"""Minimal SVG line plots for sweep results; no plotting library involved.

One panel per metric; within a panel, one series per message length drawn as
a mean line over a +-1 std band.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .lab import METRICS, SweepResult

PANEL_WIDTH = 420
PANEL_HEIGHT = 260
MARGIN_LEFT = 64
MARGIN_RIGHT = 16
MARGIN_TOP = 34
MARGIN_BOTTOM = 42
COLUMNS = 2

SERIES_COLORS = ("#1f6fb2", "#d1495b", "#3e8e5a", "#8f6bb1", "#c07c2a", "#4a4a4a")


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def _scale(values: np.ndarray, lo: float, hi: float, out_lo: float, out_hi: float) -> np.ndarray:
    if hi <= lo:
        return np.full(values.shape, 0.5 * (out_lo + out_hi))
    return out_lo + (values - lo) / (hi - lo) * (out_hi - out_lo)


def _panel(
    result: SweepResult,
    metric: str,
    lengths: Sequence[int],
    origin_x: float,
    origin_y: float,
) -> list[str]:
    x0 = origin_x + MARGIN_LEFT
    x1 = origin_x + PANEL_WIDTH - MARGIN_RIGHT
    y0 = origin_y + PANEL_HEIGHT - MARGIN_BOTTOM
    y1 = origin_y + MARGIN_TOP

    curves = [result.curve(length, metric) for length in lengths]
    t_lo = min(float(c[0].min()) for c in curves)
    t_hi = max(float(c[0].max()) for c in curves)
    v_lo = min(float((c[1] - c[2]).min()) for c in curves)
    v_hi = max(float((c[1] + c[2]).max()) for c in curves)
    if v_hi == v_lo:
        v_hi = v_lo + 1.0

    parts = [
        f'<text x="{origin_x + PANEL_WIDTH / 2:.1f}" y="{origin_y + 18:.1f}" '
        f'text-anchor="middle" class="title">{metric}</text>',
        f'<rect x="{x0:.1f}" y="{y1:.1f}" width="{x1 - x0:.1f}" height="{y0 - y1:.1f}" '
        f'fill="none" stroke="#999" stroke-width="1"/>',
        f'<text x="{x0:.1f}" y="{y0 + 16:.1f}" text-anchor="middle" class="tick">{_fmt(t_lo)}</text>',
        f'<text x="{x1:.1f}" y="{y0 + 16:.1f}" text-anchor="middle" class="tick">{_fmt(t_hi)}</text>',
        f'<text x="{(x0 + x1) / 2:.1f}" y="{y0 + 30:.1f}" text-anchor="middle" class="label">temperature</text>',
        f'<text x="{x0 - 6:.1f}" y="{y0:.1f}" text-anchor="end" class="tick">{_fmt(v_lo)}</text>',
        f'<text x="{x0 - 6:.1f}" y="{y1 + 10:.1f}" text-anchor="end" class="tick">{_fmt(v_hi)}</text>',
    ]

    for si, (length, (ts, means, stds)) in enumerate(zip(lengths, curves)):
        color = SERIES_COLORS[si % len(SERIES_COLORS)]
        xs = _scale(ts, t_lo, t_hi, x0, x1)
        ys = _scale(means, v_lo, v_hi, y0, y1)
        upper = _scale(means + stds, v_lo, v_hi, y0, y1)
        lower = _scale(means - stds, v_lo, v_hi, y0, y1)
        band_points = " ".join(
            [f"{x:.2f},{y:.2f}" for x, y in zip(xs, upper)]
            + [f"{x:.2f},{y:.2f}" for x, y in zip(xs[::-1], lower[::-1])]
        )
        line_points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        parts.append(
            f'<polygon points="{band_points}" fill="{color}" opacity="0.18" stroke="none"/>'
        )
        parts.append(
            f'<polyline points="{line_points}" fill="none" stroke="{color}" stroke-width="1.8"/>'
        )
    return parts


def write_sweep_svg(result: SweepResult, path: Union[str, Path]) -> None:
    lengths = sorted({row.length for row in result.rows})
    metrics = [m for m in METRICS if any(r.metric == m for r in result.rows)]
    rows = (len(metrics) + COLUMNS - 1) // COLUMNS
    legend_height = 26
    width = COLUMNS * PANEL_WIDTH
    height = rows * PANEL_HEIGHT + legend_height

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        "<style>"
        "text { font-family: sans-serif; fill: #222; }"
        ".title { font-size: 14px; font-weight: bold; }"
        ".tick { font-size: 10px; fill: #555; }"
        ".label { font-size: 11px; fill: #555; }"
        "</style>",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    for si, length in enumerate(lengths):
        color = SERIES_COLORS[si % len(SERIES_COLORS)]
        lx = 16 + si * 130
        parts.append(
            f'<line x1="{lx}" y1="{legend_height / 2:.1f}" x2="{lx + 24}" '
            f'y2="{legend_height / 2:.1f}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{lx + 30}" y="{legend_height / 2 + 4:.1f}" class="label">'
            f"length = {length}</text>"
        )
    for mi, metric in enumerate(metrics):
        origin_x = (mi % COLUMNS) * PANEL_WIDTH
        origin_y = legend_height + (mi // COLUMNS) * PANEL_HEIGHT
        parts.extend(_panel(result, metric, lengths, origin_x, origin_y))
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
