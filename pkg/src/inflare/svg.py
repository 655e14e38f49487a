"""Minimal static SVG emission for diagnostics (no plotting dependency).

Plots are never inputs to any test or metric; they exist so runs leave a
visual record next to the CSVs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _mapper(lo: float, hi: float, size: int, margin: int):
    span = hi - lo if hi > lo else 1.0

    def to_px(v):
        return margin + (v - lo) / span * (size - 2 * margin)

    return to_px


def scatter(
    points: np.ndarray,
    path: str | Path,
    labels: np.ndarray | None = None,
    size: int = 480,
    title: str = "",
) -> None:
    """Write a square scatter plot of (N, 2) points (first two coords used)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))[:, :2]
    margin = 24
    lo, hi = float(pts.min()), float(pts.max())
    to_px = _mapper(lo, hi, size, margin)
    if labels is None:
        labels = np.zeros(pts.shape[0], dtype=int)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white" stroke="#999"/>',
    ]
    if title:
        parts.append(f'<text x="{margin}" y="16" font-size="12" fill="#333">{title}</text>')
    for p, lab in zip(pts, labels):
        color = _PALETTE[int(lab) % len(_PALETTE)]
        cx, cy = to_px(p[0]), size - to_px(p[1])
        parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="1.6" fill="{color}" fill-opacity="0.7"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def line(
    series: dict[str, tuple[np.ndarray, np.ndarray]],
    path: str | Path,
    size: int = 480,
    title: str = "",
    log_y: bool = False,
) -> None:
    """Write one or more (x, y) polylines with a shared frame."""
    margin = 24
    all_x = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()])
    all_y = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()])
    if log_y:
        all_y = np.log10(np.maximum(all_y, 1e-300))
    x_px = _mapper(float(all_x.min()), float(all_x.max()), size, margin)
    y_px = _mapper(float(all_y.min()), float(all_y.max()), size, margin)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white" stroke="#999"/>',
    ]
    if title:
        parts.append(f'<text x="{margin}" y="16" font-size="12" fill="#333">{title}</text>')
    for i, (name, (xs, ys)) in enumerate(series.items()):
        ys = np.asarray(ys, dtype=float)
        if log_y:
            ys = np.log10(np.maximum(ys, 1e-300))
        coords = " ".join(f"{x_px(x):.2f},{size - y_px(y):.2f}" for x, y in zip(np.asarray(xs), ys))
        color = _PALETTE[i % len(_PALETTE)]
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.2"/>')
        parts.append(
            f'<text x="{size - 150}" y="{20 + 14 * i}" font-size="11" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
