"""Plot data: per-angle CSV slices (canonical output) and dependency-free SVG heatmaps."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np


def fmt(x):
    """17 significant digits, enough to round-trip any float64."""
    return f"{float(x):.17g}"


def write_csv(path, header, columns):
    """Write equal-length ``columns`` under ``header`` to a path or open file."""
    if hasattr(path, "write"):
        _write_rows(path, header, columns)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(fh, header, columns)


def _write_rows(fh, header, columns):
    out = csv.writer(fh, lineterminator="\n")
    out.writerow(header)
    for row in zip(*columns):
        out.writerow([fmt(v) for v in row])


def angle_slices_csv(path, x_points, theta_points, values, x_name="X"):
    """One column per angle: ``X, w(X, theta_0), w(X, theta_1), ...``."""
    header = [x_name] + [f"theta={fmt(t)}" for t in theta_points]
    cols = [x_points] + [values[:, j] for j in range(values.shape[1])]
    write_csv(path, header, cols)


def _colour(v, vmin, vmax):
    """Sequential white-to-blue map; a diverging red/blue map once values go negative."""
    if vmin < 0:
        s = max(abs(vmin), abs(vmax)) or 1.0
        t = max(-1.0, min(1.0, v / s))
        if t >= 0:
            r = g = int(round(255 * (1 - t)))
            b = 255
        else:
            r = 255
            g = b = int(round(255 * (1 + t)))
        return f"#{r:02x}{g:02x}{b:02x}"
    span = (vmax - vmin) or 1.0
    t = (v - vmin) / span
    r = int(round(255 * (1 - 0.85 * t)))
    g = int(round(255 * (1 - 0.6 * t)))
    b = int(round(255 - 80 * t))
    return f"#{r:02x}{g:02x}{b:02x}"


def svg_heatmap(path, values, x_points, y_points, x_label="X", y_label="theta", title="",
                cell=4):
    """Heatmap with ``values[i, j]`` at column ``i`` (x) and row ``j`` (y, upward)."""
    values = np.asarray(values, dtype=float)
    nx, ny = values.shape
    left, top, bottom = 60, 30, 40
    width, height = nx * cell, ny * cell
    vmin, vmax = float(np.min(values)), float(np.max(values))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width + left + 20}" '
        f'height="{height + top + bottom}" font-family="sans-serif" font-size="11">',
        f'<text x="{left}" y="18">{title}</text>',
    ]
    for i in range(nx):
        for j in range(ny):
            y = top + (ny - 1 - j) * cell
            parts.append(f'<rect x="{left + i * cell}" y="{y}" width="{cell}" height="{cell}" '
                         f'fill="{_colour(values[i, j], vmin, vmax)}"/>')
    parts.append(f'<rect x="{left}" y="{top}" width="{width}" height="{height}" fill="none" stroke="black"/>')
    parts.append(f'<text x="{left}" y="{top + height + 15}">{fmt_short(x_points[0])}</text>')
    parts.append(f'<text x="{left + width}" y="{top + height + 15}" text-anchor="end">'
                 f'{fmt_short(x_points[-1])}</text>')
    parts.append(f'<text x="{left + width / 2}" y="{top + height + 30}" text-anchor="middle">{x_label}</text>')
    parts.append(f'<text x="{left - 5}" y="{top + height}" text-anchor="end">{fmt_short(y_points[0])}</text>')
    parts.append(f'<text x="{left - 5}" y="{top + 10}" text-anchor="end">{fmt_short(y_points[-1])}</text>')
    parts.append(f'<text x="12" y="{top + height / 2}" transform="rotate(-90 12 {top + height / 2})" '
                 f'text-anchor="middle">{y_label}</text>')
    parts.append(f'<text x="{left + width}" y="18" text-anchor="end">min {fmt_short(vmin)} '
                 f'max {fmt_short(vmax)}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def fmt_short(x):
    x = float(x)
    return "nan" if math.isnan(x) else f"{x:.4g}"
