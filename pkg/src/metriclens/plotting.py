"""Deterministic SVG line charts for history snapshot columns.

No plotting library: the SVG is assembled as text with fixed formatting so a
given history file always renders to identical bytes.
"""

import csv
from pathlib import Path

__all__ = ["history_svg", "plot_history"]

_W, _H = 720, 440
_ML, _MR, _MT, _MB = 60, 180, 30, 50
_PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def _read_series(csv_path):
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = [c for c in (reader.fieldnames or []) if c.startswith("r1_")]
        if not cols:
            raise ValueError(f"{csv_path}: no snapshot columns")
        series = {c: [] for c in cols}
        max_iter = 0
        for row in reader:
            it = int(row["iteration"])
            max_iter = max(max_iter, it)
            for c in cols:
                if row[c]:
                    series[c].append((it, float(row[c])))
    if all(not pts for pts in series.values()):
        raise ValueError(f"{csv_path}: snapshot columns are empty")
    return series, max_iter


def _x(it, max_iter):
    span = _W - _ML - _MR
    frac = it / max_iter if max_iter else 0.0
    return _ML + frac * span


def _y(value):
    span = _H - _MT - _MB
    return _MT + (1.0 - value) * span


def history_svg(csv_path) -> str:
    """Render one history CSV: x is the snapshot iteration, y is R@1 in
    [0, 1], one polyline per layer x split column."""
    series, max_iter = _read_series(csv_path)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = _y(tick)
        parts.append(
            f'<line x1="{_ML}" y1="{y:.2f}" x2="{_W - _MR}" y2="{y:.2f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_ML - 8}" y="{y + 4:.2f}" font-size="12" '
            f'text-anchor="end" fill="#444444">{tick:.2f}</text>'
        )
    parts.append(
        f'<text x="{(_ML + _W - _MR) / 2:.2f}" y="{_H - 14}" font-size="12" '
        f'text-anchor="middle" fill="#444444">iteration (max {max_iter})</text>'
    )
    for i, name in enumerate(sorted(series)):
        pts = series[name]
        if not pts:
            continue
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{_x(it, max_iter):.2f},{_y(v):.2f}" for it, v in pts)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        ly = _MT + 16 * i + 10
        parts.append(
            f'<text x="{_W - _MR + 10}" y="{ly}" font-size="12" '
            f'fill="{color}">{name[3:]}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_history(csv_path, out_path) -> Path:
    out = Path(out_path)
    out.write_text(history_svg(csv_path))
    return out
