"""Minimal deterministic SVG emitters for decay curves and error-vs-N sweeps.

Hand-rolled rather than pulled from a plotting library so that rerunning an
experiment with the same config and seed reproduces every output file byte for
byte (no timestamps, no generated ids).
"""

from __future__ import annotations

import math
from typing import IO, Sequence

__all__ = ["decay_plot_svg", "sweep_plot_svg"]

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 30, 50


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _log_points(xs, ys, x_log=False):
    pts = []
    for x, y in zip(xs, ys):
        if y is None or not math.isfinite(y) or y <= 0:
            continue
        pts.append((math.log10(x) if x_log and x > 0 else float(x), math.log10(y)))
    return pts


def _scale(pts_list):
    allx = [p[0] for pts in pts_list for p in pts]
    ally = [p[1] for pts in pts_list for p in pts]
    if not allx:
        return None
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def to_px(p):
        fx = (p[0] - x0) / (x1 - x0)
        fy = (p[1] - y0) / (y1 - y0)
        return (_ML + fx * (_W - _ML - _MR), _H - _MB - fy * (_H - _MT - _MB))

    return to_px, (x0, x1, y0, y1)


def _polyline(fileobj: IO[str], pts, to_px, color: str, dash: str = "") -> None:
    if not pts:
        return
    coords = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in map(to_px, pts))
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    fileobj.write(
        f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash_attr} '
        f'points="{coords}"/>\n'
    )
    for px, py in map(to_px, pts):
        fileobj.write(f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="2.5" fill="{color}"/>\n')


def _frame(fileobj: IO[str], title: str, xlabel: str, ylabel: str, bounds=None) -> None:
    fileobj.write(
        f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" height="{_H - _MT - _MB}" '
        'fill="none" stroke="black" stroke-width="1"/>\n'
    )
    fileobj.write(
        f'<text x="{_W // 2}" y="18" text-anchor="middle" font-size="14">{title}</text>\n'
    )
    fileobj.write(
        f'<text x="{_W // 2}" y="{_H - 12}" text-anchor="middle" font-size="12">{xlabel}</text>\n'
    )
    fileobj.write(
        f'<text x="16" y="{_H // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {_H // 2})">{ylabel}</text>\n'
    )
    if bounds is not None:
        x0, x1, y0, y1 = bounds
        fileobj.write(
            f'<text x="{_ML}" y="{_H - _MB + 16}" font-size="10">{x0:.3g}</text>\n'
            f'<text x="{_W - _MR}" y="{_H - _MB + 16}" text-anchor="end" font-size="10">{x1:.3g}</text>\n'
            f'<text x="{_ML - 4}" y="{_H - _MB}" text-anchor="end" font-size="10">1e{y0:.2f}</text>\n'
            f'<text x="{_ML - 4}" y="{_MT + 10}" text-anchor="end" font-size="10">1e{y1:.2f}</text>\n'
        )


def decay_plot_svg(fileobj: IO[str], title: str, xlabel: str,
                   abscissa: Sequence[float], values: Sequence[float],
                   envelope: Sequence[float] | None = None,
                   fitted_rate: float | None = None,
                   fitted_prefactor: float | None = None) -> None:
    """Log-scale decay plot with optional envelope overlay and fitted line."""
    fileobj.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">\n'
    )
    data = _log_points(abscissa, values)
    series = [data]
    env_pts = _log_points(abscissa, envelope) if envelope is not None else []
    if env_pts:
        series.append(env_pts)
    scaled = _scale(series)
    if scaled is None:
        fileobj.write(
            f'<text x="{_W // 2}" y="{_H // 2}" text-anchor="middle" font-size="16">'
            "no data above floor</text>\n</svg>\n"
        )
        return
    to_px, bounds = scaled
    _frame(fileobj, title, xlabel, "value (log10)", bounds)
    if env_pts:
        _polyline(fileobj, env_pts, to_px, "#888888", dash="6,4")
        fileobj.write(
            f'<text x="{_W - _MR - 4}" y="{_MT + 16}" text-anchor="end" font-size="11" '
            'fill="#888888">envelope</text>\n'
        )
    if fitted_rate is not None and fitted_prefactor and fitted_prefactor > 0:
        line = [
            (a, fitted_prefactor * math.exp(-fitted_rate * a))
            for a in (min(abscissa), max(abscissa))
        ]
        _polyline(fileobj, _log_points(*zip(*[(a, v) for a, v in line])), to_px,
                  "#cc3333", dash="2,3")
        fileobj.write(
            f'<text x="{_W - _MR - 4}" y="{_MT + 32}" text-anchor="end" font-size="11" '
            f'fill="#cc3333">fit rate {fitted_rate:.4g}</text>\n'
        )
    _polyline(fileobj, data, to_px, "#2255aa")
    fileobj.write("</svg>\n")


def sweep_plot_svg(fileobj: IO[str], title: str,
                   n_values: Sequence[int], errors: Sequence[float],
                   planned_n: float | None = None) -> None:
    """Log-log error-vs-N plot with a planned-N marker."""
    fileobj.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">\n'
    )
    data = _log_points(n_values, errors, x_log=True)
    scaled = _scale([data])
    if scaled is None:
        fileobj.write(
            f'<text x="{_W // 2}" y="{_H // 2}" text-anchor="middle" font-size="16">'
            "no data above floor</text>\n</svg>\n"
        )
        return
    to_px, bounds = scaled
    _frame(fileobj, title, "training samples N (log10)", "median error (log10)", bounds)
    if planned_n is not None and planned_n > 0:
        lx = math.log10(planned_n)
        if bounds[0] <= lx <= bounds[1]:
            px, _ = to_px((lx, bounds[2]))
            fileobj.write(
                f'<line x1="{_fmt(px)}" y1="{_MT}" x2="{_fmt(px)}" y2="{_H - _MB}" '
                'stroke="#33aa33" stroke-dasharray="4,4" stroke-width="1.5"/>\n'
                f'<text x="{_fmt(px + 4)}" y="{_MT + 14}" font-size="11" '
                'fill="#33aa33">planned N</text>\n'
            )
    _polyline(fileobj, data, to_px, "#2255aa")
    fileobj.write("</svg>\n")
