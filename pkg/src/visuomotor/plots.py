"""Self-contained SVG emission: trajectory plots, Gaussian heatmaps, arm poses.

Everything is plain string assembly so runs stay reproducible byte-for-byte
and the package needs no plotting runtime.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arm import ArmConfig, joint_positions

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#7f7f7f")


@dataclass
class Series:
    """One polyline for plot_trajectories."""

    points: np.ndarray
    name: str = ""
    color: str | None = None
    dashed: bool = False
    markers: np.ndarray | None = None     # bool per point, drawn as '+'
    marker_color: str = "#000000"


def _bounds(arrays: list[np.ndarray], margin: float = 0.08):
    if not arrays or all(len(a) == 0 for a in arrays):
        return 0.0, 1.0, 0.0, 1.0
    pts = np.vstack([a for a in arrays if len(a)])
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    dx = (x1 - x0) or 1.0
    dy = (y1 - y0) or 1.0
    return x0 - margin * dx, x1 + margin * dx, y0 - margin * dy, y1 + margin * dy


class _Canvas:
    """Maps scene coordinates into a fixed pixel viewport (y up)."""

    def __init__(self, bounds, size=480):
        self.x0, self.x1, self.y0, self.y1 = bounds
        self.w = size
        self.h = size

    def px(self, p) -> tuple[float, float]:
        u = (p[0] - self.x0) / (self.x1 - self.x0) * self.w
        v = self.h - (p[1] - self.y0) / (self.y1 - self.y0) * self.h
        return u, v

    def fmt(self, p) -> str:
        u, v = self.px(p)
        return f"{u:.2f},{v:.2f}"


def _svg(body: list[str], width: int, height: int) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">')
    return "\n".join([head, *body, "</svg>"]) + "\n"


def _maybe_write(svg: str, path) -> str:
    if path is not None:
        Path(path).write_text(svg)
    return svg


def plot_trajectories(series: list[Series], path=None, size: int = 480,
                      title: str = "") -> str:
    """Polyline plot with legend and optional '+' markers per point."""
    body = [f'<rect width="{size}" height="{size}" fill="#ffffff"/>']
    canvas = _Canvas(_bounds([s.points for s in series]), size)
    legend_y = 18
    if title:
        body.append(f'<text x="8" y="{legend_y}" font-size="13" '
                    f'font-family="sans-serif">{title}</text>')
        legend_y += 18
    for i, s in enumerate(series):
        color = s.color or PALETTE[i % len(PALETTE)]
        if len(s.points):
            coords = " ".join(canvas.fmt(p) for p in s.points)
            dash = ' stroke-dasharray="6,4"' if s.dashed else ""
            body.append(f'<polyline points="{coords}" fill="none" '
                        f'stroke="{color}" stroke-width="1.6"{dash}/>')
        if s.markers is not None:
            for p, on in zip(s.points, s.markers):
                if not on:
                    continue
                u, v = canvas.px(p)
                body.append(f'<path d="M {u - 4:.2f} {v:.2f} H {u + 4:.2f} '
                            f'M {u:.2f} {v - 4:.2f} V {v + 4:.2f}" '
                            f'stroke="{s.marker_color}" stroke-width="1.2"/>')
        if s.name:
            body.append(f'<line x1="{size - 150}" y1="{legend_y - 4}" '
                        f'x2="{size - 126}" y2="{legend_y - 4}" stroke="{color}" '
                        f'stroke-width="2"{" stroke-dasharray=\"6,4\"" if s.dashed else ""}/>')
            body.append(f'<text x="{size - 120}" y="{legend_y}" font-size="11" '
                        f'font-family="sans-serif">{s.name}</text>')
            legend_y += 16
    return _maybe_write(_svg(body, size, size), path)


def _colormap(v: float) -> str:
    """0 -> near-black blue, 0.5 -> magenta, 1 -> yellow."""
    stops = ((13, 8, 135), (204, 71, 120), (240, 249, 33))
    v = min(max(v, 0.0), 1.0)
    if v < 0.5:
        a, b, t = stops[0], stops[1], v / 0.5
    else:
        a, b, t = stops[1], stops[2], (v - 0.5) / 0.5
    rgb = tuple(round(x + (y - x) * t) for x, y in zip(a, b))
    return "#%02x%02x%02x" % rgb


def heatmap_field(trajectories: list[np.ndarray], sigma: float | None = None,
                  grid: int = 64):
    """Sum of per-point isotropic Gaussians sampled on a grid, max-normalized.

    Returns (field, extent). sigma defaults to 3% of the bounding-box
    diagonal. An empty input yields an all-zero field on the unit square.
    """
    pts_list = [np.asarray(t) for t in trajectories if len(t)]
    x0, x1, y0, y1 = _bounds(pts_list, margin=0.12)
    field = np.zeros((grid, grid))
    if pts_list:
        pts = np.vstack(pts_list)
        if sigma is None:
            diag = float(np.hypot(x1 - x0, y1 - y0))
            sigma = 0.03 * diag
        xs = np.linspace(x0, x1, grid)
        ys = np.linspace(y0, y1, grid)
        gx, gy = np.meshgrid(xs, ys)
        for px, py in pts:
            field += np.exp(-((gx - px) ** 2 + (gy - py) ** 2) / (2 * sigma ** 2))
        peak = field.max()
        if peak > 0:
            field /= peak
    return field, (x0, x1, y0, y1)


def plot_heatmap(trajectories: list[np.ndarray], sigma: float | None = None,
                 grid: int = 64, path=None, size: int = 480,
                 title: str = "") -> str:
    """Density rendering of predicted positions, one colored cell per grid node."""
    field, _ = heatmap_field(trajectories, sigma=sigma, grid=grid)
    cell = size / grid
    body = [f'<rect width="{size}" height="{size}" fill="{_colormap(0.0)}"/>']
    for i in range(grid):
        for j in range(grid):
            v = field[i, j]
            if v <= 0.003:
                continue
            x = j * cell
            y = size - (i + 1) * cell
            body.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{cell + 0.5:.2f}" '
                        f'height="{cell + 0.5:.2f}" fill="{_colormap(v)}"/>')
    if title:
        body.append(f'<text x="8" y="18" font-size="13" fill="#ffffff" '
                    f'font-family="sans-serif">{title}</text>')
    return _maybe_write(_svg(body, size, size), path)


def plot_arm(cfg: ArmConfig, poses: list[np.ndarray], trajectory=None,
             path=None, size: int = 480) -> str:
    """Arm link segments for a sequence of poses, optional end-effector path."""
    pose_pts = [joint_positions(cfg, th) for th in poses]
    arrays = list(pose_pts)
    if trajectory is not None and len(trajectory):
        arrays.append(np.asarray(trajectory))
    canvas = _Canvas(_bounds(arrays), size)
    body = [f'<rect width="{size}" height="{size}" fill="#ffffff"/>']
    n = max(len(pose_pts), 1)
    for k, pts in enumerate(pose_pts):
        shade = 0.25 + 0.75 * (k + 1) / n
        coords = " ".join(canvas.fmt(p) for p in pts)
        body.append(f'<polyline points="{coords}" fill="none" stroke="#333333" '
                    f'stroke-width="2.2" stroke-opacity="{shade:.2f}"/>')
        for p in pts:
            u, v = canvas.px(p)
            body.append(f'<circle cx="{u:.2f}" cy="{v:.2f}" r="2.5" '
                        f'fill="#333333" fill-opacity="{shade:.2f}"/>')
    if trajectory is not None and len(trajectory):
        coords = " ".join(canvas.fmt(p) for p in trajectory)
        body.append(f'<polyline points="{coords}" fill="none" '
                    f'stroke="#d62728" stroke-width="1.5"/>')
    return _maybe_write(_svg(body, size, size), path)
