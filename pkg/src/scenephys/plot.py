"""Top-down SVG rendering of a scene and its report.

Coordinates are floor-plane ``(x, z)``; SVG y grows downward, so ``z`` maps
to SVG y directly (the view looks down the -Y axis). All numbers are
printed with three decimals so the bytes depend only on the inputs.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .evaluator import PhysicsReport
from .geometry import footprint
from .navigation import ReachResult
from .scene import Scene

# Worst violation first; an object takes the color of the first constraint it violates.
SEVERITY_ORDER = ("collision", "ground", "support", "static", "dynamic", "anchor", "orient", "scale")
COLORS = {
    "collision": "#d62728",
    "ground": "#ff7f0e",
    "support": "#ffbb78",
    "static": "#9467bd",
    "dynamic": "#c5b0d5",
    "anchor": "#8c564b",
    "orient": "#e377c2",
    "scale": "#bcbd22",
    None: "#2ca02c",
}
PIXELS_PER_METER = 100.0
MARGIN = 0.25


def _f(v: float) -> str:
    s = f"{v:.3f}"
    return "0.000" if s == "-0.000" else s


def worst_violation(report: PhysicsReport | None, object_id: str) -> str | None:
    if report is None:
        return None
    for c in SEVERITY_ORDER:
        if report.violated(object_id, c):
            return c
    return None


def render_svg(scene: Scene, report: PhysicsReport | None = None, reach: ReachResult | None = None,
               show_occupancy: bool = False) -> str:
    bounds = np.asarray(scene.room.bounds, dtype=float)
    lo = bounds.min(axis=0) - MARGIN
    hi = bounds.max(axis=0) + MARGIN
    size = (hi - lo) * PIXELS_PER_METER

    def xy(p) -> tuple[str, str]:
        q = (np.asarray(p, dtype=float) - lo) * PIXELS_PER_METER
        return _f(q[0]), _f(q[1])

    def pt(p) -> str:
        return ",".join(xy(p))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(size[0])}" height="{_f(size[1])}" '
        f'viewBox="0.000 0.000 {_f(size[0])} {_f(size[1])}">',
        f'<rect x="0.000" y="0.000" width="{_f(size[0])}" height="{_f(size[1])}" fill="#ffffff"/>',
        f'<polygon points="{" ".join(pt(p) for p in bounds)}" fill="#f4f4f4" stroke="#999999" stroke-width="1.000"/>',
    ]
    if show_occupancy and reach is not None:
        omap = reach.occupancy
        c = omap.cell_size * PIXELS_PER_METER
        out.append('<g fill="#000000" fill-opacity="0.150">')
        for i, j in zip(*np.nonzero(omap.cells)):
            x0 = omap.origin[0] + i * omap.cell_size
            z0 = omap.origin[1] + j * omap.cell_size
            x, y = xy((x0, z0))
            out.append(f'<rect x="{x}" y="{y}" width="{_f(c)}" height="{_f(c)}"/>')
        out.append("</g>")
    for wall in scene.room.walls:
        a, b = xy(wall.a), xy(wall.b)
        out.append(f'<line x1="{a[0]}" y1="{a[1]}" x2="{b[0]}" y2="{b[1]}" stroke="#333333" stroke-width="4.000"/>')
    for obj in sorted(scene.objects, key=lambda o: o.id):
        kind = worst_violation(report, obj.id)
        poly = footprint(obj)
        out.append(f'<polygon points="{" ".join(pt(p) for p in poly)}" fill="{COLORS[kind]}" '
                   f'fill-opacity="0.700" stroke="#222222" stroke-width="1.000">'
                   f'<title>{escape(obj.id)}: {kind or "ok"}</title></polygon>')
        c = poly.mean(axis=0)
        x, y = xy(c)
        out.append(f'<text x="{x}" y="{y}" font-size="10.000" text-anchor="middle">{escape(obj.id)}</text>')
    if reach is not None:
        for pair in reach.pairs:
            if pair.reachable:
                continue
            a = xy(reach.occupancy.cell_center(pair.start))
            b = xy(reach.occupancy.cell_center(pair.goal))
            out.append(f'<line x1="{a[0]}" y1="{a[1]}" x2="{b[0]}" y2="{b[1]}" stroke="#1f77b4" '
                       'stroke-width="1.000" stroke-dasharray="4.000 2.000"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
