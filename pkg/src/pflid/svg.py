"""Hand-written SVG for planar (T = 2) identification pictures.

Coordinates are printed with six decimals and the document has a fixed
header, so equal inputs give equal bytes. Power space is mapped into a
square plot area with the y axis pointing up.
"""
from __future__ import annotations

import numpy as np

from .polyhedra import polygon_area

WIDTH = 520
HEIGHT = 600
MARGIN = 40
PLOT = WIDTH - 2 * MARGIN

CONV_FILL = "#4c78a8"
PI_STROKE = "#e45756"
IDENT_FILL = "#54a24b"
POINT_FILL = "#222222"


def _num(v: float) -> str:
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


class _Frame:
    def __init__(self, clip):
        lo, hi = (np.asarray(c, dtype=float) for c in clip)
        self.lo = lo
        self.span = np.where(hi - lo > 0, hi - lo, 1.0)

    def xy(self, P) -> tuple[str, str]:
        u = (np.asarray(P, dtype=float) - self.lo) / self.span
        return _num(MARGIN + u[0] * PLOT), _num(MARGIN + (1.0 - u[1]) * PLOT)

    def points(self, V) -> str:
        return " ".join(",".join(self.xy(p)) for p in V)


def _polygon(frame, V, style) -> str:
    return f'<polygon points="{frame.points(V)}" style="{style}"/>'


def _shape(frame, V, fill: str, stroke: str, fill_opacity: str, dash: str = "") -> list:
    """Polygon, segment or dot depending on how many vertices ``V`` has."""
    V = np.asarray(V, dtype=float).reshape(-1, 2)
    if len(V) == 0:
        return []
    dash = f";stroke-dasharray:{dash}" if dash else ""
    if len(V) == 1:
        x, y = frame.xy(V[0])
        return [f'<circle cx="{x}" cy="{y}" r="3.000000" style="fill:{stroke}"/>']
    if len(V) == 2:
        return [f'<polyline points="{frame.points(V)}" '
                f'style="fill:none;stroke:{stroke};stroke-width:2{dash}"/>']
    return [_polygon(frame, V, f"fill:{fill};fill-opacity:{fill_opacity};"
                               f"stroke:{stroke};stroke-width:1.5{dash}")]


def render(clip, conv, pi_clipped=None, samples=(), ident=None, title: str = "") -> str:
    """SVG document for the hull ``conv``, clipped ``pi`` outline and fitted region.

    All polygons are vertex arrays in counter-clockwise order; ``samples``
    are the measured power points. The legend reports shoelace areas and
    marks the pi outline as clipped to the plot box.
    """
    frame = _Frame(clip)
    lo, hi = (np.asarray(c, dtype=float) for c in clip)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="monospace" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" style="fill:#ffffff"/>',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{PLOT}" height="{PLOT}" '
        'style="fill:none;stroke:#999999;stroke-width:1"/>',
    ]
    if title:
        out.append(f'<text x="{MARGIN}" y="{MARGIN - 14}">{_escape(title)}</text>')
    out.append('<g id="conv">')
    out += _shape(frame, conv, CONV_FILL, CONV_FILL, "0.35")
    out.append("</g>")
    if ident is not None:
        out.append('<g id="identified">')
        out += _shape(frame, ident, IDENT_FILL, IDENT_FILL, "0.25")
        out.append("</g>")
    if pi_clipped is not None:
        out.append('<g id="pi">')
        out += _shape(frame, pi_clipped, "none", PI_STROKE, "0", dash="6,3")
        out.append("</g>")
    out.append('<g id="samples">')
    for p in np.asarray(samples, dtype=float).reshape(-1, 2):
        x, y = frame.xy(p)
        out.append(f'<circle cx="{x}" cy="{y}" r="2.000000" style="fill:{POINT_FILL}"/>')
    out.append("</g>")

    # axis extents
    y_axis = MARGIN + PLOT + 16
    out.append(f'<text x="{MARGIN}" y="{y_axis}">P1 [{_num(lo[0])}, {_num(hi[0])}]'
               f'  P2 [{_num(lo[1])}, {_num(hi[1])}]</text>')
    legend = [(CONV_FILL, f"conv  area {_num(polygon_area(conv))}")]
    if pi_clipped is not None:
        legend.append((PI_STROKE, f"pi (clipped to box)  area {_num(polygon_area(pi_clipped))}"))
    if ident is not None:
        legend.append((IDENT_FILL, f"identified  area {_num(polygon_area(ident))}"))
    legend.append((POINT_FILL, f"samples  {len(np.asarray(samples).reshape(-1, 2))}"))
    y = y_axis + 20
    for colour, label in legend:
        out.append(f'<rect x="{MARGIN}" y="{y - 10}" width="12" height="12" style="fill:{colour}"/>')
        out.append(f'<text x="{MARGIN + 20}" y="{y}">{_escape(label)}</text>')
        y += 18
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
