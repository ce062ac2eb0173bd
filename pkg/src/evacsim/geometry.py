"""Planar primitives: segments, polygons, ellipses.

All coordinates are metres in a fixed world frame. Predicates use closed
semantics: touching counts as intersecting, boundary points count as inside.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple

Point = Tuple[float, float]
Segment = Tuple[Point, Point]

EPS = 1e-12


def cross(ox: float, oy: float, ax: float, ay: float, bx: float, by: float) -> float:
    """Cross product of (a - o) x (b - o)."""
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def _on_segment(px: float, py: float, qx: float, qy: float, rx: float, ry: float) -> bool:
    # r is collinear with pq; check it lies within the bounding box
    return (
        min(px, qx) - EPS <= rx <= max(px, qx) + EPS
        and min(py, qy) - EPS <= ry <= max(py, qy) + EPS
    )


def segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    """Closed segment-segment intersection, including collinear overlap."""
    d1 = cross(q1[0], q1[1], q2[0], q2[1], p1[0], p1[1])
    d2 = cross(q1[0], q1[1], q2[0], q2[1], p2[0], p2[1])
    d3 = cross(p1[0], p1[1], p2[0], p2[1], q1[0], q1[1])
    d4 = cross(p1[0], p1[1], p2[0], p2[1], q2[0], q2[1])
    if ((d1 > EPS and d2 < -EPS) or (d1 < -EPS and d2 > EPS)) and (
        (d3 > EPS and d4 < -EPS) or (d3 < -EPS and d4 > EPS)
    ):
        return True
    if abs(d1) <= EPS and _on_segment(q1[0], q1[1], q2[0], q2[1], p1[0], p1[1]):
        return True
    if abs(d2) <= EPS and _on_segment(q1[0], q1[1], q2[0], q2[1], p2[0], p2[1]):
        return True
    if abs(d3) <= EPS and _on_segment(p1[0], p1[1], p2[0], p2[1], q1[0], q1[1]):
        return True
    if abs(d4) <= EPS and _on_segment(p1[0], p1[1], p2[0], p2[1], q2[0], q2[1]):
        return True
    return False


def nearest_point_on_segment(px: float, py: float, ax: float, ay: float, bx: float, by: float) -> Point:
    """Point of segment ab closest to p."""
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    if L2 <= EPS:
        return (ax, ay)
    t = ((px - ax) * dx + (py - ay) * dy) / L2
    t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
    return (ax + t * dx, ay + t * dy)


def dist_point_segment(px: float, py: float, ax: float, ay: float, bx: float, by: float) -> float:
    nx, ny = nearest_point_on_segment(px, py, ax, ay, bx, by)
    return math.hypot(px - nx, py - ny)


def segment_intersects_ellipse(
    p: Point,
    q: Point,
    cx: float,
    cy: float,
    a: float,
    b: float,
    theta: float,
) -> bool:
    """True if segment pq meets the closed elliptical region.

    The ellipse has semi-axis a along direction theta and semi-axis b across.
    Mapping the plane so the ellipse becomes the unit circle turns the test
    into a point-segment distance check.
    """
    ct, st = math.cos(theta), math.sin(theta)

    def to_unit(x: float, y: float) -> Point:
        rx, ry = x - cx, y - cy
        # rotate by -theta, then scale axes to 1
        ux = (rx * ct + ry * st) / a
        uy = (-rx * st + ry * ct) / b
        return (ux, uy)

    u = to_unit(p[0], p[1])
    v = to_unit(q[0], q[1])
    return dist_point_segment(0.0, 0.0, u[0], u[1], v[0], v[1]) <= 1.0 + EPS


def ellipse_area(a: float, b: float) -> float:
    return math.pi * a * b


def point_in_polygon(px: float, py: float, poly: Sequence[Point]) -> bool:
    """Even-odd rule; points on the boundary count as inside."""
    n = len(poly)
    inside = False
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        if abs(cross(ax, ay, bx, by, px, py)) <= 1e-9 and _on_segment(ax, ay, bx, by, px, py):
            return True
        if (ay > py) != (by > py):
            x_at = ax + (py - ay) * (bx - ax) / (by - ay)
            if px < x_at:
                inside = not inside
    return inside


def polygon_area(poly: Sequence[Point]) -> float:
    """Signed shoelace area (positive for counter-clockwise order)."""
    s = 0.0
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        s += ax * by - bx * ay
    return 0.5 * s


def room_of(px: float, py: float, polygons: Sequence[Sequence[Point]]) -> Optional[int]:
    """Index of the first polygon containing the point, None if outside all."""
    for i, poly in enumerate(polygons):
        if point_in_polygon(px, py, poly):
            return i
    return None


def shrink_segment(a: Point, b: Point, margin: float) -> Segment:
    """Pull both endpoints inward by margin; collapse to midpoint if too short."""
    dx, dy = b[0] - a[0], b[1] - a[1]
    L = math.hypot(dx, dy)
    if L <= 2.0 * margin:
        mx, my = 0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])
        return ((mx, my), (mx, my))
    ux, uy = dx / L, dy / L
    return (
        (a[0] + ux * margin, a[1] + uy * margin),
        (b[0] - ux * margin, b[1] - uy * margin),
    )


def subtract_spans(a: Point, b: Point, spans: Sequence[Tuple[float, float]]) -> list[Segment]:
    """Remove parametric intervals [t0, t1] from segment ab.

    Returns the remaining pieces in order. Used to cut door openings out of
    room boundary edges.
    """
    merged = sorted((max(0.0, s), min(1.0, e)) for s, e in spans if e > 0.0 and s < 1.0)
    pieces: list[Segment] = []
    dx, dy = b[0] - a[0], b[1] - a[1]

    def at(t: float) -> Point:
        return (a[0] + t * dx, a[1] + t * dy)

    t = 0.0
    for s, e in merged:
        if s > t + 1e-9:
            pieces.append((at(t), at(s)))
        t = max(t, e)
    if t < 1.0 - 1e-9:
        pieces.append((at(t), at(1.0)))
    return pieces
