"""Planar geometry helpers shared by the map, raster and simulator layers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

EPS = 1e-9


@dataclass(frozen=True)
class Point:
    """A location in the local metric frame of one floor."""

    x: float
    y: float
    level: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "level", int(self.level))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinate ({self.x}, {self.y})")

    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def dist(self, other: "Point") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def close_to(self, other: "Point", tol: float = EPS) -> bool:
        return (
            self.level == other.level
            and abs(self.x - other.x) <= tol
            and abs(self.y - other.y) <= tol
        )


def point_segment_distance(p, a, b) -> float:
    px, py = p
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        return math.hypot(px - ax, py - ay)
    u = ((px - ax) * dx + (py - ay) * dy) / seg2
    u = min(1.0, max(0.0, u))
    return math.hypot(px - (ax + u * dx), py - (ay + u * dy))


def segment_distance(a, b, c, d) -> float:
    """Minimum distance between segments ab and cd."""
    if segments_intersect(a, b, c, d):
        return 0.0
    return min(
        point_segment_distance(a, c, d),
        point_segment_distance(b, c, d),
        point_segment_distance(c, a, b),
        point_segment_distance(d, a, b),
    )


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p) -> bool:
    return (
        min(a[0], b[0]) - EPS <= p[0] <= max(a[0], b[0]) + EPS
        and min(a[1], b[1]) - EPS <= p[1] <= max(a[1], b[1]) + EPS
    )


def segments_intersect(a, b, c, d) -> bool:
    """Closed-segment intersection test (touching counts)."""
    o1 = _orient(a, b, c)
    o2 = _orient(a, b, d)
    o3 = _orient(c, d, a)
    o4 = _orient(c, d, b)
    if ((o1 > EPS and o2 < -EPS) or (o1 < -EPS and o2 > EPS)) and (
        (o3 > EPS and o4 < -EPS) or (o3 < -EPS and o4 > EPS)
    ):
        return True
    if abs(o1) <= EPS and _on_segment(a, b, c):
        return True
    if abs(o2) <= EPS and _on_segment(a, b, d):
        return True
    if abs(o3) <= EPS and _on_segment(c, d, a):
        return True
    if abs(o4) <= EPS and _on_segment(c, d, b):
        return True
    return False


def ring(vertices: Sequence) -> list[tuple[float, float]]:
    """Open vertex ring (closing duplicate dropped) as xy tuples."""
    pts = [v.xy() if isinstance(v, Point) else (float(v[0]), float(v[1])) for v in vertices]
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts = pts[:-1]
    return pts


def edges(vertices: Sequence):
    pts = ring(vertices)
    n = len(pts)
    for i in range(n):
        yield pts[i], pts[(i + 1) % n]


def signed_area(vertices: Sequence) -> float:
    pts = ring(vertices)
    s = 0.0
    for (x0, y0), (x1, y1) in edges(pts):
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def centroid(vertices: Sequence) -> tuple[float, float]:
    pts = ring(vertices)
    a = signed_area(pts)
    if abs(a) < EPS:
        n = len(pts)
        return (sum(p[0] for p in pts) / n, sum(p[1] for p in pts) / n)
    cx = cy = 0.0
    for (x0, y0), (x1, y1) in edges(pts):
        cross = x0 * y1 - x1 * y0
        cx += (x0 + x1) * cross
        cy += (y0 + y1) * cross
    return (cx / (6.0 * a), cy / (6.0 * a))


def boundary_distance(p, vertices: Sequence) -> float:
    return min(point_segment_distance(p, a, b) for a, b in edges(vertices))


def contains(vertices: Sequence, p, boundary_tol: float = EPS) -> bool:
    """Even-odd containment, boundary inclusive."""
    pts = ring(vertices)
    if boundary_distance(p, pts) <= boundary_tol:
        return True
    x, y = p
    inside = False
    for (x0, y0), (x1, y1) in edges(pts):
        if (y0 > y) != (y1 > y):
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            if x < xc:
                inside = not inside
    return inside


def self_intersections(vertices: Sequence) -> list[tuple[int, int]]:
    """Pairs of non-adjacent edge indices that touch or cross."""
    es = list(edges(vertices))
    n = len(es)
    hits = []
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if segments_intersect(es[i][0], es[i][1], es[j][0], es[j][1]):
                hits.append((i, j))
    return hits


def normalize_angle(theta: float) -> float:
    """Wrap to [0, 2pi)."""
    t = math.fmod(theta, 2.0 * math.pi)
    if t < 0.0:
        t += 2.0 * math.pi
    if t >= 2.0 * math.pi:
        t = 0.0
    return t


def wrap_pi(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    t = math.fmod(theta + math.pi, 2.0 * math.pi)
    if t <= 0.0:
        t += 2.0 * math.pi
    return t - math.pi


def bearing_to(x: float, y: float, heading: float, tx: float, ty: float) -> float:
    """Relative bearing of (tx, ty) seen from a pose, in (-pi, pi], left positive."""
    return wrap_pi(math.atan2(ty - y, tx - x) - heading)
