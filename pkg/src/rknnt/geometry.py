"""Planar primitives: distances, half-plane membership and filtering-space tests.

All coordinates are planar kilometres. Membership tests are evaluated by
comparing distances, never through explicit bisector line coefficients,
and points lying exactly on a bisector are never counted as inside (the
query wins ties).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, order=True, slots=True)
class GeoPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite coordinate: ({self.x}, {self.y})")

    def __iter__(self):
        yield self.x
        yield self.y


@dataclass(frozen=True, slots=True)
class Mbr:
    min: GeoPoint
    max: GeoPoint

    def __post_init__(self):
        if self.min.x > self.max.x or self.min.y > self.max.y:
            raise GeometryError(f"inverted box: {self.min} .. {self.max}")

    @classmethod
    def of_points(cls, points: Iterable[GeoPoint]) -> "Mbr":
        pts = list(points)
        if not pts:
            raise GeometryError("empty geometry")
        return cls(
            GeoPoint(min(p.x for p in pts), min(p.y for p in pts)),
            GeoPoint(max(p.x for p in pts), max(p.y for p in pts)),
        )

    @classmethod
    def from_bounds(cls, minx: float, miny: float, maxx: float, maxy: float) -> "Mbr":
        return cls(GeoPoint(minx, miny), GeoPoint(maxx, maxy))

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (self.min.x, self.min.y, self.max.x, self.max.y)

    def corners(self) -> tuple[GeoPoint, GeoPoint, GeoPoint, GeoPoint]:
        lo, hi = self.min, self.max
        return (lo, GeoPoint(hi.x, lo.y), hi, GeoPoint(lo.x, hi.y))

    def contains_point(self, p: GeoPoint) -> bool:
        return self.min.x <= p.x <= self.max.x and self.min.y <= p.y <= self.max.y

    def contains_box(self, other: "Mbr") -> bool:
        return (self.min.x <= other.min.x and self.min.y <= other.min.y
                and other.max.x <= self.max.x and other.max.y <= self.max.y)


@dataclass(frozen=True)
class HalfPlane:
    """Open half-plane of points strictly closer to ``anchor`` than to ``opponent``."""

    anchor: GeoPoint
    opponent: GeoPoint

    def __post_init__(self):
        if self.anchor == self.opponent:
            raise GeometryError("degenerate half-plane: anchor equals opponent")


Entry = Union[GeoPoint, Mbr]


# Distances are computed as sqrt(dx*dx + dy*dy) rather than with hypot: the
# same expression evaluated elementwise in numpy gives bit-identical results,
# so vectorised and scalar code paths agree on exact ties.
def _norm(dx: float, dy: float) -> float:
    return math.sqrt(dx * dx + dy * dy)


def dist(a: GeoPoint, b: GeoPoint) -> float:
    return _norm(a.x - b.x, a.y - b.y)


def point_route_dist(t: GeoPoint, route: Sequence[GeoPoint]) -> float:
    """Distance from ``t`` to the nearest point of ``route``."""
    if not route:
        raise GeometryError("empty geometry")
    return min(_norm(t.x - r.x, t.y - r.y) for r in route)


def min_dist_point_mbr(q: GeoPoint, box: Mbr) -> float:
    dx = max(box.min.x - q.x, 0.0, q.x - box.max.x)
    dy = max(box.min.y - q.y, 0.0, q.y - box.max.y)
    return _norm(dx, dy)


def max_dist_point_mbr(q: GeoPoint, box: Mbr) -> float:
    # farthest corner
    dx = max(abs(q.x - box.min.x), abs(q.x - box.max.x))
    dy = max(abs(q.y - box.min.y), abs(q.y - box.max.y))
    return _norm(dx, dy)


def min_dist_query_mbr(query: Sequence[GeoPoint], box: Mbr) -> float:
    if not query:
        raise GeometryError("empty geometry")
    return min(min_dist_point_mbr(q, box) for q in query)


def half_plane_contains_point(h: HalfPlane, p: GeoPoint) -> bool:
    return dist(p, h.anchor) < dist(p, h.opponent)


def half_plane_contains_mbr(h: HalfPlane, box: Mbr) -> bool:
    # exact: the box is the convex hull of its corners and the half-plane is convex
    return all(half_plane_contains_point(h, c) for c in box.corners())


def _entry_points(entry: Entry) -> tuple[GeoPoint, ...]:
    if isinstance(entry, Mbr):
        if entry.min == entry.max:
            return (entry.min,)
        return entry.corners()
    return (entry,)


def _closer_all(r: GeoPoint, q: GeoPoint, pts: tuple[GeoPoint, ...]) -> bool:
    rx, ry, qx, qy = r.x, r.y, q.x, q.y
    for p in pts:
        if _norm(p.x - rx, p.y - ry) >= _norm(p.x - qx, p.y - qy):
            return False
    return True


def filtering_space_contains(r: GeoPoint, query: Sequence[GeoPoint], entry: Entry) -> bool:
    """True iff ``entry`` lies inside the half-plane H(r, q) for every query point.

    A filtering point coinciding with a query point yields an empty space.
    """
    if not query:
        raise GeometryError("empty geometry")
    pts = _entry_points(entry)
    for q in query:
        if q == r or not _closer_all(r, q, pts):
            return False
    return True


def voronoi_filter(route_pts: Sequence[GeoPoint], query: Sequence[GeoPoint], entry: Entry) -> bool:
    """Test ``entry`` against the union of the route's Voronoi cells in the
    diagram of route and query points.

    Points are tested exactly. A box is accepted when each query point is
    beaten on all four corners by a single route point; this never accepts a
    box that has an interior point at least as close to the query as to the
    route, but it may reject some boxes that do fit in the (non-convex)
    region.
    """
    if not route_pts or not query:
        raise GeometryError("empty geometry")
    if isinstance(entry, GeoPoint):
        return point_route_dist(entry, route_pts) < point_route_dist(entry, query)
    pts = _entry_points(entry)
    for q in query:
        if not any(r != q and _closer_all(r, q, pts) for r in route_pts):
            return False
    return True
