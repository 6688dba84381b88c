from __future__ import annotations

import math

import pytest
from hypothesis import given, settings, strategies as st

from rknnt.geometry import (
    GeoPoint,
    GeometryError,
    HalfPlane,
    Mbr,
    dist,
    filtering_space_contains,
    half_plane_contains_mbr,
    half_plane_contains_point,
    max_dist_point_mbr,
    min_dist_point_mbr,
    min_dist_query_mbr,
    point_route_dist,
    voronoi_filter,
)
from rknnt.fixtures import sample_scene

P = GeoPoint
coord = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
points = st.builds(GeoPoint, coord, coord)


@st.composite
def boxes(draw):
    a, b = draw(points), draw(points)
    return Mbr.of_points([a, b])


def sample_in(box: Mbr, n=5):
    for i in range(n + 1):
        for j in range(n + 1):
            yield P(box.min.x + (box.max.x - box.min.x) * i / n, box.min.y + (box.max.y - box.min.y) * j / n)


def test_dist_basic():
    assert dist(P(0, 0), P(3, 4)) == 5.0
    assert dist(P(1, 1), P(1, 1)) == 0.0


def test_point_route_dist_takes_nearest_stop():
    assert point_route_dist(P(0, 0), [P(3, 4), P(0, 2), P(10, 0)]) == 2.0


def test_point_route_dist_empty_raises():
    with pytest.raises(GeometryError, match="empty geometry"):
        point_route_dist(P(0, 0), [])


def test_non_finite_point_rejected():
    with pytest.raises(GeometryError):
        P(math.nan, 0)
    with pytest.raises(GeometryError):
        P(0, math.inf)


def test_inverted_box_rejected():
    with pytest.raises(GeometryError):
        Mbr(P(1, 1), P(0, 0))


def test_degenerate_half_plane_rejected():
    with pytest.raises(GeometryError):
        HalfPlane(P(1, 1), P(1, 1))


def test_half_plane_excludes_bisector():
    h = HalfPlane(P(0, 0), P(2, 0))
    assert half_plane_contains_point(h, P(0.9, 5))
    assert not half_plane_contains_point(h, P(1.0, 5))
    assert half_plane_contains_mbr(h, Mbr.from_bounds(-1, -1, 0.5, 1))
    assert not half_plane_contains_mbr(h, Mbr.from_bounds(-1, -1, 1.0, 1))


def test_mbr_distances():
    box = Mbr.from_bounds(1, 1, 3, 2)
    assert min_dist_point_mbr(P(2, 1.5), box) == 0.0
    assert min_dist_point_mbr(P(0, 1), box) == 1.0
    assert max_dist_point_mbr(P(0, 0), box) == math.sqrt(13)
    assert min_dist_query_mbr([P(10, 10), P(4, 2)], box) == 1.0


def test_t6_box_is_filtered_by_a_single_stop():
    s = sample_scene()
    # the shared stop (2,4) is closer than every query point to the whole box
    assert filtering_space_contains(P(2, 4), s.query.points, s.t6_box)
    assert not filtering_space_contains(P(0, -4), s.query.points, s.t6_box)


def test_voronoi_box_needs_the_whole_route():
    s = sample_scene()
    r1 = s.routes[0].points
    assert not any(filtering_space_contains(p, s.query.points, s.voronoi_box) for p in r1)
    assert voronoi_filter(r1, s.query.points, s.voronoi_box)


def test_filtering_point_on_query_point_filters_nothing():
    assert not filtering_space_contains(P(0, 0), [P(0, 0), P(5, 5)], P(-1, -1))


@settings(max_examples=200)
@given(points, boxes())
def test_min_max_dist_bracket_box_points(q, box):
    lo, hi = min_dist_point_mbr(q, box), max_dist_point_mbr(q, box)
    for p in sample_in(box, 3):
        d = dist(q, p)
        assert lo <= d + 1e-9
        assert d <= hi + 1e-9


@settings(max_examples=200)
@given(points, st.lists(points, min_size=1, max_size=4), boxes())
def test_filtering_space_is_sound(r, query, box):
    if filtering_space_contains(r, query, box):
        for p in sample_in(box):
            assert all(dist(p, r) < dist(p, q) + 1e-9 for q in query)


@settings(max_examples=200)
@given(st.lists(points, min_size=1, max_size=5), st.lists(points, min_size=1, max_size=4), boxes())
def test_voronoi_filter_is_sound(route, query, box):
    if voronoi_filter(route, query, box):
        for p in sample_in(box):
            assert point_route_dist(p, route) < point_route_dist(p, query) + 1e-9


@settings(max_examples=200)
@given(st.lists(points, min_size=1, max_size=5), st.lists(points, min_size=1, max_size=4), points)
def test_voronoi_filter_on_points_is_exact(route, query, t):
    assert voronoi_filter(route, query, t) == (point_route_dist(t, route) < point_route_dist(t, query))


@settings(max_examples=200)
@given(st.lists(points, min_size=1, max_size=5), st.lists(points, min_size=1, max_size=4), boxes())
def test_voronoi_filter_dominates_single_points(route, query, box):
    if any(filtering_space_contains(r, query, box) for r in route):
        assert voronoi_filter(route, query, box)
