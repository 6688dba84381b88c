from __future__ import annotations

import random

import pytest

from instances import random_network
from rknnt.fixtures import sample_planning_graph, sample_scene
from rknnt.geometry import GeoPoint
from rknnt.model import Semantics
from rknnt.oracle import closer_route_count, enumerate_routes, knn_point, maxrknnt_bruteforce
from rknnt.planner import Objective, PlanError


def test_knn_point_ranks_by_distance_then_id():
    s = sample_scene()
    # routes 1 and 4 share the stop nearest to T5's origin, so the tie goes to the lower id
    assert knn_point(GeoPoint(2, 3.5), s.routes, 2).ids() == [1, 4]
    assert knn_point(GeoPoint(4, -3.5), s.routes, 1).ids() == [2]
    with pytest.raises(ValueError):
        knn_point(GeoPoint(0, 0), s.routes, 5)


def test_closer_route_count_is_strict():
    s = sample_scene()
    # (2, 2) is exactly 2 away from the query and from the stop (2, 4)
    assert closer_route_count(GeoPoint(2, 2), s.query.points, s.routes) == 0
    assert closer_route_count(GeoPoint(2, 1.9), s.query.points, s.routes) == 0
    assert closer_route_count(GeoPoint(2, 2.1), s.query.points, s.routes) == 2
    assert closer_route_count(GeoPoint(2, 3.5), s.query.points, s.routes) == 2


def test_enumerate_routes_sample_graph():
    g = sample_planning_graph()
    paths = {"".join(g.names[v] for v in p): td for p, td in enumerate_routes(g, "a", "j", 6.0)}
    assert set(paths) == {"abehj", "abej", "acehj", "acej", "acfhj"}
    assert paths["acfhj"] == pytest.approx(5.4)
    assert paths["abej"] == pytest.approx(6.0)


def test_pruned_enumeration_matches_exhaustive():
    for seed in range(15):
        rng = random.Random(seed)
        g, *_ = random_network(rng, max_vertices=12, max_edges=20, max_transitions=20)
        o, d = 0, len(g) - 1
        tau = rng.uniform(2, 12)
        a = sorted(enumerate_routes(g, o, d, tau))
        b = sorted(enumerate_routes(g, o, d, tau, prune=False))
        assert a == b


def test_bruteforce_requires_matching_precomputation():
    g = sample_planning_graph(1)
    with pytest.raises(PlanError):
        maxrknnt_bruteforce(g, "a", "j", 6.0, k=2)
    with pytest.raises(PlanError):
        enumerate_routes(g, "a", "j", 0.0)


def test_bruteforce_sample_graph():
    g = sample_planning_graph()
    best = maxrknnt_bruteforce(g, "a", "j", 6.0, 1, Objective.MAX, Semantics.EXISTS)
    assert "".join(g.names[v] for v in best.path) == "acfhj"
    assert best.transitions == {1, 2, 3, 4, 6}
    assert maxrknnt_bruteforce(g, "a", "j", 2.0) is None
