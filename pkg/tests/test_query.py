from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from instances import random_scene
from rknnt.fixtures import sample_scene
from rknnt.geometry import GeoPoint, Mbr, filtering_space_contains, voronoi_filter
from rknnt.index import build_rr_tree, build_tr_tree
from rknnt.model import Route, Semantics, Transition
from rknnt.oracle import rknnt_bruteforce
from rknnt.query import (
    FilterSet,
    QueryStats,
    filter_route,
    is_filtered,
    prune_transition,
    refine_candidates,
    rknnt,
    rknnt_divide_conquer,
)

P = GeoPoint
E, A = Semantics.EXISTS, Semantics.FORALL


@pytest.fixture(scope="module")
def scene():
    s = sample_scene()
    return s, build_rr_tree(s.routes), build_tr_tree(s.transitions)


# expected values frozen from the brute-force scan in rknnt.oracle
FROZEN = {
    (1, E): ([1, 3, 4], {"T1o", "T3o", "T4o", "T4d"}),
    (1, A): ([4], {"T1o", "T3o", "T4o", "T4d"}),
    (2, E): ([1, 2, 3, 4], {"T1o", "T1d", "T2o", "T2d", "T3o", "T3d", "T4o", "T4d"}),
    (2, A): ([1, 2, 3, 4], {"T1o", "T1d", "T2o", "T2d", "T3o", "T3d", "T4o", "T4d"}),
    (3, E): ([1, 2, 3, 4, 5, 6], None),
    (3, A): ([1, 2, 3, 4, 5, 6], None),
}


@pytest.mark.parametrize("k,sem", list(FROZEN))
@pytest.mark.parametrize("method", ["filter-refine", "voronoi", "divide-conquer"])
def test_sample_scene_frozen(scene, k, sem, method):
    s, rr, tr = scene
    if method == "divide-conquer":
        res = rknnt_divide_conquer(s.query, k, sem, rr, tr)
    else:
        res = rknnt(s.query, k, sem, rr, tr, use_voronoi=(method == "voronoi"))
    ids, hits = FROZEN[(k, sem)]
    assert res.sorted_ids() == ids
    if hits is not None:
        assert {str(h) for h in res.endpoint_hits} == hits


def test_filter_stage_on_sample(scene):
    s, rr, tr = scene
    fs, refine = filter_route(rr, s.query, 1)
    assert len(fs) >= 1
    assert fs.route_count >= 1
    # the filter set is ordered by crossover size: the shared stop leads
    sizes = [len(c) for _, c in fs.by_point]
    assert sizes == sorted(sizes, reverse=True)
    cands = prune_transition(tr, s.query, fs, 1)
    kept = refine_candidates(s.query, cands, refine, fs, 1)
    assert {str(h) for h in kept} == {"T1o", "T3o", "T4o", "T4d"}
    # transition 6 sits next to the shared stop and never becomes a candidate
    assert 6 not in {c.transition_id for c in cands.points}


def test_k_at_least_route_count_returns_everything(scene):
    s, rr, tr = scene
    assert rknnt(s.query, 4, E, rr, tr).sorted_ids() == [1, 2, 3, 4, 5, 6]
    assert rknnt(s.query, 40, A, rr, tr).sorted_ids() == [1, 2, 3, 4, 5, 6]


def test_bad_k(scene):
    s, rr, tr = scene
    for k in (0, -1, 1.5):
        with pytest.raises(ValueError):
            rknnt(s.query, k, E, rr, tr)


def test_masked_route_does_not_compete(scene):
    s, rr, tr = scene
    live = [r for r in s.routes if r.id != 1]
    got = rknnt(s.query, 1, E, rr, tr, mask={1})
    assert got == rknnt_bruteforce(s.query, 1, E, live, s.transitions)
    # using route 1 as the query with itself masked
    q = s.routes[0].points
    for sem in Semantics:
        assert rknnt(q, 1, sem, rr, tr, mask={1}) == rknnt_bruteforce(q, 1, sem, live, s.transitions)
        assert rknnt_divide_conquer(q, 1, sem, rr, tr, mask={1}, threads=3) == \
            rknnt_bruteforce(q, 1, sem, live, s.transitions)


def test_stats_are_recorded(scene):
    s, rr, tr = scene
    st_ = QueryStats()
    rknnt(s.query, 1, E, rr, tr, stats=st_)
    assert st_.filter_ms >= 0 and st_.prune_ms >= 0 and st_.refine_ms >= 0
    assert st_.total_ms == pytest.approx(st_.filter_ms + st_.prune_ms + st_.refine_ms)
    assert st_.candidates >= 4


def test_divide_conquer_threads_agree():
    rng = random.Random(42)
    routes, ts, q = random_scene(rng, max_routes=40, max_transitions=400)
    rr, tr = build_rr_tree(routes), build_tr_tree(ts)
    one = rknnt_divide_conquer(q, 3, E, rr, tr, threads=1)
    many = rknnt_divide_conquer(q, 3, E, rr, tr, threads=4)
    assert one == many == rknnt_bruteforce(q, 3, E, routes, ts)


def test_coincident_query_and_route_point():
    # a transition sitting exactly on a shared query/route stop: the query wins the tie
    routes = [Route(0, (P(0, 0), P(5, 0))), Route(1, (P(0, 0), P(0, 5)))]
    ts = [Transition(0, P(0, 0), P(0, 5)), Transition(1, P(2.5, 0), P(10, 10))]
    rr, tr = build_rr_tree(routes), build_tr_tree(ts)
    q = [P(0, 0)]
    for k in (1, 2):
        for sem in Semantics:
            assert rknnt(q, k, sem, rr, tr) == rknnt_bruteforce(q, k, sem, routes, ts)
    assert 0 in rknnt(q, 1, E, rr, tr).transitions


def _scalar_is_filtered(query, fs, entry, k, use_voronoi):
    closer = set()
    for p, crs in fs.by_point:
        if filtering_space_contains(p, query, entry):
            closer |= crs
    if use_voronoi:
        closer |= {rid for rid, pts in fs.by_route.items() if voronoi_filter(pts, query, entry)}
    return len(closer) >= k


grid = st.integers(0, 8).map(float)
gpoints = st.builds(GeoPoint, grid, grid)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(gpoints, st.frozensets(st.integers(0, 5), min_size=1, max_size=2)),
                min_size=1, max_size=12, unique_by=lambda t: t[0]),
       st.lists(gpoints, min_size=1, max_size=4), gpoints, gpoints, st.integers(1, 4), st.booleans())
def test_bulk_filter_matches_scalar_predicates(fpts, query, a, b, k, use_voronoi):
    fs = FilterSet()
    for p, crs in fpts:
        fs.add(p, crs)
    for entry in (a, Mbr.of_points([a, b])):
        assert is_filtered(query, fs, entry, k, use_voronoi) == _scalar_is_filtered(query, fs, entry, k, use_voronoi)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2, 5, 10]))
def test_random_scenes_match_oracle(seed, k):
    rng = random.Random(seed)
    routes, ts, q = random_scene(rng, max_routes=20, max_transitions=120, max_q=5)
    rr, tr = build_rr_tree(routes), build_tr_tree(ts)
    for sem in Semantics:
        ref = rknnt_bruteforce(q, k, sem, routes, ts)
        assert rknnt(q, k, sem, rr, tr, use_voronoi=False) == ref
        assert rknnt(q, k, sem, rr, tr) == ref
        assert rknnt_divide_conquer(q, k, sem, rr, tr) == ref
