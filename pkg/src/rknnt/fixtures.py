"""Small hand-made datasets used by the tests, the README and ``rknnt demo``."""
from __future__ import annotations

from dataclasses import dataclass

from .geometry import GeoPoint, Mbr
from .model import Endpoint, QueryRoute, Route, Transition, TransitionPointRef
from .planner import TransitGraph, floyd_warshall

P = GeoPoint


@dataclass(frozen=True)
class SampleScene:
    routes: tuple[Route, ...]
    transitions: tuple[Transition, ...]
    query: QueryRoute
    # box around the two endpoints of transition 6
    t6_box: Mbr
    # box that no single stop of route 1 can prune but the whole route can
    voronoi_box: Mbr


def sample_scene() -> SampleScene:
    """Four routes, six transitions and a five-stop query along the x axis.

    Route 1 and route 4 share their stop at (2, 4).  With k=1 only
    transition 4 has both endpoints nearest to the query; transitions 1 and 3
    have one endpoint each.
    """
    r1 = Route(1, (P(0, 4), P(2, 4), P(4, 4), P(6, 4)))
    r2 = Route(2, (P(0, -4), P(4, -4), P(8, -4)))
    r3 = Route(3, (P(12, 0), P(12, 4)))
    r4 = Route(4, (P(2, 8), P(2, 4), P(-3, 4)))
    ts = (
        Transition(1, P(3, -0.5), P(4, -3.5)),
        Transition(2, P(11.5, 2), P(0, -3.5)),
        Transition(3, P(8.5, 0.3), P(12.3, 3)),
        Transition(4, P(1, 0.5), P(7, -0.5)),
        Transition(5, P(2, 3.5), P(1.5, 3.2)),
        Transition(6, P(1.8, 4.6), P(2.4, 5.0)),
    )
    query = QueryRoute((P(0, 0), P(2, 0), P(4, 0), P(6, 0), P(8, 0)))
    return SampleScene(
        routes=(r1, r2, r3, r4),
        transitions=ts,
        query=query,
        t6_box=Mbr.from_bounds(1.8, 4.6, 2.4, 5.0),
        voronoi_box=Mbr.from_bounds(0.0, 2.5, 6.0, 3.0),
    )


PLANNING_EDGES = (
    ("a", "b", 1.6), ("a", "c", 1.0), ("a", "d", 1.0),
    ("b", "e", 1.5), ("c", "e", 1.6), ("c", "f", 1.5),
    ("d", "f", 2.3), ("d", "g", 1.1),
    ("e", "h", 1.4), ("e", "j", 2.9),
    ("f", "h", 1.4), ("h", "j", 1.5), ("i", "j", 1.2),
)

PLANNING_SETS = {
    "a": ["T1o"], "b": ["T1d"], "c": ["T1d", "T3o", "T4o"], "d": ["T5o"],
    "e": ["T2o"], "f": ["T2o", "T3d", "T4d"], "g": ["T5o"], "h": ["T2d"],
    "i": ["T6o"], "j": ["T6d"],
}


def parse_ref(tag: str) -> TransitionPointRef:
    """``"T3o"`` -> origin of transition 3 (location unknown, set to the origin)."""
    kind = Endpoint.ORIGIN if tag[-1] == "o" else Endpoint.DESTINATION
    return TransitionPointRef(int(tag[1:-1]), kind, P(0.0, 0.0))


def sample_planning_graph(k: int = 1) -> TransitGraph:
    """Ten-stop graph a..j with endpoint sets given directly instead of computed.

    ``a-c-f-h-j`` (td 5.4, five transitions) is the unique best route from a
    to j within 6; ``a-c-e-j`` reaches the same five transitions at 5.5.
    """
    names = list("abcdefghij")
    g = TransitGraph.from_edges(names, PLANNING_EDGES)
    g.set_rknnt_sets([[parse_ref(t) for t in PLANNING_SETS[n]] for n in names], k)
    g.m_psi = floyd_warshall(g)
    return g
