"""Brute-force reference implementations.

Nothing here touches the spatial indexes or the planner's pruning; these are
the straightforward scans the fast paths are checked against.  They are
exponential or quadratic and meant for small instances.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .geometry import GeoPoint, point_route_dist
from .model import Route, Semantics, Transition, TransitionPointRef, assemble_result, RknntResult
from .planner import Objective, PlanError, PlanResult, TransitGraph, result_key


@dataclass(frozen=True)
class RankedRouteList:
    entries: tuple[tuple[int, float], ...]

    def ids(self) -> list[int]:
        return [rid for rid, _ in self.entries]


def knn_point(t: GeoPoint, routes: Iterable[Route], k: int) -> RankedRouteList:
    routes = list(routes)
    if k > len(routes):
        raise ValueError(f"k={k} exceeds the {len(routes)} available routes")
    ranked = sorted(((r.id, point_route_dist(t, r.points)) for r in routes), key=lambda e: (e[1], e[0]))
    return RankedRouteList(tuple(ranked[:k]))


def closer_route_count(t: GeoPoint, query: Sequence[GeoPoint], routes: Iterable[Route]) -> int:
    d_q = point_route_dist(t, query)
    return sum(1 for r in routes if point_route_dist(t, r.points) < d_q)


def rknnt_bruteforce(query: Sequence[GeoPoint], k: int, semantics: Semantics,
                     routes: Iterable[Route], transitions: Iterable[Transition]) -> RknntResult:
    q = tuple(query.points if hasattr(query, "points") else query)
    routes = list(routes)
    hits = []
    for t in transitions:
        for ref in t.refs():
            if closer_route_count(ref.location, q, routes) < k:
                hits.append(ref)
    return assemble_result(hits, semantics, k)


# ---- planning ---------------------------------------------------------------

def _shortest_to(graph: TransitGraph, target: int) -> list[float]:
    dist = [math.inf] * len(graph)
    dist[target] = 0.0
    heap = [(0.0, target)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in graph.adj[u].items():
            if d + w < dist[v]:
                dist[v] = d + w
                heapq.heappush(heap, (d + w, v))
    return dist


def enumerate_routes(graph: TransitGraph, o, d, tau: float, *, prune: bool = True
                     ) -> list[tuple[tuple[int, ...], float]]:
    """All simple o→d paths with travel distance ≤ tau, as (vertices, td) pairs.

    With ``prune`` the depth-first search drops a branch as soon as its
    distance plus the remaining shortest distance to ``d`` exceeds tau.
    """
    o, d = graph.vertex(o), graph.vertex(d)
    if not tau > 0:
        raise PlanError("tau must be positive")
    lower = _shortest_to(graph, d) if prune else None
    out = []
    path = [o]
    on_path = {o}

    def dfs(u: int, td: float):
        if u == d:
            out.append((tuple(path), td))
            return
        for v, w in sorted(graph.adj[u].items()):
            if v in on_path:
                continue
            ntd = td + w
            if ntd > tau:
                continue
            if lower is not None and ntd + lower[v] > tau * (1 + 1e-12) + 1e-12:
                continue
            path.append(v)
            on_path.add(v)
            dfs(v, ntd)
            path.pop()
            on_path.discard(v)

    dfs(o, 0.0)
    return out


def route_omega(graph: TransitGraph, path: Sequence[int]) -> frozenset[TransitionPointRef]:
    acc: set[TransitionPointRef] = set()
    for v in path:
        acc |= graph.rknnt_sets[v]
    return frozenset(acc)


def maxrknnt_bruteforce(graph: TransitGraph, o, d, tau: float, k: int | None = None,
                        objective: Objective = Objective.MAX,
                        semantics: Semantics = Semantics.EXISTS) -> PlanResult | None:
    if graph.rknnt_sets is None:
        raise PlanError("graph has no precomputed endpoint sets")
    if k is not None and graph.k != k:
        raise PlanError(f"graph was precomputed for k={graph.k}, requested k={k}")
    best, best_key = None, None
    for path, td in enumerate_routes(graph, o, d, tau):
        res = PlanResult(path, route_omega(graph, path), td, semantics)
        key = result_key(objective, res.count, td, path)
        if best_key is None or key < best_key:
            best, best_key = res, key
    return best
