"""Filter-refine evaluation of reverse k-nearest-neighbour queries over transitions.

A run has three stages:

1. :func:`filter_route` walks the RR-tree best-first from the query and
   keeps the route points that nothing already seen can prune (the filter
   set).  RR-tree subtrees that *can* be pruned are parked in the refine set.
2. :func:`prune_transition` walks the TR-tree with the filter set fixed and
   returns the transition points that survive.
3. :func:`refine_candidates` counts, per surviving point, the routes strictly
   closer than the query, using the filter set points plus the parked
   subtrees (opened lazily, closed wholesale through the node route lists).

A transition point qualifies iff fewer than ``k`` routes are strictly closer
to it than the query route.
"""
from __future__ import annotations

import bisect
import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import Entry, GeoPoint, Mbr, point_route_dist
from .index import BestFirst, Node, RrTree, TrTree
from .model import QueryRoute, RknntResult, Semantics, TransitionPointRef, assemble_result

# relative slack used when a refine-set node is accepted or discarded wholesale
_REL_EPS = 1e-12


@dataclass
class QueryStats:
    filter_ms: float = 0.0
    prune_ms: float = 0.0
    refine_ms: float = 0.0
    filter_points: int = 0
    refine_entries: int = 0
    candidates: int = 0

    @property
    def total_ms(self) -> float:
        return self.filter_ms + self.prune_ms + self.refine_ms

    def merge(self, other: "QueryStats") -> None:
        self.filter_ms += other.filter_ms
        self.prune_ms += other.prune_ms
        self.refine_ms += other.refine_ms
        self.filter_points += other.filter_points
        self.refine_entries += other.refine_entries
        self.candidates += other.candidates


class FilterSet:
    """Filtering points kept two ways: grouped per route, and as a point list
    ordered by decreasing crossover-set size."""

    def __init__(self):
        self.by_route: dict[int, list[GeoPoint]] = {}
        self.by_point: list[tuple[GeoPoint, frozenset[int]]] = []
        self._order: list[tuple[int, int]] = []
        self._seq = itertools.count()
        # insertion-ordered mirrors used by the vectorised predicates
        self._xy: list[tuple[float, float]] = []
        self._crs: list[frozenset[int]] = []
        self._route_idx: dict[int, list[int]] = {}
        self._arrays: _FilterArrays | None = None

    def add(self, p: GeoPoint, crossover: frozenset[int]) -> None:
        if not crossover:
            raise ValueError("filtering point without routes")
        key = (-len(crossover), next(self._seq))
        pos = bisect.bisect(self._order, key)
        self._order.insert(pos, key)
        self.by_point.insert(pos, (p, crossover))
        i = len(self._xy)
        self._xy.append((p.x, p.y))
        self._crs.append(crossover)
        for rid in crossover:
            self.by_route.setdefault(rid, []).append(p)
            self._route_idx.setdefault(rid, []).append(i)
        self._arrays = None

    def __len__(self):
        return len(self.by_point)

    @property
    def route_count(self) -> int:
        return len(self.by_route)

    def arrays(self) -> "_FilterArrays":
        if self._arrays is None:
            self._arrays = _FilterArrays(np.array(self._xy, dtype=float).reshape(-1, 2), self._crs,
                                         self._route_idx)
        return self._arrays


class _FilterArrays:
    def __init__(self, xy: np.ndarray, crs: list[frozenset[int]], route_idx: dict[int, list[int]]):
        self.xy = xy
        self.crs = crs
        self._route_idx = route_idx
        self._groups = None

    def groups(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(route ids, point indices grouped by route, group starts)."""
        if self._groups is None:
            rids = np.array(list(self._route_idx), dtype=np.int64)
            lens = [len(v) for v in self._route_idx.values()]
            order = np.fromiter(itertools.chain.from_iterable(self._route_idx.values()), dtype=np.int64)
            starts = np.zeros(len(lens), dtype=np.int64)
            if lens:
                np.cumsum(lens[:-1], out=starts[1:])
            self._groups = (rids, order, starts)
        return self._groups


def _dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise distances, shape (len(a), len(b)); same rounding as geometry.dist."""
    dx = a[:, 0, None] - b[None, :, 0]
    dy = a[:, 1, None] - b[None, :, 1]
    return np.sqrt(dx * dx + dy * dy)


def _entry_array(entry: Entry) -> np.ndarray:
    if isinstance(entry, Mbr):
        if entry.min == entry.max:
            return np.array([[entry.min.x, entry.min.y]])
        return np.array([[c.x, c.y] for c in entry.corners()])
    return np.array([[entry.x, entry.y]])


@dataclass
class RefineSet:
    # RR-tree nodes, and individual route points, skipped while filtering
    nodes: list = field(default_factory=list)

    def add(self, e) -> None:
        self.nodes.append(e)


@dataclass
class CandidateSet:
    points: list[TransitionPointRef] = field(default_factory=list)


def _query_points(q) -> tuple[GeoPoint, ...]:
    if isinstance(q, QueryRoute):
        return q.points
    if isinstance(q, GeoPoint):
        return (q,)
    pts = tuple(p if isinstance(p, GeoPoint) else GeoPoint(*p) for p in q)
    if not pts:
        raise ValueError("empty query")
    return pts


def _query_array(query: Sequence[GeoPoint]) -> np.ndarray:
    return np.array([(p.x, p.y) for p in query], dtype=float).reshape(-1, 2)


def _check_k(k: int) -> None:
    if not isinstance(k, int) or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")


def is_filtered(query: Sequence[GeoPoint], fs: FilterSet, entry: Entry, k: int,
                use_voronoi: bool = True) -> bool:
    """True when at least ``k`` distinct routes are strictly closer than the
    query to every point of ``entry``.

    Single filtering points are tried first; with ``use_voronoi`` the routes
    not yet counted are then tested as a whole.  Evaluated in bulk over the
    filter set, with the same outcome as testing each point or route with
    :func:`filtering_space_contains` and :func:`voronoi_filter`.
    """
    if fs.route_count < k:
        return False
    fa = fs.arrays()
    corners = _entry_array(entry)
    d_q = _dists(corners, _query_array(query))
    d_r = _dists(corners, fa.xy)
    inside = (d_r < d_q.min(axis=1)[:, None]).all(axis=0)
    closer: set[int] = set()
    for i in np.flatnonzero(inside):
        closer |= fa.crs[i]
        if len(closer) >= k:
            return True
    # for a point entry the per-route test adds nothing over the per-point one
    if not use_voronoi or len(corners) == 1:
        return False
    rids, order, starts = fa.groups()
    beats = (d_r[:, :, None] < d_q[:, None, :]).all(axis=0)
    per_route = np.logical_or.reduceat(beats[order], starts, axis=0).all(axis=1)
    closer.update(rids[per_route].tolist())
    return len(closer) >= k


def filter_route(rr: RrTree, query, k: int, *, mask: frozenset[int] = frozenset(),
                 use_voronoi: bool = True) -> tuple[FilterSet, RefineSet]:
    _check_k(k)
    q = _query_points(query)
    fs, refine = FilterSet(), RefineSet()
    bf = BestFirst(rr, q)
    for he in bf:
        e = he.target
        if isinstance(e, Node):
            if mask and not (e.routes - mask):
                continue
            if is_filtered(q, fs, e.mbr, k, use_voronoi):
                refine.add(e)
            else:
                bf.expand(e)
            continue
        crs = e.routes - mask if mask else e.routes
        if not crs:
            continue
        if is_filtered(q, fs, e.point, k, use_voronoi):
            refine.add(e)
        else:
            fs.add(e.point, crs)
    return fs, refine


def prune_transition(tr: TrTree, query, fs: FilterSet, k: int, *,
                     use_voronoi: bool = True) -> CandidateSet:
    _check_k(k)
    q = _query_points(query)
    out = CandidateSet()
    bf = BestFirst(tr, q)
    for he in bf:
        e = he.target
        if isinstance(e, Node):
            if not is_filtered(q, fs, e.mbr, k, use_voronoi):
                bf.expand(e)
        elif not is_filtered(q, fs, e.location, k, use_voronoi):
            out.points.append(e)
    return out


class _RefineView:
    """Array views of the refine set and of the subtrees under it, built
    lazily and reused for every candidate of one query."""

    def __init__(self, items: Sequence, mask: frozenset[int]):
        self.mask = mask
        self._children: dict[int, tuple] = {}
        self.top = self._group(items)

    def _routes(self, item) -> frozenset[int]:
        return item.routes - self.mask if self.mask else item.routes

    def _group(self, items: Sequence) -> tuple:
        items = [it for it in items if not (isinstance(it, Node) and it.mbr is None)]
        bounds = np.array([it.mbr.bounds if isinstance(it, Node)
                           else (it.point.x, it.point.y, it.point.x, it.point.y) for it in items],
                          dtype=float).reshape(-1, 4)
        is_point = np.array([not isinstance(it, Node) for it in items], dtype=bool)
        return bounds, is_point, [self._routes(it) for it in items], items

    def children(self, node: Node) -> tuple:
        g = self._children.get(id(node))
        if g is None:
            g = self._children[id(node)] = self._group(node.children)
        return g


def _count_closer(t: GeoPoint, d_q: float, fs: FilterSet, view: _RefineView, k: int) -> int:
    """Number of routes strictly closer to ``t`` than ``d_q``, stopping early at ``k``."""
    closer: set[int] = set()
    tp = np.array([[t.x, t.y]])
    if len(fs):
        fa = fs.arrays()
        for i in np.flatnonzero(_dists(tp, fa.xy)[0] < d_q):
            closer |= fa.crs[i]
            if len(closer) >= k:
                return len(closer)
    lo_cut = d_q * (1 + _REL_EPS)
    hi_cut = d_q * (1 - _REL_EPS)
    tx, ty = t.x, t.y
    stack = [view.top]
    while stack:
        bounds, is_point, routes, items = stack.pop()
        if not items:
            continue
        dx = np.maximum(np.maximum(bounds[:, 0] - tx, 0.0), tx - bounds[:, 2])
        dy = np.maximum(np.maximum(bounds[:, 1] - ty, 0.0), ty - bounds[:, 3])
        near = np.sqrt(dx * dx + dy * dy)
        fx = np.maximum(np.abs(tx - bounds[:, 0]), np.abs(tx - bounds[:, 2]))
        fy = np.maximum(np.abs(ty - bounds[:, 1]), np.abs(ty - bounds[:, 3]))
        far = np.sqrt(fx * fx + fy * fy)
        # single route points compare exactly; subtrees are taken whole when
        # entirely inside the query distance and dropped when entirely outside
        take = np.where(is_point, near < d_q, far < hi_cut)
        for i in np.flatnonzero(take):
            closer |= routes[i]
            if len(closer) >= k:
                return len(closer)
        for i in np.flatnonzero(~is_point & ~take & (near <= lo_cut)):
            if not routes[i] <= closer:
                stack.append(view.children(items[i]))
    return len(closer)


def refine_candidates(query, cands: CandidateSet, refine: RefineSet, fs: FilterSet, k: int, *,
                      mask: frozenset[int] = frozenset()) -> set[TransitionPointRef]:
    """Exact verification: keep a candidate iff fewer than ``k`` routes are
    strictly closer to it than the query."""
    _check_k(k)
    q = _query_points(query)
    view = _RefineView(refine.nodes, frozenset(mask))
    kept = set()
    for ref in cands.points:
        t = ref.location
        d_q = point_route_dist(t, q)
        if _count_closer(t, d_q, fs, view, k) < k:
            kept.add(ref)
    return kept


def rknnt_hits(query, k: int, rr: RrTree, tr: TrTree, *, use_voronoi: bool = True,
               mask: frozenset[int] = frozenset(), stats: QueryStats | None = None
               ) -> set[TransitionPointRef]:
    """Transition points that take the query among their k nearest routes."""
    _check_k(k)
    q = _query_points(query)
    mask = frozenset(mask)
    with ExitStack() as stack:
        stack.enter_context(rr.lock.read())
        stack.enter_context(tr.lock.read())
        t0 = time.perf_counter()
        fs, refine = filter_route(rr, q, k, mask=mask, use_voronoi=use_voronoi)
        t1 = time.perf_counter()
        cands = prune_transition(tr, q, fs, k, use_voronoi=use_voronoi)
        t2 = time.perf_counter()
        hits = refine_candidates(q, cands, refine, fs, k, mask=mask)
        t3 = time.perf_counter()
    if stats is not None:
        stats.merge(QueryStats((t1 - t0) * 1e3, (t2 - t1) * 1e3, (t3 - t2) * 1e3,
                               len(fs), len(refine.nodes), len(cands.points)))
    return hits


def rknnt(query, k: int, semantics: Semantics, rr: RrTree, tr: TrTree, *,
          use_voronoi: bool = True, mask: Iterable[int] = frozenset(),
          stats: QueryStats | None = None) -> RknntResult:
    hits = rknnt_hits(query, k, rr, tr, use_voronoi=use_voronoi, mask=frozenset(mask), stats=stats)
    return assemble_result(hits, semantics, k)


def rknnt_divide_conquer(query, k: int, semantics: Semantics, rr: RrTree, tr: TrTree, *,
                         use_voronoi: bool = True, mask: Iterable[int] = frozenset(),
                         threads: int = 1, stats: QueryStats | None = None) -> RknntResult:
    """Run one single-point query per query point and merge the endpoint hits."""
    _check_k(k)
    pts = list(dict.fromkeys(_query_points(query)))
    mask = frozenset(mask)

    def one(p):
        st = QueryStats()
        return rknnt_hits((p,), k, rr, tr, use_voronoi=use_voronoi, mask=mask, stats=st), st

    if threads > 1 and len(pts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(one, pts))
    else:
        parts = [one(p) for p in pts]
    hits: set[TransitionPointRef] = set()
    for h, st in parts:
        hits |= h
        if stats is not None:
            stats.merge(st)
    return assemble_result(hits, semantics, k)
