"""Distance-bounded route planning that maximises (or minimises) the number of
transitions attracted by the route.

Every vertex carries the transition endpoints that would take that stop as
one of their k nearest routes.  Since a route's reverse-kNN answer is the
union over its stops, a partial route only needs the union of the sets seen
so far.  The search expands partial routes in order of travel distance and
drops extensions that can no longer reach the target within budget
(shortest-distance lower bound) or that are dominated by a label already
recorded at the same vertex.
"""
from __future__ import annotations

import enum
import heapq
import io
import itertools
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .geometry import GeoPoint, dist
from .index import RrTree, TrTree
from .model import Endpoint, Route, Semantics, TransitionPointRef
from .query import rknnt_hits

INF = math.inf
# graphs above this many vertices keep no dense distance matrix
DENSE_LIMIT = 4000
# slack on budget comparisons made against lower bounds
_BUDGET_EPS = 1e-9


class PlanError(ValueError):
    pass


class Objective(enum.Enum):
    MAX = "max"
    MIN = "min"


class TransitGraph:
    """Undirected stop graph with optional precomputed per-vertex endpoint sets
    and all-pair shortest distances."""

    def __init__(self, points: Sequence[GeoPoint], names: Sequence[str] | None = None):
        self.points = list(points)
        self.names = list(names) if names is not None else [str(i) for i in range(len(self.points))]
        self.adj: list[dict[int, float]] = [{} for _ in self.points]
        self.k: int | None = None
        self.rknnt_sets: list[frozenset[TransitionPointRef]] | None = None
        self.m_psi: np.ndarray | None = None
        self._index = {name: i for i, name in enumerate(self.names)}

    def __len__(self):
        return len(self.points)

    @property
    def n_edges(self) -> int:
        return sum(len(a) for a in self.adj) // 2

    def vertex(self, key) -> int:
        """Resolve a vertex id or name."""
        if isinstance(key, (int, np.integer)) and 0 <= key < len(self.points):
            return int(key)
        if key in self._index:
            return self._index[key]
        raise PlanError(f"unknown vertex {key!r}")

    def add_edge(self, u: int, v: int, w: float) -> None:
        if u == v:
            return
        if not w > 0:
            raise PlanError(f"edge ({u},{v}) has non-positive weight {w}")
        if v in self.adj[u]:
            # parallel edge: keep the first one
            return
        self.adj[u][v] = w
        self.adj[v][u] = w

    def edges(self) -> list[tuple[int, int, float]]:
        return [(u, v, w) for u in range(len(self.adj)) for v, w in sorted(self.adj[u].items()) if u < v]

    @classmethod
    def from_edges(cls, names: Sequence[str], edges: Iterable[tuple], points: Sequence[GeoPoint] | None = None
                   ) -> "TransitGraph":
        if points is None:
            points = [GeoPoint(float(i), 0.0) for i in range(len(names))]
        g = cls(points, names)
        for a, b, w in edges:
            g.add_edge(g.vertex(a), g.vertex(b), float(w))
        return g

    def set_rknnt_sets(self, sets: Sequence[Iterable[TransitionPointRef]], k: int) -> None:
        if len(sets) != len(self.points):
            raise PlanError("one endpoint set per vertex required")
        self.rknnt_sets = [frozenset(s) for s in sets]
        self.k = k

    # ---- shortest distances -----------------------------------------------
    def distances_to(self, target: int) -> np.ndarray:
        if self.m_psi is not None:
            return self.m_psi[:, target]
        return dijkstra(self, target)

    def lower_bound(self, u: int, v: int, column: np.ndarray | None = None, col_target: int | None = None
                    ) -> float:
        if self.m_psi is not None:
            return float(self.m_psi[u, v])
        # triangle bound through the column we have
        if column is not None:
            if v == col_target:
                return float(column[u])
            if u == col_target:
                return float(column[v])
            return abs(float(column[u]) - float(column[v]))
        return 0.0


def build_graph(routes: Iterable[Route], name_of: Callable[[GeoPoint], str] | None = None) -> TransitGraph:
    """Stops become vertices (same location, same vertex); consecutive stops of
    a route become edges weighted by their planar distance."""
    routes = list(routes)
    pts = sorted({p for r in routes for p in r.points})
    g = TransitGraph(pts, [name_of(p) for p in pts] if name_of else None)
    vid = {p: i for i, p in enumerate(pts)}
    for r in sorted(routes, key=lambda r: r.id):
        for a, b in zip(r.points, r.points[1:]):
            if a != b:
                g.add_edge(vid[a], vid[b], dist(a, b))
    return g


def travel_distance(path: Sequence[int], graph: TransitGraph) -> float:
    td = 0.0
    for a, b in zip(path, path[1:]):
        w = graph.adj[a].get(b)
        if w is None:
            raise PlanError(f"vertices {a} and {b} are not adjacent")
        td += w
    return td


def floyd_warshall(graph: TransitGraph) -> np.ndarray:
    n = len(graph)
    m = np.full((n, n), INF)
    np.fill_diagonal(m, 0.0)
    for u, v, w in graph.edges():
        m[u, v] = m[v, u] = min(m[u, v], w)
    for k in range(n):
        np.minimum(m, m[:, k:k + 1] + m[k:k + 1, :], out=m)
    return m


def dijkstra(graph: TransitGraph, source: int) -> np.ndarray:
    out = np.full(len(graph), INF)
    out[source] = 0.0
    heap = [(0.0, source)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, w in graph.adj[u].items():
            nd = d + w
            if nd < out[v]:
                out[v] = nd
                heapq.heappush(heap, (nd, v))
    return out


def precompute(graph: TransitGraph, rr: RrTree, tr: TrTree, k: int, *, threads: int = 1,
               use_voronoi: bool = True) -> TransitGraph:
    """Attach per-vertex reverse-kNN endpoint sets and the shortest-distance matrix."""

    def one(v: int):
        return frozenset(rknnt_hits((graph.points[v],), k, rr, tr, use_voronoi=use_voronoi))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            sets = list(ex.map(one, range(len(graph))))
    else:
        sets = [one(v) for v in range(len(graph))]
    graph.set_rknnt_sets(sets, k)
    graph.m_psi = floyd_warshall(graph) if len(graph) <= DENSE_LIMIT else None
    return graph


def check_reachability(graph: TransitGraph, v: int, d: int, budget: float) -> bool:
    if graph.m_psi is None:
        return float(dijkstra(graph, d)[v]) <= budget
    return float(graph.m_psi[v, d]) <= budget


# ---- labels and dominance ---------------------------------------------------

def _masks(refs: Iterable[TransitionPointRef]) -> dict[int, int]:
    out: dict[int, int] = {}
    for r in refs:
        out[r.transition_id] = out.get(r.transition_id, 0) | (1 << int(r.kind))
    return out


def exists_count(masks: dict[int, int]) -> int:
    return len(masks)


def forall_count(masks: dict[int, int]) -> int:
    return sum(1 for m in masks.values() if m == 3)


@dataclass(eq=False)
class PartialRoute:
    vertices: tuple[int, ...]
    td: float
    omega: frozenset[TransitionPointRef]
    masks: dict[int, int] = field(repr=False, default_factory=dict)
    alive: bool = field(default=True, repr=False)

    @property
    def end(self) -> int:
        return self.vertices[-1]

    def count(self, semantics: Semantics) -> int:
        return exists_count(self.masks) if semantics is Semantics.EXISTS else forall_count(self.masks)

    def extend(self, v: int, w: float, refs: frozenset[TransitionPointRef], vmask: dict[int, int]
               ) -> "PartialRoute":
        masks = self.masks
        if vmask:
            masks = dict(masks)
            for tid, m in vmask.items():
                masks[tid] = masks.get(tid, 0) | m
        return PartialRoute(self.vertices + (v,), self.td + w, self.omega | refs, masks)


class Dominated:
    def __repr__(self):
        return "Dominated"


DOMINATED = Dominated()


@dataclass
class Admitted:
    evicted: list[PartialRoute]


class DominanceTable:
    """Per-vertex skyline of partial-route labels.

    ``rule="safe"`` (default) only lets label L dominate C when every
    completion of C can be replayed after L with no worse objective and no
    longer distance: L must be shorter (ties broken by vertex sequence), L's
    extra vertices must be unreachable for C's completions within budget,
    and L's endpoint set must cover C's in the sense the objective needs.

    ``rule="counts"`` compares only travel distance and the all-endpoint vs
    any-endpoint transition counts.  It prunes more but can discard the
    optimum; it is kept for experiments.
    """

    def __init__(self, graph: TransitGraph, target: int, tau: float, objective: Objective,
                 semantics: Semantics, rule: str = "safe", lower_bound: str = "matrix"):
        if rule not in ("safe", "counts"):
            raise ValueError(f"unknown dominance rule {rule!r}")
        self.graph, self.target, self.tau = graph, target, tau
        self.objective, self.semantics, self.rule = objective, semantics, rule
        self.lower_bound = lower_bound
        self.table: dict[int, list[PartialRoute]] = {}
        self._col = graph.distances_to(target) if lower_bound == "matrix" else None

    def lb(self, u: int, v: int) -> float:
        g = self.graph
        if self.lower_bound == "euclid":
            return dist(g.points[u], g.points[v])
        return g.lower_bound(u, v, self._col, self.target)

    def _unusable(self, v: int, u: int, budget: float) -> bool:
        return self.lb(v, u) + self.lb(u, self.target) > budget + _BUDGET_EPS

    def dominates(self, a: PartialRoute, b: PartialRoute) -> bool:
        if self.rule == "counts":
            if self.objective is Objective.MAX:
                return a.td < b.td and forall_count(a.masks) > exists_count(b.masks)
            return b.td < a.td and forall_count(b.masks) > exists_count(a.masks)
        if not (a.td < b.td or (a.td == b.td and a.vertices < b.vertices)):
            return False
        if self.objective is Objective.MAX:
            if not _covers(a.masks, b.masks, self.semantics):
                return False
        elif not _covers(b.masks, a.masks, self.semantics):
            return False
        v = a.end
        budget = self.tau - b.td
        bset = set(b.vertices)
        return all(self._unusable(v, u, budget) for u in a.vertices if u not in bset)

    def labels(self, v: int) -> list[PartialRoute]:
        return self.table.get(v, [])


def _covers(big: dict[int, int], small: dict[int, int], semantics: Semantics) -> bool:
    """Whether ``big ∪ X`` scores at least ``small ∪ X`` for every endpoint set X."""
    if semantics is Semantics.EXISTS:
        return all(tid in big for tid in small)
    for tid, m in small.items():
        bm = big.get(tid, 0)
        if bm != 3 and (m & ~bm):
            return False
    return True


def check_dominance(dt: DominanceTable, v: int, cand: PartialRoute):
    """Reject ``cand`` if a recorded label at ``v`` dominates it; otherwise record it
    and evict the labels it dominates."""
    labels = dt.table.setdefault(v, [])
    for lab in labels:
        if dt.dominates(lab, cand):
            return DOMINATED
    evicted = [lab for lab in labels if dt.dominates(cand, lab)]
    if evicted:
        gone = {id(x) for x in evicted}
        labels[:] = [lab for lab in labels if id(lab) not in gone]
        for lab in evicted:
            lab.alive = False
    labels.append(cand)
    return Admitted(evicted)


# ---- search -----------------------------------------------------------------

@dataclass(frozen=True)
class PlanResult:
    path: tuple[int, ...]
    omega: frozenset[TransitionPointRef]
    td: float
    semantics: Semantics

    @property
    def transitions(self) -> frozenset[int]:
        m = _masks(self.omega)
        if self.semantics is Semantics.EXISTS:
            return frozenset(m)
        return frozenset(t for t, x in m.items() if x == 3)

    @property
    def count(self) -> int:
        return len(self.transitions)


@dataclass
class PlanStats:
    pushed: int = 0
    popped: int = 0
    unreachable: int = 0
    dominated: int = 0
    evicted: int = 0
    bounded: int = 0
    enqueued_vertices: set[int] = field(default_factory=set)


def result_key(objective: Objective, count: int, td: float, path: tuple[int, ...]):
    """Ordering of complete routes: best objective, then shorter, then lexicographic."""
    return (-count if objective is Objective.MAX else count, td, path)


def _require_precomputed(graph: TransitGraph, k: int | None) -> None:
    if graph.rknnt_sets is None:
        raise PlanError("graph has no precomputed endpoint sets")
    if k is not None and graph.k != k:
        raise PlanError(f"graph was precomputed for k={graph.k}, requested k={k}")


def plan(graph: TransitGraph, o, d, tau: float, k: int | None = None,
         objective: Objective = Objective.MAX, semantics: Semantics = Semantics.EXISTS, *,
         dominance: bool = True, bounds: bool = True, lower_bound: str = "matrix",
         rule: str = "safe", stats: PlanStats | None = None) -> PlanResult | None:
    """Best simple o→d route with travel distance ≤ tau, or None if none exists."""
    _require_precomputed(graph, k)
    if not tau > 0:
        raise PlanError("tau must be positive")
    if lower_bound not in ("matrix", "euclid"):
        raise ValueError(f"unknown lower bound {lower_bound!r}")
    o, d = graph.vertex(o), graph.vertex(d)
    st = stats if stats is not None else PlanStats()
    sets = graph.rknnt_sets
    vmasks = [_masks(s) for s in sets]

    if lower_bound == "matrix":
        col = graph.distances_to(d)

        def reach(v: int, budget: float) -> bool:
            return float(col[v]) <= budget + _BUDGET_EPS
    else:
        target_pt = graph.points[d]

        def reach(v: int, budget: float) -> bool:
            return dist(graph.points[v], target_pt) <= budget + _BUDGET_EPS

    if not reach(o, tau):
        return None
    start = PartialRoute((o,), 0.0, sets[o], dict(vmasks[o]))
    dt = DominanceTable(graph, d, tau, objective, semantics, rule, lower_bound)
    if dominance:
        check_dominance(dt, o, start)
    seq = itertools.count()
    heap = [(0.0, start.vertices, next(seq), start)]
    st.pushed += 1
    st.enqueued_vertices.add(o)
    best: PartialRoute | None = None
    best_key = None

    def beaten(lab: PartialRoute) -> bool:
        # a partial route whose count already exceeds the incumbent cannot win a minimisation
        if best is None:
            return False
        c, bc = lab.count(semantics), best.count(semantics)
        return c > bc or (c == bc and lab.td > best.td)

    while heap:
        _, _, _, lab = heapq.heappop(heap)
        if not lab.alive:
            continue
        st.popped += 1
        if lab.end == d:
            key = result_key(objective, lab.count(semantics), lab.td, lab.vertices)
            if best_key is None or key < best_key:
                best, best_key = lab, key
            continue
        if objective is Objective.MIN and bounds and beaten(lab):
            st.bounded += 1
            continue
        on_path = set(lab.vertices)
        for vj, w in sorted(graph.adj[lab.end].items()):
            if vj in on_path:
                continue
            td = lab.td + w
            if td > tau or not reach(vj, tau - td):
                st.unreachable += 1
                continue
            cand = lab.extend(vj, w, sets[vj], vmasks[vj])
            if objective is Objective.MIN and bounds and beaten(cand):
                st.bounded += 1
                continue
            if dominance:
                res = check_dominance(dt, vj, cand)
                if res is DOMINATED:
                    st.dominated += 1
                    continue
                st.evicted += len(res.evicted)
            heapq.heappush(heap, (cand.td, cand.vertices, next(seq), cand))
            st.pushed += 1
            st.enqueued_vertices.add(vj)
    if best is None:
        return None
    return PlanResult(best.vertices, best.omega, best.td, semantics)


# ---- snapshot ---------------------------------------------------------------
#
#   magic[8] version:u16 k:u32 n:u32 m:u32 has_matrix:u8
#   vertices: x y:f64 name_len:u16 name:utf8
#   edges:    u v:u32 w:f64
#   sets:     per vertex count:u32 (transition_id:i64 kind:u8 x y:f64)*
#   matrix:   n*n f64 row-major (if present)

PRE_MAGIC = b"RKNNTPRE"
PRE_VERSION = 1


def dump_precomputed(graph: TransitGraph) -> bytes:
    _require_precomputed(graph, None)
    buf = io.BytesIO()
    edges = graph.edges()
    buf.write(struct.pack("<8sHIIIB", PRE_MAGIC, PRE_VERSION, graph.k, len(graph), len(edges),
                          int(graph.m_psi is not None)))
    for p, name in zip(graph.points, graph.names):
        raw = name.encode("utf-8")
        buf.write(struct.pack("<ddH", p.x, p.y, len(raw)))
        buf.write(raw)
    for u, v, w in edges:
        buf.write(struct.pack("<IId", u, v, w))
    for s in graph.rknnt_sets:
        refs = sorted(s)
        buf.write(struct.pack("<I", len(refs)))
        for r in refs:
            buf.write(struct.pack("<qBdd", r.transition_id, int(r.kind), r.location.x, r.location.y))
    if graph.m_psi is not None:
        buf.write(np.ascontiguousarray(graph.m_psi, dtype="<f8").tobytes())
    return buf.getvalue()


def load_precomputed(data: bytes) -> TransitGraph:
    off = 0

    def take(fmt):
        nonlocal off
        s = struct.Struct("<" + fmt)
        if off + s.size > len(data):
            raise PlanError("truncated precomputation snapshot")
        vals = s.unpack_from(data, off)
        off += s.size
        return vals

    magic, version, k, n, m, has_matrix = take("8sHIIIB")
    if magic != PRE_MAGIC:
        raise PlanError("not a precomputation snapshot")
    if version != PRE_VERSION:
        raise PlanError(f"unsupported precomputation version {version}")
    pts, names = [], []
    for _ in range(n):
        x, y, ln = take("ddH")
        pts.append(GeoPoint(x, y))
        names.append(data[off:off + ln].decode("utf-8"))
        off += ln
    g = TransitGraph(pts, names)
    for _ in range(m):
        u, v, w = take("IId")
        g.add_edge(u, v, w)
    sets = []
    for _ in range(n):
        (c,) = take("I")
        refs = []
        for _ in range(c):
            tid, kind, x, y = take("qBdd")
            refs.append(TransitionPointRef(tid, Endpoint(kind), GeoPoint(x, y)))
        sets.append(refs)
    g.set_rknnt_sets(sets, k)
    if has_matrix:
        size = 8 * n * n
        if off + size > len(data):
            raise PlanError("truncated distance matrix")
        g.m_psi = np.frombuffer(data, dtype="<f8", count=n * n, offset=off).reshape(n, n).copy()
        off += size
    if off != len(data):
        raise PlanError("trailing bytes in precomputation snapshot")
    return g
