"""R-trees over route points (RR-tree) and transition points (TR-tree).

Both trees share one in-memory R-tree: sort-tile-recursive bulk loading,
Guttman quadratic split on insert, and leaf deletion with path tightening but
no re-insertion.  The RR-tree additionally keeps, per node, the set of route
ids found below it (``Node.routes``, the NList) and, per distinct stop
location, the routes sharing that stop (``RrTree.plist``).
"""
from __future__ import annotations

import heapq
import io
import itertools
import math
import struct
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Iterator, Sequence

from .geometry import GeoPoint, Mbr, min_dist_query_mbr, point_route_dist
from .model import Endpoint, Route, Transition, TransitionPointRef

MAX_ENTRIES = 32
MIN_FILL = 0.4

SNAPSHOT_MAGIC = b"RKNNTIDX"
SNAPSHOT_VERSION = 1
_KIND_RR = 1
_KIND_TR = 2


class SpatialIndexError(LookupError):
    """Raised for invalid index operations (empty build, duplicate or missing ids)."""


class SnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class RoutePoint:
    """Leaf entry of the RR-tree: one distinct stop location and the routes through it."""

    point: GeoPoint
    routes: frozenset[int]


class Node:
    __slots__ = ("leaf", "children", "mbr", "routes")

    def __init__(self, leaf: bool, children: list | None = None):
        self.leaf = leaf
        self.children: list = children if children is not None else []
        self.mbr: Mbr | None = None
        self.routes: frozenset[int] = frozenset()

    def __repr__(self):
        kind = "leaf" if self.leaf else "node"
        return f"<{kind} n={len(self.children)} mbr={self.mbr.bounds if self.mbr else None}>"


@dataclass(frozen=True)
class HeapEntry:
    target: Any
    key: float

    @property
    def is_node(self) -> bool:
        return isinstance(self.target, Node)


def _bounds_of(items: Sequence, point_of: Callable) -> tuple[float, float, float, float]:
    minx = miny = math.inf
    maxx = maxy = -math.inf
    for it in items:
        if isinstance(it, Node):
            b = it.mbr
            if b is None:
                continue
            lo, hi = b.min, b.max
            minx, miny = min(minx, lo.x), min(miny, lo.y)
            maxx, maxy = max(maxx, hi.x), max(maxy, hi.y)
        else:
            p = point_of(it)
            minx, miny = min(minx, p.x), min(miny, p.y)
            maxx, maxy = max(maxx, p.x), max(maxy, p.y)
    return minx, miny, maxx, maxy


def _area(b) -> float:
    return (b[2] - b[0]) * (b[3] - b[1])


def _union(a, b):
    return (min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))


def _even_chunks(items: list, size: int) -> list[list]:
    """Split into ceil(n/size) chunks whose lengths differ by at most one."""
    n = len(items)
    if n == 0:
        return []
    count = -(-n // size)
    base, extra = divmod(n, count)
    out, start = [], 0
    for i in range(count):
        stop = start + base + (1 if i < extra else 0)
        out.append(items[start:stop])
        start = stop
    return out


class RWLock:
    """Many readers or one writer."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False

    @contextmanager
    def read(self):
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if not self._readers:
                    self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            while self._writer or self._readers:
                self._cond.wait()
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


class RTree:
    """Point R-tree; subclasses define how to locate and identify leaf entries."""

    def __init__(self, max_entries: int = MAX_ENTRIES, min_fill: float = MIN_FILL):
        if max_entries < 4:
            raise ValueError("max_entries must be at least 4")
        self.max_entries = max_entries
        self.min_entries = max(2, math.ceil(min_fill * max_entries))
        self.root = Node(leaf=True)
        self.size = 0
        self.lock = RWLock()

    # subclass hooks
    @staticmethod
    def point_of(entry) -> GeoPoint:
        raise NotImplementedError

    @staticmethod
    def same_entry(a, b) -> bool:
        return a == b

    def _refresh(self, node: Node) -> None:
        if not node.children:
            node.mbr = None
            return
        node.mbr = Mbr.from_bounds(*_bounds_of(node.children, self.point_of))

    # ---- bulk loading -------------------------------------------------
    def bulk_load(self, entries: Iterable) -> None:
        entries = list(entries)
        self.size = len(entries)
        if not entries:
            self.root = Node(leaf=True)
            return
        pts = [(self.point_of(e), e) for e in entries]
        level = [Node(True, group) for group in self._str_pack(pts)]
        for n in level:
            self._refresh(n)
        while len(level) > 1:
            centers = [(GeoPoint((n.mbr.min.x + n.mbr.max.x) / 2, (n.mbr.min.y + n.mbr.max.y) / 2), n)
                       for n in level]
            level = [Node(False, group) for group in self._str_pack(centers)]
            for n in level:
                self._refresh(n)
        self.root = level[0]

    def _str_pack(self, keyed: list[tuple[GeoPoint, Any]]) -> list[list]:
        m = self.max_entries
        n_groups = -(-len(keyed) // m)
        n_slices = max(1, math.ceil(math.sqrt(n_groups)))
        keyed = sorted(keyed, key=lambda kv: (kv[0].x, kv[0].y))
        groups = []
        for vslice in _even_chunks(keyed, -(-len(keyed) // n_slices)):
            vslice.sort(key=lambda kv: (kv[0].y, kv[0].x))
            groups.extend(_even_chunks(vslice, m))
        return [[v for _, v in g] for g in groups]

    # ---- insertion ----------------------------------------------------
    def insert(self, entry) -> None:
        split = self._insert(self.root, entry, self.point_of(entry))
        if split is not None:
            old = self.root
            self.root = Node(False, [old, split])
            self._refresh(self.root)
        self.size += 1

    def _insert(self, node: Node, entry, p: GeoPoint) -> Node | None:
        if node.leaf:
            node.children.append(entry)
        else:
            child = self._choose_subtree(node, p)
            split = self._insert(child, entry, p)
            if split is not None:
                node.children.append(split)
        if len(node.children) > self.max_entries:
            other = self._quadratic_split(node)
            self._refresh(node)
            self._refresh(other)
            return other
        self._refresh(node)
        return None

    @staticmethod
    def _choose_subtree(node: Node, p: GeoPoint) -> Node:
        best, best_key = None, None
        pb = (p.x, p.y, p.x, p.y)
        for child in node.children:
            if child.mbr is None:
                key = (0.0, 0.0)
            else:
                b = child.mbr.bounds
                a = _area(b)
                key = (_area(_union(b, pb)) - a, a)
            if best_key is None or key < best_key:
                best, best_key = child, key
        return best

    def _item_bounds(self, item):
        if isinstance(item, Node):
            return item.mbr.bounds
        p = self.point_of(item)
        return (p.x, p.y, p.x, p.y)

    def _quadratic_split(self, node: Node) -> Node:
        items = node.children
        boxes = [self._item_bounds(it) for it in items]
        # seeds: the pair wasting the most area
        worst, seeds = -math.inf, (0, 1)
        for i, j in itertools.combinations(range(len(items)), 2):
            d = _area(_union(boxes[i], boxes[j])) - _area(boxes[i]) - _area(boxes[j])
            if d > worst:
                worst, seeds = d, (i, j)
        groups = ([seeds[0]], [seeds[1]])
        gbox = [boxes[seeds[0]], boxes[seeds[1]]]
        rest = [i for i in range(len(items)) if i not in seeds]
        m = self.min_entries
        while rest:
            for g in (0, 1):
                if len(groups[g]) + len(rest) == m:
                    groups[g].extend(rest)
                    rest = []
                    break
            if not rest:
                break
            best_i, best_diff, best_g = None, -1.0, 0
            for i in rest:
                d0 = _area(_union(gbox[0], boxes[i])) - _area(gbox[0])
                d1 = _area(_union(gbox[1], boxes[i])) - _area(gbox[1])
                if abs(d0 - d1) > best_diff:
                    best_i, best_diff = i, abs(d0 - d1)
                    if d0 != d1:
                        best_g = 0 if d0 < d1 else 1
                    else:
                        a0, a1 = _area(gbox[0]), _area(gbox[1])
                        best_g = 0 if (a0, len(groups[0])) <= (a1, len(groups[1])) else 1
            rest.remove(best_i)
            groups[best_g].append(best_i)
            gbox[best_g] = _union(gbox[best_g], boxes[best_i])
        node.children = [items[i] for i in groups[0]]
        return Node(node.leaf, [items[i] for i in groups[1]])

    # ---- deletion -----------------------------------------------------
    def delete(self, entry) -> bool:
        p = self.point_of(entry)
        found = self._delete(self.root, entry, p)
        if not found:
            return False
        if not self.root.leaf and not self.root.children:
            self.root = Node(leaf=True)
        self.size -= 1
        return True

    def _delete(self, node: Node, entry, p: GeoPoint) -> bool:
        if node.mbr is None or not node.mbr.contains_point(p):
            return False
        if node.leaf:
            for i, e in enumerate(node.children):
                if self.same_entry(e, entry):
                    del node.children[i]
                    self._refresh(node)
                    return True
            return False
        for i, child in enumerate(node.children):
            if self._delete(child, entry, p):
                if not child.children:
                    del node.children[i]
                self._refresh(node)
                return True
        return False

    # ---- inspection ---------------------------------------------------
    def nodes(self) -> Iterator[Node]:
        stack = [self.root]
        while stack:
            n = stack.pop()
            yield n
            if not n.leaf:
                stack.extend(reversed(n.children))

    def entries(self) -> Iterator:
        for n in self.nodes():
            if n.leaf:
                yield from n.children

    def height(self) -> int:
        h, n = 1, self.root
        while not n.leaf:
            n = n.children[0]
            h += 1
        return h

    def __len__(self):
        return self.size


class RrTree(RTree):
    def __init__(self, routes: Iterable[Route] = (), **kw):
        super().__init__(**kw)
        self.plist: dict[tuple[float, float], frozenset[int]] = {}
        routes = list(routes)
        if routes:
            self._build(routes)

    @staticmethod
    def point_of(entry: RoutePoint) -> GeoPoint:
        return entry.point

    def _build(self, routes: list[Route]) -> None:
        ids = [r.id for r in routes]
        if len(set(ids)) != len(ids):
            raise SpatialIndexError("duplicate route ids")
        members: dict[GeoPoint, set[int]] = {}
        for r in routes:
            for p in r.points:
                members.setdefault(p, set()).add(r.id)
        entries = [RoutePoint(p, frozenset(rs)) for p, rs in sorted(members.items())]
        self.plist = {(e.point.x, e.point.y): e.routes for e in entries}
        self.bulk_load(entries)
        self.compute_nlist()

    def compute_nlist(self) -> None:
        """Fill ``Node.routes`` bottom-up."""

        def visit(n: Node) -> frozenset[int]:
            if n.leaf:
                acc = set()
                for e in n.children:
                    acc |= e.routes
            else:
                acc = set()
                for c in n.children:
                    acc |= visit(c)
            n.routes = frozenset(acc)
            return n.routes

        visit(self.root)

    def crossover(self, p: GeoPoint) -> frozenset[int]:
        return self.plist.get((p.x, p.y), frozenset())

    @property
    def route_ids(self) -> frozenset[int]:
        return self.root.routes


class TrTree(RTree):
    def __init__(self, transitions: Iterable[Transition] = (), **kw):
        super().__init__(**kw)
        self.transitions: dict[int, Transition] = {}
        transitions = list(transitions)
        if transitions:
            for t in transitions:
                if t.id in self.transitions:
                    raise SpatialIndexError(f"duplicate transition id {t.id}")
                self.transitions[t.id] = t
            self.bulk_load(ref for t in sorted(transitions, key=lambda t: t.id) for ref in t.refs())

    @staticmethod
    def point_of(entry: TransitionPointRef) -> GeoPoint:
        return entry.location

    @staticmethod
    def same_entry(a: TransitionPointRef, b: TransitionPointRef) -> bool:
        return a.transition_id == b.transition_id and a.kind == b.kind

    def insert_transition(self, t: Transition) -> "TrTree":
        with self.lock.write():
            if t.id in self.transitions:
                raise SpatialIndexError(f"transition {t.id} already indexed")
            self.transitions[t.id] = t
            for ref in t.refs():
                self.insert(ref)
        return self

    def remove_transition(self, tid: int) -> "TrTree":
        with self.lock.write():
            t = self.transitions.pop(tid, None)
            if t is None:
                raise SpatialIndexError(f"transition {tid} not indexed")
            for ref in t.refs():
                if not self.delete(ref):
                    raise AssertionError(f"index lost entry {ref}")
        return self


def build_rr_tree(routes: Iterable[Route], **kw) -> RrTree:
    routes = list(routes)
    if not routes:
        raise SpatialIndexError("cannot build an RR-tree from an empty route set")
    return RrTree(routes, **kw)


def build_tr_tree(transitions: Iterable[Transition], **kw) -> TrTree:
    return TrTree(transitions, **kw)


def insert_transition(tree: TrTree, t: Transition) -> TrTree:
    return tree.insert_transition(t)


def remove_transition(tree: TrTree, tid: int) -> TrTree:
    return tree.remove_transition(tid)


# ---- best-first traversal -----------------------------------------------

class BestFirst:
    """Best-first traversal of a point R-tree in ascending distance to a query.

    Iteration yields :class:`HeapEntry` items; yielded nodes are *not* expanded
    automatically, the consumer calls :meth:`expand` for the ones it wants
    opened.
    """

    def __init__(self, tree: RTree, query: Sequence[GeoPoint]):
        self.tree = tree
        self.query = tuple(query)
        self._heap: list = []
        self._seq = itertools.count()
        if tree.root.mbr is not None:
            self._push(tree.root)

    def _push(self, item) -> None:
        if isinstance(item, Node):
            if item.mbr is None:
                return
            key = min_dist_query_mbr(self.query, item.mbr)
        else:
            key = point_route_dist(self.tree.point_of(item), self.query)
        heapq.heappush(self._heap, (key, next(self._seq), item))

    def expand(self, node: Node) -> None:
        for c in node.children:
            self._push(c)

    def __iter__(self):
        return self

    def __next__(self) -> HeapEntry:
        if not self._heap:
            raise StopIteration
        key, _, item = heapq.heappop(self._heap)
        return HeapEntry(item, key)


def best_first(tree: RTree, query: Sequence[GeoPoint]) -> Iterator[HeapEntry]:
    """Full best-first stream: every node is yielded and then expanded."""
    bf = BestFirst(tree, query)
    for he in bf:
        yield he
        if he.is_node:
            bf.expand(he.target)


# ---- snapshots ----------------------------------------------------------
#
# layout (little endian):
#   header   magic[8] version:u16 kind:u8 max_entries:u16 min_entries:u16 size:u64 node_count:u32
#   nodes    preorder; leaf:u8 has_mbr:u8 [minx miny maxx maxy:f64] n:u32 then
#            internal: child node index:u32 * n
#            RR leaf:  x y:f64 nroutes:u32 route_id:i64 * nroutes
#            TR leaf:  transition_id:i64 kind:u8 x y:f64
#   RR only  nlist: per node nroutes:u32 route_id:i64*   plist: count:u32 (x y:f64 n:u32 id:i64*)*

_HDR = struct.Struct("<8sHBHHQI")


def _w(buf, fmt, *vals):
    buf.write(struct.pack("<" + fmt, *vals))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.off = data, 0

    def read(self, fmt: str):
        s = struct.Struct("<" + fmt)
        if self.off + s.size > len(self.data):
            raise SnapshotError("truncated snapshot")
        vals = s.unpack_from(self.data, self.off)
        self.off += s.size
        return vals


def dump_tree(tree: RTree) -> bytes:
    kind = _KIND_RR if isinstance(tree, RrTree) else _KIND_TR
    order = list(tree.nodes())
    index = {id(n): i for i, n in enumerate(order)}
    buf = io.BytesIO()
    buf.write(_HDR.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, kind, tree.max_entries,
                        tree.min_entries, tree.size, len(order)))
    for n in order:
        _w(buf, "BB", int(n.leaf), int(n.mbr is not None))
        if n.mbr is not None:
            _w(buf, "4d", *n.mbr.bounds)
        _w(buf, "I", len(n.children))
        if not n.leaf:
            for c in n.children:
                _w(buf, "I", index[id(c)])
        elif kind == _KIND_RR:
            for e in n.children:
                ids = sorted(e.routes)
                _w(buf, "ddI", e.point.x, e.point.y, len(ids))
                _w(buf, f"{len(ids)}q", *ids)
        else:
            for e in n.children:
                _w(buf, "qBdd", e.transition_id, int(e.kind), e.location.x, e.location.y)
    if kind == _KIND_RR:
        for n in order:
            ids = sorted(n.routes)
            _w(buf, "I", len(ids))
            _w(buf, f"{len(ids)}q", *ids)
        _w(buf, "I", len(tree.plist))
        for (x, y), rs in sorted(tree.plist.items()):
            ids = sorted(rs)
            _w(buf, "ddI", x, y, len(ids))
            _w(buf, f"{len(ids)}q", *ids)
    return buf.getvalue()


def load_tree(data: bytes) -> RTree:
    rd = _Reader(data)
    magic, version, kind, max_entries, min_entries, size, n_nodes = rd.read("8sHBHHQI")
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotError("not an index snapshot")
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    if kind not in (_KIND_RR, _KIND_TR):
        raise SnapshotError(f"unknown tree kind {kind}")
    tree: RTree = RrTree() if kind == _KIND_RR else TrTree()
    tree.max_entries, tree.min_entries, tree.size = max_entries, min_entries, size
    nodes = [Node(True) for _ in range(n_nodes)]
    child_idx: list[list[int]] = [[] for _ in range(n_nodes)]
    for i in range(n_nodes):
        leaf, has_mbr = rd.read("BB")
        n = nodes[i]
        n.leaf = bool(leaf)
        if has_mbr:
            n.mbr = Mbr.from_bounds(*rd.read("4d"))
        (count,) = rd.read("I")
        if not n.leaf:
            child_idx[i] = list(rd.read(f"{count}I"))
        elif kind == _KIND_RR:
            for _ in range(count):
                x, y, nr = rd.read("ddI")
                n.children.append(RoutePoint(GeoPoint(x, y), frozenset(rd.read(f"{nr}q"))))
        else:
            for _ in range(count):
                tid, k, x, y = rd.read("qBdd")
                n.children.append(TransitionPointRef(tid, Endpoint(k), GeoPoint(x, y)))
    for i, idx in enumerate(child_idx):
        if not nodes[i].leaf:
            nodes[i].children = [nodes[j] for j in idx]
    if n_nodes:
        tree.root = nodes[0]
    if kind == _KIND_RR:
        for n in nodes:
            (nr,) = rd.read("I")
            n.routes = frozenset(rd.read(f"{nr}q"))
        (np_,) = rd.read("I")
        for _ in range(np_):
            x, y, nr = rd.read("ddI")
            tree.plist[(x, y)] = frozenset(rd.read(f"{nr}q"))
    else:
        halves: dict[int, dict[Endpoint, GeoPoint]] = {}
        for e in tree.entries():
            halves.setdefault(e.transition_id, {})[e.kind] = e.location
        for tid, h in halves.items():
            if len(h) != 2:
                raise SnapshotError(f"transition {tid} has {len(h)} endpoint(s)")
            tree.transitions[tid] = Transition(tid, h[Endpoint.ORIGIN], h[Endpoint.DESTINATION])
    if rd.off != len(data):
        raise SnapshotError("trailing bytes in snapshot")
    return tree


def save_tree(tree: RTree, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_tree(tree))


def read_tree(path) -> RTree:
    with open(path, "rb") as fh:
        return load_tree(fh.read())
