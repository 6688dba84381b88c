"""Benchmark sweeps: run query and planning methods over parameter grids and
emit one averaged CSV row per grid cell and method.

A sweep spec is a JSON object::

    {
      "seed": 7, "queries": 50, "repetitions": 1,
      "query": {"k": [1, 5, 10], "qlen": [5], "interval_km": [3.0],
                "methods": ["filter-refine", "voronoi", "divide-conquer"]},
      "plan":  {"k": [10], "td_se": [30.0], "tau_ratio": [1.4],
                "pairs": 10, "methods": ["pre", "bruteforce"]}
    }

Either section may be omitted; a missing grid falls back to k=10, |Q|=5,
3 km query interval, 30 km origin-destination distance and tau ratio 1.4.
Times are wall-clock milliseconds from ``time.perf_counter`` averaged over
queries and repetitions.  ``filter_ms`` covers both index traversals (route
filtering and transition pruning) and ``refine_ms`` the exact verification; when divide-conquer runs on several
threads the two are scaled to share the measured wall time.
"""
from __future__ import annotations

import csv
import itertools
import time
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry import GeoPoint
from .index import RrTree, TrTree
from .ingest import gen_queries
from .model import Route, Semantics, Transition
from .oracle import maxrknnt_bruteforce, rknnt_bruteforce
from .planner import Objective, TransitGraph, build_graph, plan, precompute
from .query import QueryStats, rknnt, rknnt_divide_conquer

BENCH_VERSION = 1
QUERY_METHODS = ("filter-refine", "voronoi", "divide-conquer", "oracle")
PLAN_METHODS = ("pre", "bruteforce")


@dataclass
class BenchRecord:
    version: int
    kind: str
    method: str
    k: int
    qlen: int
    interval_km: float
    td_se: float
    tau_ratio: float
    seed: int
    runs: int
    wall_ms: float
    result_size: float
    filter_ms: float
    refine_ms: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def run_query_method(method: str, query, k: int, semantics: Semantics, rr: RrTree, tr: TrTree,
                     routes: Sequence[Route] = (), transitions: Sequence[Transition] = (), *,
                     threads: int = 1, mask=frozenset(), stats: QueryStats | None = None):
    if method == "filter-refine":
        return rknnt(query, k, semantics, rr, tr, use_voronoi=False, mask=mask, stats=stats)
    if method == "voronoi":
        return rknnt(query, k, semantics, rr, tr, use_voronoi=True, mask=mask, stats=stats)
    if method == "divide-conquer":
        return rknnt_divide_conquer(query, k, semantics, rr, tr, mask=mask, threads=threads, stats=stats)
    if method == "oracle":
        live = [r for r in routes if r.id not in mask]
        return rknnt_bruteforce(query, k, semantics, live, transitions)
    raise ValueError(f"unknown query method {method!r}")


def _timed(fn: Callable):
    t0 = time.perf_counter()
    out = fn()
    return out, (time.perf_counter() - t0) * 1e3


def _pairs_near(graph: TransitGraph, td_se: float, count: int, rng: np.random.Generator
                ) -> list[tuple[int, int, float]]:
    """Up to ``count`` (o, d, shortest) triples whose shortest distance lies
    within 10% of ``td_se``."""
    n = len(graph)
    out = []
    for o in rng.permutation(n)[: min(n, 4 * count + 8)]:
        col = graph.distances_to(int(o))
        ok = np.flatnonzero((col >= 0.9 * td_se) & (col <= 1.1 * td_se))
        if ok.size:
            d = int(ok[int(rng.integers(ok.size))])
            out.append((int(o), d, float(col[d])))
        if len(out) >= count:
            break
    return out


def run_sweep(spec: dict, rr: RrTree, tr: TrTree, routes: Sequence[Route],
              transitions: Sequence[Transition], *, threads: int = 1,
              semantics: Semantics = Semantics.EXISTS, objective: Objective = Objective.MAX,
              graph_for_k: Callable[[int], TransitGraph] | None = None) -> list[BenchRecord]:
    seed = int(spec.get("seed", 0))
    n_queries = int(spec.get("queries", 20))
    reps = int(spec.get("repetitions", 1))
    if n_queries < 1 or reps < 1:
        raise ValueError("queries and repetitions must be positive")
    records: list[BenchRecord] = []
    route_points: list[GeoPoint] = sorted({p for r in routes for p in r.points})

    q = spec.get("query")
    if q:
        methods = q.get("methods", ["filter-refine", "voronoi", "divide-conquer"])
        for m in methods:
            if m not in QUERY_METHODS:
                raise ValueError(f"unknown query method {m!r}")
        grid = itertools.product(q.get("k", [10]), q.get("qlen", [5]), q.get("interval_km", [3.0]))
        for k, qlen, interval in grid:
            queries = gen_queries(n_queries, int(qlen), float(interval), seed, route_points)
            for m in methods:
                st = QueryStats()
                wall = size = 0.0
                for _ in range(reps):
                    for qr in queries:
                        res, ms = _timed(lambda: run_query_method(
                            m, qr, int(k), semantics, rr, tr, routes, transitions, threads=threads, stats=st))
                        wall += ms
                        size += len(res.transitions)
                runs = reps * len(queries)
                f_ms, r_ms = st.filter_ms + st.prune_ms, st.refine_ms
                if f_ms + r_ms > wall:
                    # parallel workers: stage times add up across threads, so share out wall time instead
                    scale = wall / (f_ms + r_ms)
                    f_ms, r_ms = f_ms * scale, r_ms * scale
                records.append(BenchRecord(
                    BENCH_VERSION, "query", m, int(k), int(qlen), float(interval), 0.0, 0.0, seed, runs,
                    wall / runs, size / runs, f_ms / runs, r_ms / runs))

    p = spec.get("plan")
    if p:
        methods = p.get("methods", list(PLAN_METHODS))
        for m in methods:
            if m not in PLAN_METHODS:
                raise ValueError(f"unknown plan method {m!r}")
        if graph_for_k is None:
            base = build_graph(routes)

            def graph_for_k(k):
                return precompute(base, rr, tr, k, threads=threads)
        n_pairs = int(p.get("pairs", 10))
        for k in p.get("k", [10]):
            g = graph_for_k(int(k))
            for td_se, ratio in itertools.product(p.get("td_se", [30.0]), p.get("tau_ratio", [1.4])):
                pairs = _pairs_near(g, float(td_se), n_pairs, np.random.default_rng(seed))
                for m in methods:
                    wall = size = 0.0
                    for _ in range(reps):
                        for o, d, sd in pairs:
                            tau = float(ratio) * sd
                            if m == "pre":
                                res, ms = _timed(lambda: plan(g, o, d, tau, int(k), objective, semantics))
                            else:
                                res, ms = _timed(lambda: maxrknnt_bruteforce(g, o, d, tau, int(k), objective,
                                                                            semantics))
                            wall += ms
                            size += res.count if res is not None else 0
                    runs = reps * len(pairs)
                    div = runs or 1
                    records.append(BenchRecord(
                        BENCH_VERSION, "plan", m, int(k), 0, 0.0, float(td_se), float(ratio), seed, runs,
                        wall / div, size / div, 0.0, 0.0))
    return records


def write_csv(records: Sequence[BenchRecord], out) -> None:
    """Write to a path, or to an already open text stream."""
    if hasattr(out, "write"):
        w = csv.writer(out, lineterminator="\n")
        w.writerow(BenchRecord.columns())
        w.writerows(astuple(r) for r in records)
        return
    with open(out, "w", newline="", encoding="utf-8") as fh:
        write_csv(records, fh)


def write_plot_data(records: Sequence[BenchRecord], out_dir) -> list[Path]:
    """One whitespace-separated ``.dat`` file per (kind, method), rows in sweep
    order, ready for gnuplot's ``using`` clauses."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[tuple[str, str], list[BenchRecord]] = {}
    for r in records:
        groups.setdefault((r.kind, r.method), []).append(r)
    written = []
    for (kind, method), rows in groups.items():
        path = out_dir / f"{kind}-{method}.dat"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# " + " ".join(BenchRecord.columns()[3:]) + "\n")
            for r in rows:
                fh.write(" ".join(str(v) for v in astuple(r)[3:]) + "\n")
        written.append(path)
    return written
