"""``rknnt`` command line.

Commands: build, query, plan, bench, gtfs2routes, demo.
Exit codes: 0 success, 2 input error, 3 self-check mismatch.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from . import fixtures
from .bench import QUERY_METHODS, run_query_method, run_sweep, write_csv, write_plot_data
from .geometry import GeoPoint, GeometryError, Mbr, dist
from .index import RrTree, SnapshotError, SpatialIndexError, TrTree, build_rr_tree, build_tr_tree, \
    read_tree, save_tree
from .ingest import (
    DatasetManifest,
    IngestError,
    Projection,
    RouteDataset,
    TransitionDataset,
    gen_synthetic_routes,
    gen_synthetic_transitions,
    gtfs_to_routes,
    load_routes,
    load_transitions,
    make_manifest,
    sha256_file,
    write_routes,
    write_transitions,
)
from .model import ModelError, QueryRoute, Semantics
from .oracle import maxrknnt_bruteforce
from .planner import Objective, PlanError, TransitGraph, build_graph, dump_precomputed, load_precomputed, \
    plan, precompute

log = logging.getLogger("rknnt")

EXIT_OK, EXIT_INPUT, EXIT_MISMATCH = 0, 2, 3
INPUT_ERRORS = (IngestError, PlanError, SnapshotError, SpatialIndexError, GeometryError, ModelError,
                OSError, ValueError, json.JSONDecodeError)


class SelfCheckFailed(Exception):
    pass


@dataclass
class Bundle:
    """Everything ``build`` leaves in an index directory."""
    root: Path
    manifest: DatasetManifest
    routes: RouteDataset
    transitions: TransitionDataset
    rr: RrTree
    tr: TrTree

    @property
    def projection(self) -> Projection:
        return self.routes.projection

    @classmethod
    def load(cls, root) -> "Bundle":
        root = Path(root)
        if not (root / "manifest.json").exists():
            raise IngestError(f"{root} is not an index directory (no manifest.json)")
        manifest = DatasetManifest.from_dict(json.loads((root / "manifest.json").read_text()))
        proj = manifest.projector
        routes = load_routes(root / "routes.csv", proj)
        transitions = load_transitions(root / "transitions.csv", proj)
        rr, tr = read_tree(root / "rr.idx"), read_tree(root / "tr.idx")
        if not isinstance(rr, RrTree) or not isinstance(tr, TrTree):
            raise SnapshotError("index snapshots are of the wrong kind")
        return cls(root, manifest, routes, transitions, rr, tr)

    def pre_path(self, k: int) -> Path:
        return self.root / f"pre-k{k}.bin"

    def graph(self, k: int, threads: int = 1) -> TransitGraph:
        p = self.pre_path(k)
        if p.exists():
            return load_precomputed(p.read_bytes())
        log.warning("no precomputation for k=%d in %s; computing it now (build --k %d caches it)", k, self.root, k)
        return precompute(stop_graph(self.routes), self.rr, self.tr, k, threads=threads)


def stop_graph(routes: RouteDataset) -> TransitGraph:
    """Stop graph whose vertices are named by their ``lat,lon``."""
    def name(p: GeoPoint) -> str:
        lat, lon = routes.projection.inverse(p)
        return f"{lat:.6f},{lon:.6f}"
    return build_graph(routes.routes, name)


# ---- build ------------------------------------------------------------------

def cmd_build(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    routes = load_routes(args.routes, method=args.projection)
    transitions = load_transitions(args.transitions, routes.projection)
    write_routes(routes, out / "routes.csv")
    write_transitions(transitions, out / "transitions.csv")
    rr = build_rr_tree(routes.routes)
    tr = build_tr_tree(transitions.transitions)
    save_tree(rr, out / "rr.idx")
    save_tree(tr, out / "tr.idx")
    outputs = ["routes.csv", "transitions.csv", "rr.idx", "tr.idx"]
    for k in sorted(set(args.k or ())):
        g = precompute(stop_graph(routes), rr, tr, k, threads=args.threads)
        (out / f"pre-k{k}.bin").write_bytes(dump_precomputed(g))
        outputs.append(f"pre-k{k}.bin")
    manifest = make_manifest(routes, transitions)
    manifest.digests = {"routes_source": sha256_file(args.routes),
                        "transitions_source": sha256_file(args.transitions)}
    manifest.digests.update({name: sha256_file(out / name) for name in outputs})
    (out / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"routes={len(routes.routes)} skipped={routes.skipped} transitions={len(transitions.transitions)} "
          f"rr_height={rr.height()} tr_height={tr.height()} -> {out}")
    return EXIT_OK


# ---- query ------------------------------------------------------------------

def _parse_pairs(text: str) -> list[tuple[float, float]]:
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(",")
        if len(parts) != 2:
            raise ValueError(f"expected 'a,b' pairs separated by ';', got {chunk!r}")
        out.append((float(parts[0]), float(parts[1])))
    if not out:
        raise ValueError("no query points given")
    return out


def _query_from_args(args, b: Bundle) -> tuple[QueryRoute, frozenset[int]]:
    given = [x for x in (args.points, args.xy, args.route) if x]
    if len(given) != 1:
        raise ValueError("give exactly one of --points, --xy, --route")
    if args.points:
        return QueryRoute(tuple(b.projection.forward(lat, lon) for lat, lon in _parse_pairs(args.points))), frozenset()
    if args.xy:
        return QueryRoute(tuple(GeoPoint(x, y) for x, y in _parse_pairs(args.xy))), frozenset()
    r = b.routes.by_external(args.route)
    # an existing route used as the query competes with the other routes only
    return QueryRoute(r.points), frozenset({r.id})


def cmd_query(args) -> int:
    b = Bundle.load(args.index)
    query, mask = _query_from_args(args, b)
    sem = Semantics(args.semantics)
    routes, trans = b.routes.routes, b.transitions.transitions
    t0 = time.perf_counter()
    res = run_query_method(args.method, query, args.k, sem, b.rr, b.tr, routes, trans,
                           threads=args.threads, mask=mask)
    ms = (time.perf_counter() - t0) * 1e3
    ids = res.sorted_ids()
    if args.self_check:
        for m in QUERY_METHODS:
            other = run_query_method(m, query, args.k, sem, b.rr, b.tr, routes, trans,
                                     threads=args.threads, mask=mask).sorted_ids()
            if other != ids:
                raise SelfCheckFailed(f"method {m} returned {len(other)} transitions, {args.method} returned {len(ids)}")
    names = [b.transitions.external_ids[i] for i in ids]
    if args.json:
        print(json.dumps({"method": args.method, "k": args.k, "semantics": sem.value,
                          "time_ms": round(ms, 3), "transitions": names}))
    else:
        print(f"# method={args.method} k={args.k} semantics={sem.value} results={len(names)} time_ms={ms:.3f}")
        for n in names:
            print(n)
    return EXIT_OK


# ---- plan -------------------------------------------------------------------

def _resolve_stop(text: str, g: TransitGraph, proj: Projection | None) -> int:
    """A vertex name, a vertex id, or ``lat,lon`` of a stop (nearest within 1 m)."""
    if text in g.names:
        return g.vertex(text)
    if text.isdigit():
        return g.vertex(int(text))
    if "," in text and proj is not None:
        lat, lon = (float(v) for v in text.split(","))
        p = proj.forward(lat, lon)
        best = min(range(len(g)), key=lambda v: dist(g.points[v], p))
        if dist(g.points[best], p) > 1e-3:
            raise PlanError(f"no stop at {text}")
        return best
    return g.vertex(text)


def _describe(g: TransitGraph, res) -> str:
    path = "-".join(g.names[v] for v in res.path)
    return f"{path} count={res.count} td={res.td:.6g}"


def _plan_graph(args) -> tuple[TransitGraph, Projection | None, list[str] | None]:
    if args.index == "demo":
        return fixtures.sample_planning_graph(args.k), None, None
    b = Bundle.load(args.index)
    return b.graph(args.k, args.threads), b.projection, b.transitions.external_ids


def cmd_plan(args) -> int:
    g, proj, ext_ids = _plan_graph(args)
    o, d = _resolve_stop(args.origin, g, proj), _resolve_stop(args.destination, g, proj)
    obj, sem = Objective(args.objective), Semantics(args.semantics)
    t0 = time.perf_counter()
    if args.method == "pre":
        res = plan(g, o, d, args.tau, args.k, obj, sem)
    else:
        res = maxrknnt_bruteforce(g, o, d, args.tau, args.k, obj, sem)
    ms = (time.perf_counter() - t0) * 1e3
    if args.self_check:
        other = (maxrknnt_bruteforce(g, o, d, args.tau, args.k, obj, sem) if args.method == "pre"
                 else plan(g, o, d, args.tau, args.k, obj, sem))
        a = None if res is None else (res.count, round(res.td, 9))
        c = None if other is None else (other.count, round(other.td, 9))
        if a != c:
            raise SelfCheckFailed(f"pre and bruteforce disagree: {a} vs {c}")
    if res is None:
        print(f"infeasible: no route from {args.origin} to {args.destination} within {args.tau}")
    else:
        print(f"# method={args.method} objective={obj.value} semantics={sem.value} time_ms={ms:.3f}")
        print(_describe(g, res))
        ids = sorted(res.transitions)
        print("transitions: " + " ".join(ext_ids[t] if ext_ids else str(t) for t in ids))
    return EXIT_OK


# ---- bench ------------------------------------------------------------------

def cmd_bench(args) -> int:
    b = Bundle.load(args.index)
    spec = json.loads(Path(args.sweep).read_text())
    if args.seed is not None:
        spec["seed"] = args.seed
    recs = run_sweep(spec, b.rr, b.tr, b.routes.routes, b.transitions.transitions, threads=args.threads,
                     semantics=Semantics(args.semantics), objective=Objective(args.objective),
                     graph_for_k=lambda k: b.graph(k, args.threads))
    if args.out == "-":
        write_csv(recs, sys.stdout)
    else:
        write_csv(recs, args.out)
        print(f"{len(recs)} rows -> {args.out}")
    if args.plot_dir:
        for p in write_plot_data(recs, args.plot_dir):
            print(f"plot data -> {p}")
    return EXIT_OK


# ---- misc -------------------------------------------------------------------

def cmd_gtfs2routes(args) -> int:
    n = gtfs_to_routes(args.gtfs_dir, args.out)
    print(f"{n} routes -> {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    """Synthetic city: random-walk routes and uniform transitions in a square
    box centred on (--lat, --lon), written as lat/lon files ready for build."""
    if args.routes < 1 or args.transitions < 1 or not args.size_km > 0:
        raise ValueError("--routes, --transitions and --size-km must be positive")
    half = args.size_km / 2.0
    box = Mbr.from_bounds(-half, -half, half, half)
    proj = Projection(args.lat, args.lon)
    routes = gen_synthetic_routes(args.routes, box, args.seed)
    transitions = gen_synthetic_transitions(args.transitions, box, args.seed + 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_routes(RouteDataset(routes, [str(r.id) for r in routes],
                              [[proj.inverse(p) for p in r.points] for r in routes], proj), out / "routes.csv")
    write_transitions(TransitionDataset(transitions, [str(t.id) for t in transitions],
                                        [(proj.inverse(t.origin), proj.inverse(t.destination))
                                         for t in transitions]), out / "transitions.csv")
    print(f"{len(routes)} routes, {len(transitions)} transitions -> {out}")
    return EXIT_OK


def cmd_demo(args) -> int:
    """Run the built-in toy scene and toy planning graph through every method."""
    scene = fixtures.sample_scene()
    rr, tr = build_rr_tree(scene.routes), build_tr_tree(scene.transitions)
    for sem in Semantics:
        per = {m: run_query_method(m, scene.query, args.k, sem, rr, tr, scene.routes, scene.transitions)
               .sorted_ids() for m in QUERY_METHODS}
        print(f"query k={args.k} {sem.value}: " + "  ".join(f"{m}={v}" for m, v in per.items()))
        if args.self_check and len({tuple(v) for v in per.values()}) != 1:
            raise SelfCheckFailed(f"query methods disagree on the demo scene ({sem.value})")
    g = fixtures.sample_planning_graph(1)
    for obj in Objective:
        for sem in Semantics:
            res = plan(g, "a", "j", 6.0, 1, obj, sem)
            ref = maxrknnt_bruteforce(g, "a", "j", 6.0, 1, obj, sem)
            print(f"plan a->j tau=6 {obj.value}/{sem.value}: {_describe(g, res)}")
            if args.self_check and (res.count, res.td) != (ref.count, ref.td):
                raise SelfCheckFailed("planner disagrees with brute force on the demo graph")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rknnt", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, k_default=10):
        p.add_argument("--k", type=int, default=k_default)
        p.add_argument("--semantics", choices=[s.value for s in Semantics], default="exists")
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("build", help="ingest routes and transitions, write index snapshots")
    p.add_argument("routes")
    p.add_argument("transitions")
    p.add_argument("out")
    p.add_argument("--k", type=int, action="append", help="also precompute the planning graph for this k")
    p.add_argument("--projection", choices=("aeqd", "equirect"), default="aeqd")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("query", help="transitions that take the query among their k nearest routes")
    p.add_argument("index")
    common(p)
    p.add_argument("--method", choices=QUERY_METHODS, default="divide-conquer")
    p.add_argument("--points", help="lat,lon;lat,lon;...")
    p.add_argument("--xy", help="planar km coordinates x,y;x,y;...")
    p.add_argument("--route", help="use an existing route (by id) as the query; it is excluded from competition")
    p.add_argument("--self-check", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("plan", help="best route between two stops within a travel budget")
    p.add_argument("index", help="index directory, or 'demo' for the built-in ten-stop graph")
    p.add_argument("origin")
    p.add_argument("destination")
    common(p)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--objective", choices=[o.value for o in Objective], default="max")
    p.add_argument("--method", choices=("pre", "bruteforce"), default="pre")
    p.add_argument("--self-check", action="store_true")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("bench", help="parameter sweep, CSV output")
    p.add_argument("index")
    p.add_argument("sweep", help="JSON sweep spec")
    p.add_argument("--out", default="-")
    p.add_argument("--plot-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--objective", choices=[o.value for o in Objective], default="max")
    p.add_argument("--semantics", choices=[s.value for s in Semantics], default="exists")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gtfs2routes", help="convert a GTFS directory into a routes file")
    p.add_argument("gtfs_dir")
    p.add_argument("out")
    p.set_defaults(fn=cmd_gtfs2routes)

    p = sub.add_parser("synth", help="write a synthetic routes/transitions pair")
    p.add_argument("out")
    p.add_argument("--routes", type=int, default=1000)
    p.add_argument("--transitions", type=int, default=100_000)
    p.add_argument("--size-km", type=float, default=40.0)
    p.add_argument("--lat", type=float, default=40.75)
    p.add_argument("--lon", type=float, default=-73.98)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("demo", help="run the built-in toy examples")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--self-check", action="store_true")
    p.set_defaults(fn=cmd_demo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except SelfCheckFailed as exc:
        print(f"self-check failed: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
