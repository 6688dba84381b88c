"""Reading and writing route / transition files, GTFS conversion, and
synthetic data generation.

File formats (UTF-8, comma separated, optional header row):

routes
    ``route_id,seq,lat,lon`` -- one stop per line, sorted by (route_id, seq).
transitions
    ``transition_id,o_lat,o_lon,d_lat,d_lon``.  A row may carry more than two
    points (``id,lat1,lon1,...,latn,lonn``); it is then split into n-1
    consecutive transitions with ids ``id#0 .. id#(n-2)``.

Latitudes and longitudes are rounded to 1e-6 degrees on input and projected
once onto a local plane in kilometres anchored at the stop centroid.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import GeoPoint, Mbr
from .model import QueryRoute, Route, Transition

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088
COORD_DIGITS = 6


class IngestError(ValueError):
    pass


def quantize(deg: float) -> float:
    return round(deg, COORD_DIGITS)


@dataclass(frozen=True)
class Projection:
    """Local planar projection in km anchored at (lat0, lon0).

    ``method="aeqd"`` (default) is the spherical azimuthal equidistant
    projection: distances from the anchor are exact and pairwise distances
    over a few degrees stay within a fraction of a percent of great-circle
    ones.  ``method="equirect"`` scales longitude by cos(lat0); it is cheaper
    but its east-west error grows with the latitude span (about 2% per degree
    away from the anchor at mid latitudes).
    """
    lat0: float
    lon0: float
    method: str = "aeqd"

    def __post_init__(self):
        if self.method not in ("aeqd", "equirect"):
            raise IngestError(f"unknown projection {self.method!r}")

    def forward(self, lat: float, lon: float) -> GeoPoint:
        if self.method == "equirect":
            kx = EARTH_RADIUS_KM * math.radians(1.0) * math.cos(math.radians(self.lat0))
            return GeoPoint((lon - self.lon0) * kx, (lat - self.lat0) * EARTH_RADIUS_KM * math.radians(1.0))
        p0, p = math.radians(self.lat0), math.radians(lat)
        dl = math.radians(lon - self.lon0)
        h = math.sin((p - p0) / 2) ** 2 + math.cos(p0) * math.cos(p) * math.sin(dl / 2) ** 2
        c = 2 * math.asin(min(1.0, math.sqrt(h)))
        theta = math.atan2(math.sin(dl) * math.cos(p), math.cos(p0) * math.sin(p) - math.sin(p0) * math.cos(p) * math.cos(dl))
        rho = EARTH_RADIUS_KM * c
        return GeoPoint(rho * math.sin(theta), rho * math.cos(theta))

    def inverse(self, pt: GeoPoint) -> tuple[float, float]:
        if self.method == "equirect":
            kx = EARTH_RADIUS_KM * math.radians(1.0) * math.cos(math.radians(self.lat0))
            return (self.lat0 + pt.y / (EARTH_RADIUS_KM * math.radians(1.0)), self.lon0 + pt.x / kx)
        c = math.hypot(pt.x, pt.y) / EARTH_RADIUS_KM
        if c == 0.0:
            return (self.lat0, self.lon0)
        theta = math.atan2(pt.x, pt.y)
        p0 = math.radians(self.lat0)
        p = math.asin(math.sin(p0) * math.cos(c) + math.cos(p0) * math.sin(c) * math.cos(theta))
        dl = math.atan2(math.sin(theta) * math.sin(c) * math.cos(p0), math.cos(c) - math.sin(p0) * math.sin(p))
        return (math.degrees(p), self.lon0 + math.degrees(dl))

    @classmethod
    def centroid(cls, latlons: Iterable[tuple[float, float]], method: str = "aeqd") -> "Projection":
        arr = np.asarray(list(latlons), dtype=float)
        if arr.size == 0:
            raise IngestError("cannot anchor a projection on an empty dataset")
        lat0, lon0 = arr.mean(axis=0)
        return cls(quantize(float(lat0)), quantize(float(lon0)), method)


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    lat1, lon1, lat2, lon2 = map(math.radians, (*a, *b))
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(h))


@dataclass
class RouteDataset:
    routes: list[Route]
    external_ids: list[str]
    stops: list[list[tuple[float, float]]]
    projection: Projection
    skipped: int = 0

    def by_external(self, ext: str) -> Route:
        try:
            return self.routes[self.external_ids.index(ext)]
        except ValueError:
            raise IngestError(f"unknown route {ext!r}") from None


@dataclass
class TransitionDataset:
    transitions: list[Transition]
    external_ids: list[str]
    endpoints: list[tuple[tuple[float, float], tuple[float, float]]]


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and row[0].strip().lower() in ("route_id", "transition_id", "id"):
                continue
            yield lineno, [c.strip() for c in row]


def _coord(text: str, path, lineno: int, what: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise IngestError(f"{path}:{lineno}: bad {what} {text!r}") from None
    lim = 90.0 if what == "latitude" else 180.0
    if not math.isfinite(v) or abs(v) > lim:
        raise IngestError(f"{path}:{lineno}: {what} out of range: {text}")
    return quantize(v)


def load_routes(path, projection: Projection | None = None, method: str = "aeqd") -> RouteDataset:
    grouped: dict[str, list[tuple[int, float, float]]] = defaultdict(list)
    for lineno, row in _rows(path):
        if len(row) != 4:
            raise IngestError(f"{path}:{lineno}: expected route_id,seq,lat,lon, got {len(row)} fields")
        rid, seq = row[0], row[1]
        try:
            seq_i = int(seq)
        except ValueError:
            raise IngestError(f"{path}:{lineno}: bad sequence number {seq!r}") from None
        grouped[rid].append((seq_i, _coord(row[2], path, lineno, "latitude"),
                             _coord(row[3], path, lineno, "longitude")))
    stops_by_route = {}
    skipped = 0
    for rid in sorted(grouped):
        seqs = sorted(grouped[rid])
        if len({s for s, _, _ in seqs}) != len(seqs):
            raise IngestError(f"{path}: route {rid!r} repeats a sequence number")
        if len(seqs) < 2:
            skipped += 1
            continue
        stops_by_route[rid] = [(lat, lon) for _, lat, lon in seqs]
    if skipped:
        log.warning("%s: skipped %d route(s) with fewer than two stops", path, skipped)
    if projection is None:
        projection = Projection.centroid((ll for s in stops_by_route.values() for ll in s), method)
    ext_ids = list(stops_by_route)
    routes = [Route(i, tuple(projection.forward(lat, lon) for lat, lon in stops_by_route[ext]))
              for i, ext in enumerate(ext_ids)]
    return RouteDataset(routes, ext_ids, [stops_by_route[e] for e in ext_ids], projection, skipped)


def load_transitions(path, projection: Projection) -> TransitionDataset:
    transitions, ext_ids, endpoints = [], [], []
    for lineno, row in _rows(path):
        coords = row[1:]
        if len(coords) < 4 or len(coords) % 2:
            raise IngestError(f"{path}:{lineno}: expected an id and at least two lat,lon pairs")
        pts = [(_coord(coords[i], path, lineno, "latitude"), _coord(coords[i + 1], path, lineno, "longitude"))
               for i in range(0, len(coords), 2)]
        for j, (a, b) in enumerate(zip(pts, pts[1:])):
            tid = len(transitions)
            transitions.append(Transition(tid, projection.forward(*a), projection.forward(*b)))
            ext_ids.append(row[0] if len(pts) == 2 else f"{row[0]}#{j}")
            endpoints.append((a, b))
    if len(set(ext_ids)) != len(ext_ids):
        raise IngestError(f"{path}: duplicate transition ids")
    return TransitionDataset(transitions, ext_ids, endpoints)


def _fmt(v: float) -> str:
    return f"{v:.{COORD_DIGITS}f}"


def write_routes(ds: RouteDataset, path) -> None:
    order = sorted(range(len(ds.routes)), key=lambda i: ds.external_ids[i])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["route_id", "seq", "lat", "lon"])
        for i in order:
            for seq, (lat, lon) in enumerate(ds.stops[i]):
                w.writerow([ds.external_ids[i], seq, _fmt(lat), _fmt(lon)])


def write_transitions(ds: TransitionDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["transition_id", "o_lat", "o_lon", "d_lat", "d_lon"])
        for ext, (a, b) in zip(ds.external_ids, ds.endpoints):
            w.writerow([ext, _fmt(a[0]), _fmt(a[1]), _fmt(b[0]), _fmt(b[1])])


def gtfs_to_routes(gtfs_dir, out_path) -> int:
    """Write a routes file with one representative trip per GTFS route: the
    trip with the most stops, ties broken by trip id.  Returns the route count."""
    gtfs_dir = Path(gtfs_dir)

    def table(name):
        p = gtfs_dir / f"{name}.txt"
        if not p.exists():
            raise IngestError(f"missing GTFS table {p}")
        with open(p, newline="", encoding="utf-8-sig") as fh:
            yield from csv.DictReader(fh)

    stops = {}
    for row in table("stops"):
        try:
            stops[row["stop_id"]] = (quantize(float(row["stop_lat"])), quantize(float(row["stop_lon"])))
        except (KeyError, ValueError) as exc:
            raise IngestError(f"bad stops.txt row {row!r}") from exc
    trip_route = {row["trip_id"]: row["route_id"] for row in table("trips")}
    seqs: dict[str, list[tuple[int, str]]] = defaultdict(list)
    for row in table("stop_times"):
        seqs[row["trip_id"]].append((int(row["stop_sequence"]), row["stop_id"]))
    best: dict[str, tuple[int, str]] = {}
    for trip, route in trip_route.items():
        n = len(seqs.get(trip, ()))
        cur = best.get(route)
        if n and (cur is None or (-n, trip) < (-cur[0], cur[1])):
            best[route] = (n, trip)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["route_id", "seq", "lat", "lon"])
        for route in sorted(best):
            for i, (_, stop_id) in enumerate(sorted(seqs[best[route][1]])):
                if stop_id not in stops:
                    raise IngestError(f"trip {best[route][1]} references unknown stop {stop_id}")
                lat, lon = stops[stop_id]
                w.writerow([route, i, _fmt(lat), _fmt(lon)])
    return len(best)


# ---- manifest ---------------------------------------------------------------

@dataclass
class DatasetManifest:
    anchor: tuple[float, float]
    counts: dict[str, int]
    bbox: tuple[float, float, float, float]  # min_lat, min_lon, max_lat, max_lon
    digests: dict[str, str] = field(default_factory=dict)
    projection: str = "aeqd"

    @property
    def projector(self) -> Projection:
        return Projection(self.anchor[0], self.anchor[1], self.projection)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(tuple(d["anchor"]), dict(d["counts"]), tuple(d["bbox"]), dict(d.get("digests", {})),
                   d.get("projection", "aeqd"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def make_manifest(routes: RouteDataset, transitions: TransitionDataset) -> DatasetManifest:
    lls = [ll for s in routes.stops for ll in s] + [ll for pair in transitions.endpoints for ll in pair]
    lats = [a for a, _ in lls] or [0.0]
    lons = [b for _, b in lls] or [0.0]
    counts = {
        "routes": len(routes.routes),
        "skipped_routes": routes.skipped,
        "route_points": sum(len(s) for s in routes.stops),
        "transitions": len(transitions.transitions),
    }
    return DatasetManifest((routes.projection.lat0, routes.projection.lon0), counts,
                           (min(lats), min(lons), max(lats), max(lons)), projection=routes.projection.method)


# ---- synthetic data ---------------------------------------------------------

def gen_synthetic_transitions(n: int, bbox: Mbr, seed: int) -> list[Transition]:
    """``n`` transitions with both endpoints uniform in ``bbox``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    lo = np.array([bbox.min.x, bbox.min.y])
    hi = np.array([bbox.max.x, bbox.max.y])
    xy = rng.uniform(lo, hi, size=(n, 2, 2)).tolist()
    return [Transition(i, GeoPoint(*o), GeoPoint(*d)) for i, (o, d) in enumerate(xy)]


def gen_synthetic_routes(n: int, bbox: Mbr, seed: int, stops: tuple[int, int] = (10, 30),
                         spacing_km: float = 0.4) -> list[Route]:
    """Random-walk bus routes inside ``bbox``; stop coordinates are snapped to a
    grid so that different routes share stops now and then."""
    rng = np.random.default_rng(seed)
    routes = []
    grid = spacing_km / 2
    for rid in range(n):
        m = int(rng.integers(stops[0], stops[1] + 1))
        x, y = rng.uniform([bbox.min.x, bbox.min.y], [bbox.max.x, bbox.max.y])
        heading = rng.uniform(0, 2 * math.pi)
        pts = []
        for _ in range(m):
            p = GeoPoint(round(x / grid) * grid, round(y / grid) * grid)
            if not pts or pts[-1] != p:
                pts.append(p)
            heading += rng.uniform(-math.pi / 4, math.pi / 4)
            x = min(max(x + spacing_km * math.cos(heading), bbox.min.x), bbox.max.x)
            y = min(max(y + spacing_km * math.sin(heading), bbox.min.y), bbox.max.y)
        if len(pts) < 2:
            pts.append(GeoPoint(pts[0].x + grid, pts[0].y))
        routes.append(Route(rid, tuple(pts)))
    return routes


def gen_queries(count: int, qlen: int, interval_km: float, seed: int,
                route_points: Sequence[GeoPoint]) -> list[QueryRoute]:
    """Random query routes: start at a random route point, then step
    ``interval_km`` at a heading that turns by at most 90 degrees per step."""
    if not route_points:
        raise ValueError("route_points must not be empty")
    if qlen < 1:
        raise ValueError("qlen must be at least 1")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        p = route_points[int(rng.integers(len(route_points)))]
        pts = [p]
        heading = rng.uniform(0.0, 2 * math.pi)
        for i in range(1, qlen):
            if i > 1:
                heading += rng.uniform(-math.pi / 2, math.pi / 2)
            p = GeoPoint(p.x + interval_km * math.cos(heading), p.y + interval_km * math.sin(heading))
            pts.append(p)
        out.append(QueryRoute(tuple(pts)))
    return out
