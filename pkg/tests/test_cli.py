from __future__ import annotations

import csv
import json

import pytest

from rknnt.cli import main
from rknnt.fixtures import sample_scene
from rknnt.ingest import Projection

ANCHOR = Projection(40.7, -74.0)


def latlon(p):
    lat, lon = ANCHOR.inverse(p)
    return f"{lat:.6f}", f"{lon:.6f}"


@pytest.fixture
def scene_files(tmp_path):
    s = sample_scene()
    routes = tmp_path / "routes.csv"
    with open(routes, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["route_id", "seq", "lat", "lon"])
        for r in s.routes:
            for i, p in enumerate(r.points):
                w.writerow([f"R{r.id}", i, *latlon(p)])
    trans = tmp_path / "transitions.csv"
    with open(trans, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["transition_id", "o_lat", "o_lon", "d_lat", "d_lon"])
        for t in s.transitions:
            w.writerow([f"T{t.id}", *latlon(t.origin), *latlon(t.destination)])
    query = ";".join(",".join(latlon(p)) for p in s.query.points)
    return routes, trans, query


@pytest.fixture
def index_dir(tmp_path, scene_files):
    routes, trans, _ = scene_files
    out = tmp_path / "idx"
    assert main(["build", str(routes), str(trans), str(out), "--k", "1"]) == 0
    return out


def test_build_outputs(index_dir):
    names = {p.name for p in index_dir.iterdir()}
    assert names == {"manifest.json", "routes.csv", "transitions.csv", "rr.idx", "tr.idx", "pre-k1.bin"}
    m = json.loads((index_dir / "manifest.json").read_text())
    assert m["counts"]["routes"] == 4 and m["counts"]["transitions"] == 6
    assert set(m["digests"]) >= {"rr.idx", "tr.idx", "routes_source"}


def test_rebuild_is_deterministic(tmp_path, scene_files):
    routes, trans, _ = scene_files
    assert main(["build", str(routes), str(trans), str(tmp_path / "a"), "--k", "1"]) == 0
    assert main(["build", str(routes), str(trans), str(tmp_path / "b"), "--k", "1"]) == 0
    for name in ("manifest.json", "rr.idx", "tr.idx", "pre-k1.bin", "routes.csv", "transitions.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("method", ["filter-refine", "voronoi", "divide-conquer", "oracle"])
def test_query_methods_agree(index_dir, scene_files, capsys, method):
    _, _, query = scene_files
    assert main(["query", str(index_dir), "--points", query, "--k", "1", "--semantics", "forall",
                 "--method", method, "--json", "--self-check"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["transitions"] == ["T4"]


def test_query_exists_and_large_k(index_dir, scene_files, capsys):
    _, _, query = scene_files
    assert main(["query", str(index_dir), "--points", query, "--k", "1", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["transitions"] == ["T1", "T3", "T4"]
    assert main(["query", str(index_dir), "--points", query, "--k", "4", "--json"]) == 0
    assert len(json.loads(capsys.readouterr().out)["transitions"]) == 6


def test_query_by_route(index_dir, capsys):
    assert main(["query", str(index_dir), "--route", "R1", "--k", "1", "--self-check"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("# method=divide-conquer")


def test_query_input_errors(index_dir, tmp_path, capsys):
    assert main(["query", str(tmp_path / "missing"), "--xy", "0,0"]) == 2
    assert main(["query", str(index_dir), "--xy", "0,0;1"]) == 2
    assert main(["query", str(index_dir), "--xy", "0,0", "--route", "R1"]) == 2
    assert main(["query", str(index_dir), "--route", "nope"]) == 2
    assert main(["query", str(index_dir), "--xy", "0,0", "--k", "0"]) == 2


def test_build_input_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("A,0,40.0\n")
    assert main(["build", str(bad), str(bad), str(tmp_path / "o")]) == 2
    assert main(["build", str(tmp_path / "none.csv"), str(bad), str(tmp_path / "o")]) == 2


def test_self_check_mismatch_exit_code(index_dir, scene_files, monkeypatch):
    import rknnt.cli as cli

    real = cli.run_query_method

    def broken(method, *a, **kw):
        res = real(method, *a, **kw)
        if method == "oracle":
            return type(res)(res.semantics, res.k, frozenset(), frozenset())
        return res

    monkeypatch.setattr(cli, "run_query_method", broken)
    _, _, query = scene_files
    assert main(["query", str(index_dir), "--points", query, "--k", "1", "--self-check"]) == 3


def test_plan_demo(capsys):
    assert main(["plan", "demo", "a", "j", "--tau", "6", "--k", "1", "--self-check"]) == 0
    out = capsys.readouterr().out
    assert "a-c-f-h-j count=5 td=5.4" in out
    assert "transitions: 1 2 3 4 6" in out
    assert main(["plan", "demo", "a", "j", "--tau", "6", "--k", "1", "--method", "bruteforce"]) == 0
    assert "a-c-f-h-j count=5 td=5.4" in capsys.readouterr().out


def test_plan_infeasible(capsys):
    assert main(["plan", "demo", "a", "j", "--tau", "3", "--k", "1"]) == 0
    assert capsys.readouterr().out.startswith("infeasible")


def test_plan_errors():
    assert main(["plan", "demo", "a", "zz", "--tau", "6", "--k", "1"]) == 2
    assert main(["plan", "demo", "a", "j", "--tau", "-1", "--k", "1"]) == 2


def test_plan_on_index(index_dir, capsys):
    s = sample_scene()
    o = ",".join(latlon(s.routes[0].points[0]))
    d = ",".join(latlon(s.routes[0].points[-1]))
    assert main(["plan", str(index_dir), o, d, "--tau", "20", "--k", "1", "--self-check"]) == 0
    out = capsys.readouterr().out
    assert "count=" in out
    # a k without a cached precomputation is computed on the fly
    assert main(["plan", str(index_dir), o, d, "--tau", "20", "--k", "2", "--self-check"]) == 0


def test_bench(index_dir, tmp_path, capsys):
    spec = tmp_path / "sweep.json"
    spec.write_text(json.dumps({"seed": 3, "queries": 4,
                                "query": {"k": [1, 2, 3], "qlen": [2], "interval_km": [1.0],
                                          "methods": ["filter-refine", "divide-conquer"]},
                                "plan": {"k": [1], "td_se": [4.0], "tau_ratio": [1.2], "pairs": 2}}))
    out = tmp_path / "bench.csv"
    assert main(["bench", str(index_dir), str(spec), "--out", str(out), "--plot-dir", str(tmp_path / "plots")]) == 0
    rows = list(csv.DictReader(open(out)))
    q = [r for r in rows if r["kind"] == "query"]
    assert len(q) == 6
    assert [(r["k"], r["method"]) for r in q][:2] == [("1", "filter-refine"), ("1", "divide-conquer")]
    for r in q:
        assert float(r["filter_ms"]) + float(r["refine_ms"]) <= float(r["wall_ms"]) + 1e-9
        assert r["version"] == "1" and r["seed"] == "3"
    assert {r["method"] for r in rows if r["kind"] == "plan"} == {"pre", "bruteforce"}
    assert (tmp_path / "plots" / "query-divide-conquer.dat").exists()


def test_bench_single_cell_to_stdout(index_dir, tmp_path, capsys):
    spec = tmp_path / "sweep.json"
    spec.write_text(json.dumps({"queries": 2, "query": {"k": [1], "qlen": [3], "interval_km": [0.5],
                                                          "methods": ["voronoi"]}}))
    assert main(["bench", str(index_dir), str(spec)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 and lines[0].startswith("version,kind,method")


def test_gtfs2routes(tmp_path, capsys):
    g = tmp_path / "g"
    g.mkdir()
    (g / "stops.txt").write_text("stop_id,stop_lat,stop_lon\na,1.0,1.0\nb,1.0,1.01\n")
    (g / "trips.txt").write_text("route_id,trip_id\nX,t\n")
    (g / "stop_times.txt").write_text("trip_id,stop_id,stop_sequence\nt,a,1\nt,b,2\n")
    assert main(["gtfs2routes", str(g), str(tmp_path / "r.csv")]) == 0
    assert "1 routes" in capsys.readouterr().out
    assert main(["gtfs2routes", str(tmp_path), str(tmp_path / "r.csv")]) == 2


def test_demo(capsys):
    assert main(["demo", "--self-check"]) == 0
    out = capsys.readouterr().out
    assert "query k=1 forall: filter-refine=[4]" in out


def test_synth_output_builds_and_self_checks(tmp_path, capsys):
    d = tmp_path / "syn"
    assert main(["synth", str(d), "--routes", "20", "--transitions", "300", "--size-km", "4", "--seed", "5"]) == 0
    assert "20 routes, 300 transitions" in capsys.readouterr().out
    assert main(["build", str(d / "routes.csv"), str(d / "transitions.csv"), str(tmp_path / "idx")]) == 0
    capsys.readouterr()
    assert main(["query", str(tmp_path / "idx"), "--k", "3", "--xy", "0,0;0.4,0.3", "--self-check"]) == 0
    assert main(["synth", str(d), "--routes", "0"]) == 2
