import math

import numpy as np
import pytest

from msds.coordinator import (
    Center,
    GlobalIndex,
    GlobalTopK,
    Query,
    clip_query,
    delta_degrees,
    merge_topk,
    pick_mcqc,
)
from msds.errors import DuplicateSourceError, InvalidParameterError, PartialResultError
from msds.geometry import GridConfig, SpatialSet, cells_to_points, rasterize, rect_contains, rect_intersects, set_distance
from msds.graph import build_graph
from msds.ibtree import IBtree, raw_lower_bound
from msds.mcqc import McqcResult, gadg
from msds.miq import search
from msds.oracle import brute_miq, random_corpus, random_query, unit_grid
from msds.protocol import SourceDescriptor
from msds.source import DataSource
from msds.transport import InProcessLink
from msds.workload import deploy

from conftest import mkset


def strip_corpus(rng, grid, n_sources, per_source, max_cells=25):
    """Datasets confined to vertical strips, one strip per source."""
    side = grid.side
    width = side // n_sources
    groups = {}
    for i in range(n_sources):
        sets = []
        for j in range(per_source):
            n = int(rng.integers(1, max_cells))
            c0 = int(rng.integers(i * width, (i + 1) * width - 4))
            r0 = int(rng.integers(0, side - 6))
            cols = np.clip(c0 + rng.integers(0, 6, n), i * width, (i + 1) * width - 1)
            rows = r0 + rng.integers(0, 6, n)
            sets.append(mkset(f"s{i}-d{j}", list(zip(cols.tolist(), rows.tolist())), grid))
        groups[f"s{i}"] = sets
    return groups


def center_for(groups, f=4):
    dep = deploy({sid: IBtree.build(sets, f) for sid, sets in groups.items()})
    return dep


def descriptor(sid, rect, grid):
    return SourceDescriptor.from_root(sid, "inproc", grid, rect, 1)


def test_first_registration_and_root_cover(grid6):
    c = Center()
    d0 = descriptor("a", (0, 0, 9, 9), grid6)
    c.register_source(d0)
    assert c.index.root.rect == d0.mbr_deg
    for i, rect in enumerate([(20, 0, 30, 5), (40, 40, 63, 63), (5, 50, 8, 60), (33, 10, 35, 12)]):
        c.register_source(descriptor(f"b{i}", rect, grid6))
    assert len(c.index.leaves()) == 5
    for d in c.sources.values():
        assert rect_contains(c.index.root.rect, d.mbr_deg)
    c.close()


def test_registration_errors(grid6):
    c = Center()
    c.register_source(descriptor("a", (0, 0, 9, 9), grid6))
    with pytest.raises(DuplicateSourceError):
        c.register_source(descriptor("a", (10, 10, 19, 19), grid6))
    flat = SourceDescriptor("z", "x", grid6, (0, 0, 0, 0), (1.0, 1.0, 1.0, 2.0), (1.0, 1.5), 0.5, 1)
    with pytest.raises(InvalidParameterError):
        c.register_source(flat)
    c.close()


def test_outside_query_has_no_candidates_and_no_traffic(grid6, rng):
    dep = center_for(strip_corpus(rng, grid6, 2, 5))
    c = dep.center
    c.reset_meters()
    far = Query([(-40.0, -40.0)])
    assert c.candidate_sources(far.mbr_deg, "miq") == []
    r = c.global_miq(far, 5)
    assert r.entries == [] and r.candidates == []
    m = c.global_mcqc(far, 2.0, 3)
    assert m.source_id is None and m.result.truncated
    assert c.comm_report()["total_bytes"] == 0
    dep.close()


def linear_scan(descs, qmbr, mode, delta):
    qp = ((qmbr[0] + qmbr[2]) / 2, (qmbr[1] + qmbr[3]) / 2)
    qr = 0.5 * math.hypot(qmbr[2] - qmbr[0], qmbr[3] - qmbr[1])
    out = []
    for d in descs:
        if mode == "miq":
            ok = rect_intersects(d.mbr_deg, qmbr)
        else:
            ok = raw_lower_bound(d.pivot_deg, d.radius_deg, qp, qr) <= delta_degrees(delta, d.grid)
        if ok:
            out.append(d.source_id)
    return sorted(out)


def test_routing_equals_linear_scan(rng):
    for trial in range(60):
        descs = []
        for i in range(int(rng.integers(1, 12))):
            theta = int(rng.integers(4, 8))
            g = GridConfig(float(rng.uniform(-20, 0)), float(rng.uniform(-20, 0)), 40.0, 40.0, theta)
            side = g.side
            c0, r0 = (int(v) for v in rng.integers(0, side - 1, 2))
            c1, r1 = int(rng.integers(c0, side)), int(rng.integers(r0, side))
            descs.append(descriptor(f"s{i:02d}", (c0, r0, c1, r1), g))
        index = GlobalIndex(descs)
        for _ in range(20):
            lon, lat = rng.uniform(-25, 25, 2)
            w, h = rng.exponential(3, 2)
            qmbr = (lon, lat, lon + w, lat + h)
            assert index.route(qmbr, "miq") == linear_scan(descs, qmbr, "miq", 0)
            delta = float(rng.choice([0, 1, 5, 20]))
            assert index.route(qmbr, "mcqc", delta) == linear_scan(descs, qmbr, "mcqc", delta)


def test_route_rejects_bad_input(grid6):
    index = GlobalIndex([descriptor("a", (0, 0, 3, 3), grid6)])
    with pytest.raises(InvalidParameterError):
        index.route((5, 5, 1, 1), "miq")
    with pytest.raises(InvalidParameterError):
        index.route((0, 0, 1, 1), "knn")


def test_routing_soundness(grid6):
    rng = np.random.default_rng(99)
    for _ in range(10):
        groups = strip_corpus(rng, grid6, 4, 6)
        dep = center_for(groups)
        everything = [s for sets in groups.values() for s in sets]
        owner = {s.dataset_id: sid for sid, sets in groups.items() for s in sets}
        for _ in range(10):
            q = random_query(rng, everything, grid6, max_cells=30)
            query = Query.from_set(q)
            cands = set(dep.center.candidate_sources(query.mbr_deg, "miq"))
            for did, score in brute_miq(everything, q, len(everything)).entries:
                assert owner[did] in cands
            delta = float(rng.choice([0, 2, 6]))
            cands = set(dep.center.candidate_sources(query.mbr_deg, "mcqc", delta))
            for s in everything:
                if set_distance(s, q) <= delta:
                    assert owner[s.dataset_id] in cands
        dep.close()


def test_clip_cases(grid6):
    src = descriptor("a", (10, 10, 19, 19), grid6)
    inside = mkset("q", [(11, 11), (15, 12)], grid6)
    assert clip_query(inside, src, "miq").cell_list() == inside.cell_list()
    assert clip_query(mkset("q", [(40, 40)], grid6), src, "miq") is None
    half = mkset("q", [(8, 12), (12, 12), (19, 19), (20, 19)], grid6)
    assert clip_query(half, src, "miq") == mkset("query", [(12, 12), (19, 19)], grid6)
    assert clip_query(half, src, "mcqc").cell_list() == half.cell_list()
    with pytest.raises(InvalidParameterError):
        clip_query(half, src, "knn")


def test_clip_invariance(grid6, rng):
    for _ in range(30):
        sets = random_corpus(rng, grid6, 20, kind="mixed", max_cells=30)
        tree = IBtree.build(sets, 4)
        d = descriptor("a", tree.root.rect, grid6)
        q = random_query(rng, sets, grid6, max_cells=60)
        part = clip_query(q, d, "miq")
        full = search(tree, q, 5)
        assert (search(tree, part, 5) if part is not None else full) == full
        if part is None:
            assert full.entries == []


def test_one_candidate_equals_local(grid6, rng):
    groups = strip_corpus(rng, grid6, 2, 8)
    trees = {sid: IBtree.build(sets, 4) for sid, sets in groups.items()}
    dep = deploy(trees)
    q = random_query(rng, groups["s0"], grid6, max_cells=20).clip((0, 0, 31, 63))
    assert dep.center.candidate_sources(Query.from_set(q).mbr_deg, "miq") == ["s0"]
    g = dep.center.global_miq(q, 4)
    assert [(d, s) for _, d, s in g.entries] == search(trees["s0"], q, 4).entries
    assert {sid for sid, _, _ in g.entries} <= {"s0"}
    m = dep.center.global_mcqc(q, 0.0, 3)
    if m.candidates == ["s0"]:
        assert m.result == gadg(trees["s0"], build_graph(trees["s0"], 0.0), q, 0.0, 3)
    dep.close()


def test_partition_invariance_small(grid6, rng):
    for _ in range(5):
        groups = strip_corpus(rng, grid6, 4, 6)
        everything = [s for sets in groups.values() for s in sets]
        split = deploy({sid: IBtree.build(sets, 3) for sid, sets in groups.items()})
        whole = deploy({"all": IBtree.build(everything, 3)})
        for _ in range(10):
            q = random_query(rng, everything, grid6, max_cells=40)
            a = split.center.global_miq(q, 6)
            b = whole.center.global_miq(q, 6)
            assert a.scores() == b.scores() == brute_miq(everything, q, 6).scores()
            assert [d for _, d, _ in a.entries] == [d for _, d, _ in b.entries]
        split.close()
        whole.close()


def test_mcqc_dominating_source_wins(grid6):
    q = mkset("q", [(0, 0), (1, 0)], grid6)
    weak = [mkset("w1", [(1, 0), (2, 0)], grid6)]
    strong = [mkset("t1", [(1, 0), (2, 0), (3, 0)], grid6), mkset("t2", [(3, 1), (4, 1), (5, 1)], grid6)]
    dep = deploy({"weak": IBtree.build(weak, 2), "strong": IBtree.build(strong, 2)})
    m = dep.center.global_mcqc(q, 1.0, 2)
    assert m.source_id == "strong"
    assert m.result.selected == [("t1", 2), ("t2", 3)]
    assert m.candidates == ["strong", "weak"]
    dep.close()


def test_mcqc_nothing_connected(grid6):
    q = mkset("q", [(0, 0)], grid6)
    dep = deploy({"a": IBtree.build([mkset("x", [(20, 20)], grid6), mkset("y", [(22, 22)], grid6)], 2)})
    # routed (the degree-space bound cannot rule it out) but 28.3 cells away
    m = dep.center.global_mcqc(q, 27.0, 2)
    assert m.candidates == ["a"]
    assert m.source_id is None
    assert m.result == McqcResult(truncated=True)
    dep.close()


def test_merge_and_pick_tie_breaks():
    merged = merge_topk({"b": [("x", 3), ("y", 1)], "a": [("x", 3), ("z", 2)]}, 3)
    assert merged == [("a", "x", 3), ("b", "x", 3), ("a", "z", 2)]
    r = McqcResult([("d", 4)], 4, False)
    assert pick_mcqc({"b": r, "a": McqcResult([("e", 4)], 4, False)})[0] == "a"
    assert pick_mcqc({"a": McqcResult(truncated=True), "b": r}) == ("b", r)
    assert pick_mcqc({}) == (None, McqcResult(truncated=True))


def test_heterogeneous_grids():
    coarse = GridConfig(0.0, 0.0, 64.0, 64.0, 5)
    fine = GridConfig(0.0, 0.0, 64.0, 64.0, 7)
    rng = np.random.default_rng(5)
    pts_a = [rng.uniform(0, 30, (40, 2)) for _ in range(6)]
    pts_b = [rng.uniform(20, 60, (40, 2)) for _ in range(6)]
    trees = {
        "a": IBtree.build([rasterize(p, coarse, f"a{i}") for i, p in enumerate(pts_a)], 2),
        "b": IBtree.build([rasterize(p, fine, f"b{i}") for i, p in enumerate(pts_b)], 2),
    }
    dep = deploy(trees)
    assert dep.center.grid == fine
    qpts = rng.uniform(10, 40, (60, 2))
    g = dep.center.global_miq(Query(qpts), 12)
    expected = {}
    for sid, grid in (("a", coarse), ("b", fine)):
        for did, s in search(trees[sid], rasterize(qpts, grid, "q"), 12).entries:
            expected[(sid, did)] = s
    ranked = sorted(expected.items(), key=lambda e: (-e[1], e[0][1], e[0][0]))[:12]
    assert g.entries == [(sid, did, s) for (sid, did), s in ranked]
    dep.close()


def test_corridor_spanning_two_sources():
    """A bus line running from one jurisdiction into the next finds the lines it joins in both."""
    grid = GridConfig(-78.0, 38.0, 2.0, 2.0, 8)

    def line(lon0, lon1, lat, n=60):
        return [(lat, lon) for lon in np.linspace(lon0, lon1, n)]

    dc = [rasterize(line(-77.45, -77.25, 38.9), grid, "dc-metro"),
          rasterize(line(-77.4, -77.3, 38.7), grid, "dc-parks")]
    md = [rasterize(line(-77.19, -76.95, 38.9), grid, "md-bus-12"),
          rasterize(line(-77.1, -77.0, 38.905), grid, "md-bus-7"),
          rasterize(line(-77.15, -76.95, 39.3), grid, "md-rail")]
    dep = deploy({"dc": IBtree.build(dc, 2), "maryland": IBtree.build(md, 2)})
    q = Query(line(-77.4, -77.0, 38.9, 200))
    assert dep.center.candidate_sources(q.mbr_deg, "miq") == ["dc", "maryland"]
    g = dep.center.global_miq(q, 3)
    ref = brute_miq(dc + md, q.on_grid(grid), 3)
    assert [(d, s) for _, d, s in g.entries] == ref.entries
    assert g.entries[0][:2] == ("maryland", "md-bus-12")
    assert {sid for sid, _, _ in g.entries} == {"dc", "maryland"}
    dep.close()


class BrokenLink(InProcessLink):
    def request(self, frame):
        raise ConnectionError("link down")


def test_failed_source_raises_with_partial(grid6, rng):
    groups = strip_corpus(rng, grid6, 2, 5)
    c = Center()
    c.connect(InProcessLink(DataSource("s0", IBtree.build(groups["s0"], 3))))
    c.connect(BrokenLink(DataSource("s1", IBtree.build(groups["s1"], 3))))
    q = Query.from_set(SpatialSet.from_cells("q", [s.cell_list()[0] for sets in groups.values() for s in sets], grid6))
    with pytest.raises(PartialResultError) as info:
        c.global_miq(q, 3)
    assert set(info.value.failed) == {"s1"}
    assert isinstance(info.value.partial, GlobalTopK)
    assert {sid for sid, _, _ in info.value.partial.entries} <= {"s0"}
    with pytest.raises(PartialResultError):
        c.global_mcqc(q, 1.0, 2)
    c.close()


def test_traffic_matches_meter(grid6, rng):
    dep = center_for(strip_corpus(rng, grid6, 3, 5))
    c = dep.center
    c.reset_meters()
    everything = [s for src in dep.sources.values() for s in (src.tree.get(d) for d in src.tree.directory)]
    q = random_query(rng, everything, grid6, max_cells=40)
    r = c.global_miq(q, 5)
    rep = c.comm_report()
    assert sum(tx for tx, _ in r.traffic.values()) == sum(v["bytes"] for v in rep["tx"].values())
    assert sum(rx for _, rx in r.traffic.values()) == sum(v["bytes"] for v in rep["rx"].values())
    dep.close()


def test_live_query_follows_updates_and_late_sources(grid6):
    from msds.dynamic import UpdateEvent

    a = DataSource("a", IBtree.build([mkset("a1", [(0, 0), (1, 0)], grid6)], 2))
    b = DataSource("b", IBtree.build([mkset("b1", [(40, 40)], grid6)], 2))
    c = Center()
    c.connect(InProcessLink(a))
    c.connect(InProcessLink(b))
    q = mkset("q", [(0, 0), (1, 0), (2, 0), (3, 0)], grid6)
    lid = c.register_live(q, "miq", 3)
    assert c.live_result(lid).candidates == ["a"]
    # b grows into the query region: it re-registers and the center brings it in
    b.apply_batch([UpdateEvent.from_set("insert", mkset("b2", [(1, 0), (2, 0), (3, 0)], grid6), 1)])
    c.wait_background()
    assert c.live_result(lid).entries == c.global_miq(q, 3).entries == [("b", "b2", 3), ("a", "a1", 2)]
    c.close()
