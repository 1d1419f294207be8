"""Synthetic multi-source corpora, scripted update streams and the benchmark runner.

Datasets are generated as point clouds in degrees so the same corpus can be
rasterized at any resolution. Each source owns one longitude strip of a
mid-latitude region and mixes three archetypes: clustered city points,
transit-like corridors and uniform scatter.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import statistics
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .config import RunConfig
from .coordinator import Center, GlobalMcqc, GlobalTopK, Query
from .corpus import world_grid
from .dynamic import UpdateEvent
from .geometry import GridConfig, rasterize
from .graph import build_graph
from .ibtree import IBtree
from .protocol import WireUpdate
from .source import DataSource
from .transport import InProcessLink, SourceServer, TCPLink, feed_updates

log = logging.getLogger(__name__)

REGION = (-80.0, 36.0, -70.0, 42.0)  # min_lon, min_lat, max_lon, max_lat
CSV_COLUMNS = ("param", "value", "mode", "build_ms", "search_ms", "bytes_tx", "bytes_rx", "result_hash")


# --- generation -------------------------------------------------------------------


def _strip(i: int, n: int, region=REGION):
    w = (region[2] - region[0]) / n
    return (region[0] + i * w, region[1], region[0] + (i + 1) * w, region[3])


def _clamp(pts: np.ndarray, box) -> np.ndarray:
    eps = 1e-7
    lat = np.clip(pts[:, 0], box[1], box[3] - eps)
    lon = np.clip(pts[:, 1], box[0], box[2] - eps)
    return np.column_stack((lat, lon))


def gen_points(rng: np.random.Generator, box, cities: np.ndarray, kind: str) -> np.ndarray:
    """One dataset as an (n, 2) array of (lat, lon) inside ``box``."""
    city = cities[int(rng.integers(0, len(cities)))]
    if kind == "clustered":
        n = int(rng.integers(20, 200))
        sigma = rng.uniform(0.03, 0.25)
        pts = city + rng.normal(0, sigma, (n, 2))
    elif kind == "corridor":
        n = int(rng.integers(30, 200))
        heading = rng.uniform(0, 2 * np.pi)
        turns = rng.normal(0, 0.25, n).cumsum()
        step = rng.uniform(0.01, 0.04)
        d = np.column_stack((np.sin(heading + turns), np.cos(heading + turns))) * step
        pts = city + rng.normal(0, 0.1, 2) + d.cumsum(axis=0)
    elif kind == "uniform":
        n = int(rng.integers(10, 150))
        half = rng.uniform(0.1, 0.5, 2)
        c = city + rng.normal(0, 0.3, 2)
        pts = c + rng.uniform(-1, 1, (n, 2)) * half
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    return _clamp(pts, box)


@dataclass
class Workload:
    """Per-source point datasets, query point sets and a scripted update stream."""

    seed: int
    boxes: dict[str, tuple]
    datasets: dict[str, dict[str, np.ndarray]]
    queries: list[np.ndarray]
    events: list[tuple[str, UpdateEvent]] = field(default_factory=list)

    @property
    def source_ids(self) -> list[str]:
        return sorted(self.datasets)

    def grid(self, theta: int) -> GridConfig:
        return world_grid(theta)

    def sets(self, theta: int, source_id: str | None = None):
        grid = self.grid(theta)
        ids = [source_id] if source_id else self.source_ids
        return {sid: [rasterize(p, grid, did) for did, p in sorted(self.datasets[sid].items())] for sid in ids}

    def build_trees(self, theta: int, f: int) -> dict[str, IBtree]:
        return {sid: IBtree.build(sets, f) for sid, sets in self.sets(theta).items()}


def make_workload(seed: int, n_sources: int = 5, n_datasets: int = 500, n_queries: int = 50,
                  n_events: int = 300, update_share: float = 0.7) -> Workload:
    rng = np.random.default_rng(seed)
    sids = [f"src{i}" for i in range(n_sources)]
    boxes = {sid: _strip(i, n_sources) for i, sid in enumerate(sids)}
    cities = {}
    for sid, box in boxes.items():
        lat = rng.uniform(box[1] + 0.5, box[3] - 0.5, 4)
        lon = rng.uniform(box[0] + 0.2, box[2] - 0.2, 4)
        cities[sid] = np.column_stack((lat, lon))
    kinds = ("clustered", "corridor", "uniform")
    datasets: dict[str, dict[str, np.ndarray]] = {sid: {} for sid in sids}
    width = len(str(n_datasets))
    for j in range(n_datasets):
        sid = sids[j % n_sources]
        kind = kinds[int(rng.integers(0, 3))]
        datasets[sid][f"{sid}-d{j:0{width}d}"] = gen_points(rng, boxes[sid], cities[sid], kind)

    queries = []
    everything = [(sid, did) for sid in sids for did in sorted(datasets[sid])]
    for _ in range(n_queries):
        sid, did = everything[int(rng.integers(0, len(everything)))]
        base = datasets[sid][did]
        keep = rng.random(len(base)) < rng.uniform(0.6, 1.0)
        pts = base[keep] if keep.any() else base[:1]
        queries.append(_clamp(pts + rng.normal(0, 0.02, pts.shape), REGION))

    wl = Workload(seed, boxes, datasets, queries)
    current = {sid: dict(d) for sid, d in datasets.items()}
    for seq in range(1, n_events + 1):
        sid = sids[int(rng.integers(0, n_sources))]
        if rng.random() < update_share:
            ids = sorted(current[sid])
            did = ids[int(rng.integers(0, len(ids)))]
            pts = current[sid][did]
            keep = rng.random(len(pts)) < rng.uniform(0.7, 1.0)
            pts = pts[keep] if keep.any() else pts[:1]
            m = int(rng.integers(0, 20))
            extra = pts[rng.integers(0, len(pts), m)] + rng.normal(0, 0.05, (m, 2))
            moved = np.vstack((pts, extra)) + rng.normal(0, 0.03, 2)
            new = _clamp(moved, boxes[sid])
            kind = "update"
        else:
            did = f"{sid}-n{seq:04d}"
            new = gen_points(rng, boxes[sid], cities[sid], kinds[int(rng.integers(0, 3))])
            kind = "insert"
        current[sid][did] = new
        wl.events.append((sid, UpdateEvent(kind, did, seq, points=new)))
    return wl


# --- deployment ---------------------------------------------------------------------


@dataclass
class Deployment:
    center: Center
    sources: dict[str, DataSource]
    servers: dict[str, SourceServer] = field(default_factory=dict)

    @property
    def transport(self) -> str:
        return "tcp" if self.servers else "inproc"

    def feed(self, source_id: str, events: list[UpdateEvent]) -> None:
        src = self.sources[source_id]
        if self.servers:
            wire = [WireUpdate(e.seq, e.kind, e.dataset_id, tuple(e.to_set(src.grid).cell_list())) for e in events]
            feed_updates(self.servers[source_id].address, wire)
        else:
            src.apply_batch(events)
        self.settle()

    def settle(self, timeout: float = 30.0) -> None:
        """Wait until the center has processed every frame the sources pushed."""
        self.center.wait_background()
        if not self.servers:
            return
        deadline = time.monotonic() + timeout
        while True:
            lag = [
                sid for sid, src in self.sources.items()
                if src.center_meter().count("tx") != self.center.links[sid].meter.count("rx")
            ]
            if not lag:
                break
            if time.monotonic() > deadline:
                raise TimeoutError(f"center did not catch up with {lag}")
            time.sleep(0.001)
        self.center.wait_background()

    def reset_meters(self) -> None:
        self.settle()
        self.center.reset_meters()
        for src in self.sources.values():
            src.reset_meters()

    def close(self) -> None:
        self.center.close()
        for s in self.servers.values():
            s.stop()


def deploy(trees: dict[str, IBtree], transport: str = "inproc", graphs: dict | None = None) -> Deployment:
    sources = {sid: DataSource(sid, t, (graphs or {}).get(sid, ())) for sid, t in sorted(trees.items())}
    center = Center()
    dep = Deployment(center, sources)
    for sid, src in sources.items():
        if transport == "tcp":
            server = SourceServer(src).start()
            dep.servers[sid] = server
            center.connect(TCPLink(server.address))
        elif transport == "inproc":
            center.connect(InProcessLink(src))
        else:
            raise ValueError(f"unknown transport {transport!r}")
    return dep


# --- running ---------------------------------------------------------------------------


def canonical(result) -> str:
    if isinstance(result, GlobalTopK):
        return "miq:" + ";".join(f"{s}/{d}={v}" for s, d, v in result.entries)
    if isinstance(result, GlobalMcqc):
        r = result.result
        body = ";".join(f"{d}+{g}" for d, g in r.selected)
        return f"mcqc:{result.source_id}:{body}:{r.total_coverage}:{int(r.truncated)}"
    raise TypeError(type(result))


def result_hash(results: Iterable) -> str:
    h = hashlib.sha256()
    for r in results:
        h.update(canonical(r).encode())
        h.update(b"\n")
    return h.hexdigest()[:16]


def run_queries(center: Center, queries: list[Query], cfg: RunConfig) -> list:
    if cfg.query == "miq":
        return [center.global_miq(q, cfg.k) for q in queries]
    return [center.global_mcqc(q, cfg.delta, cfg.k) for q in queries]


@dataclass
class ScriptRun:
    mode: str
    bytes_tx: int
    bytes_rx: int
    report: dict
    results: list
    search_ms: float
    deltas: int

    @property
    def total_bytes(self) -> int:
        return self.bytes_tx + self.bytes_rx

    @property
    def hash(self) -> str:
        return result_hash(self.results)


def batches(events: list[tuple[str, UpdateEvent]], size: int):
    """Chunk the stream; within a chunk, group per source keeping event order."""
    for i in range(0, len(events), size):
        per: dict[str, list[UpdateEvent]] = {}
        for sid, e in events[i:i + size]:
            per.setdefault(sid, []).append(e)
        yield sorted(per.items())


def run_script(wl: Workload, cfg: RunConfig, mode: str, transport: str | None = None,
               trees: dict[str, IBtree] | None = None) -> ScriptRun:
    """Replay the first ``cfg.beta`` events with live queries (dynamic) or
    re-querying after every batch (static). Meters cover everything after
    sources registered."""
    if mode not in ("static", "dynamic"):
        raise ValueError(f"mode must be static or dynamic, got {mode!r}")
    trees = trees if trees is not None else wl.build_trees(cfg.theta, cfg.f)
    dep = deploy(trees, transport or cfg.transport)
    try:
        center = dep.center
        dep.reset_meters()
        queries = [Query(q) for q in wl.queries[: cfg.n]]
        t0 = time.perf_counter()
        if mode == "dynamic":
            live = [center.register_live(q, cfg.query, cfg.k, cfg.delta) for q in queries]
        else:
            results = run_queries(center, queries, cfg)
        for group in batches(wl.events[: cfg.beta], cfg.batch):
            for sid, events in group:
                dep.feed(sid, events)
            if mode == "static":
                results = run_queries(center, queries, cfg)
        dep.settle()
        if mode == "dynamic":
            results = [center.live_result(i) for i in live]
        elapsed = (time.perf_counter() - t0) * 1000
        report = center.comm_report()
        deltas = sum(v["count"] for t, v in report["rx"].items() if t == "RESULT_DELTA")
        bytes_tx = sum(v["bytes"] for v in report["tx"].values())
        bytes_rx = sum(v["bytes"] for v in report["rx"].values())
        return ScriptRun(mode, bytes_tx, bytes_rx, report, results, elapsed, deltas)
    finally:
        dep.close()


def _median_ms(fn, reps: int):
    times, out = [], None
    for _ in range(reps):
        t0 = time.perf_counter()
        out = fn()
        times.append((time.perf_counter() - t0) * 1000)
    return statistics.median(times), out


def bench(cfg: RunConfig, workload: Workload | None = None) -> list[dict]:
    """Sweep ``cfg.sweep`` over ``cfg.values`` with every other parameter fixed."""
    if cfg.sources:
        raise ValueError("bench drives its own synthetic sources; leave 'sources' empty")
    wl = workload or make_workload(cfg.seed, cfg.n_sources, cfg.datasets, max(cfg.n, 50),
                                   max(int(cfg.values[-1]) if cfg.sweep == "beta" else 0, cfg.beta))
    rows = []
    for value in cfg.values:
        c = cfg.with_param(cfg.sweep, value)
        if c.query == "mcqc":
            def build():
                trees = wl.build_trees(c.theta, c.f)
                return trees, {sid: [build_graph(t, c.delta)] for sid, t in trees.items()}
        else:
            def build():
                return wl.build_trees(c.theta, c.f), {}
        build_ms, (trees, graphs) = _median_ms(build, c.reps)
        if c.sweep == "beta":
            modes = ("static", "dynamic") if c.mode == "both" else (c.mode,)
            for mode in modes:
                runs = [run_script(wl, c, mode, trees=wl.build_trees(c.theta, c.f)) for _ in range(c.reps)]
                run = runs[-1]
                rows.append(_row(c, value, mode, build_ms, statistics.median(r.search_ms for r in runs),
                                 run.bytes_tx, run.bytes_rx, run.hash))
            continue
        dep = deploy(trees, c.transport, graphs)
        try:
            queries = [Query(q) for q in wl.queries[: c.n]]

            def once():
                dep.reset_meters()
                return run_queries(dep.center, queries, c)

            search_ms, results = _median_ms(once, c.reps)
            rep = dep.center.comm_report()
            tx = sum(v["bytes"] for v in rep["tx"].values())
            rx = sum(v["bytes"] for v in rep["rx"].values())
        finally:
            dep.close()
        rows.append(_row(c, value, "static", build_ms, search_ms, tx, rx, result_hash(results)))
    return rows


def _row(cfg: RunConfig, value, mode, build_ms, search_ms, tx, rx, digest) -> dict:
    v = float(value)
    return {
        "param": cfg.sweep,
        "value": int(v) if v.is_integer() else v,
        "mode": mode,
        "build_ms": round(build_ms, 3),
        "search_ms": round(search_ms, 3),
        "bytes_tx": tx,
        "bytes_rx": rx,
        "result_hash": digest,
    }


def write_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        w.writerows(rows)
