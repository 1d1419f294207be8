"""Dataset graph: delta-connectivity between every pair of datasets in a source.

Nodes carry set sizes; an undirected edge joins two datasets whose set
distance is at most ``delta`` and is weighted by their shared cell count.
Construction and maintenance use the IBtree to discard far-away subtrees
with the pivot/radius distance lower bound before any exact check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .codec import Reader, Writer
from .errors import DatasetNotFoundError, FormatError, InvalidParameterError, StaleGraphError
from .geometry import SpatialSet, intersection_count, within_distance
from .ibtree import IBtree, leaves_within, raw_lower_bound

MAGIC = b"MSDG"
FORMAT_VERSION = 1


def node_distance_lb(a, b) -> float:
    """Lower bound on the set distance of two nodes exposing ``pivot`` and ``radius``."""
    return max(raw_lower_bound(a.pivot, a.radius, b.pivot, b.radius), 0.0)


@dataclass
class DatasetGraph:
    delta: float
    fingerprint: int
    generation: int
    sizes: dict[str, int] = field(default_factory=dict)
    adj: dict[str, dict[str, int]] = field(default_factory=dict)
    # exact connectivity checks performed (observability for the per-node candidate count)
    verified_pairs: int = field(default=0, compare=False)

    def __len__(self):
        return len(self.sizes)

    def neighbors(self, dataset_id: str) -> list[tuple[str, int]]:
        return sorted(self.adj.get(dataset_id, {}).items())

    def weight(self, a: str, b: str) -> int | None:
        return self.adj.get(a, {}).get(b)

    def edges(self) -> list[tuple[str, str, int]]:
        return sorted((a, b, w) for a, nb in self.adj.items() for b, w in nb.items() if a < b)

    def edge_count(self) -> int:
        return sum(len(nb) for nb in self.adj.values()) // 2

    def _drop_node_edges(self, dataset_id: str) -> None:
        for other in self.adj.pop(dataset_id, {}):
            self.adj[other].pop(dataset_id, None)
        self.adj[dataset_id] = {}

    def _link(self, a: str, b: str, w: int) -> None:
        self.adj.setdefault(a, {})[b] = w
        self.adj.setdefault(b, {})[a] = w

    def check_fresh(self, tree: IBtree) -> None:
        if self.fingerprint != tree.grid.fingerprint():
            raise StaleGraphError("graph was built on a different grid")
        if self.generation != tree.generation:
            raise StaleGraphError(
                f"graph generation {self.generation} does not match index generation {tree.generation}"
            )
        if len(self.sizes) != len(tree):
            raise StaleGraphError("graph and index hold different dataset counts")


def connected_to(tree: IBtree, probe: SpatialSet, delta: float, skip=frozenset()) -> list[tuple[str, SpatialSet]]:
    """Datasets in ``tree`` within ``delta`` of ``probe`` (exact), excluding ids in ``skip``."""
    out = []
    for leaf in leaves_within(tree, probe.pivot, probe.radius, delta):
        for child in leaf.children:
            did = child.id
            if did in skip or did == probe.dataset_id:
                continue
            s = child.set
            if raw_lower_bound(s.pivot, s.radius, probe.pivot, probe.radius) > delta:
                continue
            if within_distance(s, probe, delta):
                out.append((did, s))
    return out


def build_graph(tree: IBtree, delta: float) -> DatasetGraph:
    if delta < 0 or math.isnan(delta):
        raise InvalidParameterError(f"delta must be non-negative, got {delta!r}")
    g = DatasetGraph(float(delta), tree.grid.fingerprint(), tree.generation)
    ids = sorted(tree.directory)
    for did in ids:
        g.sizes[did] = len(tree.directory[did].set)
        g.adj[did] = {}
    visited: set[str] = set()
    for did in ids:
        s = tree.directory[did].set
        for other, t in connected_to(tree, s, delta, skip=visited):
            g.verified_pairs += 1
            g._link(did, other, intersection_count(s, t))
        visited.add(did)
    return g


def update_graph(graph: DatasetGraph, tree: IBtree, changed: SpatialSet) -> None:
    """Recompute every edge incident to ``changed`` (already applied to ``tree``)."""
    did = changed.dataset_id
    if did not in tree:
        raise DatasetNotFoundError(did)
    s = tree.get(did)
    graph._drop_node_edges(did)
    graph.sizes[did] = len(s)
    for other, t in connected_to(tree, s, graph.delta):
        graph.verified_pairs += 1
        graph._link(did, other, intersection_count(s, t))
    graph.generation = tree.generation


def save_graph(graph: DatasetGraph) -> bytes:
    ids = sorted(graph.sizes)
    index = {d: i for i, d in enumerate(ids)}
    w = Writer().raw(MAGIC).u16(FORMAT_VERSION).f64(graph.delta).u64(graph.fingerprint).u64(graph.generation)
    w.u32(len(ids))
    for d in ids:
        w.string(d).u32(graph.sizes[d])
    for i, d in enumerate(ids):
        nb = sorted((index[o], wt) for o, wt in graph.adj.get(d, {}).items() if index[o] > i)
        w.sorted_ids(j for j, _ in nb)
        for _, wt in nb:
            w.u32(wt)
    return w.getvalue()


def load_graph(data: bytes, tree: IBtree | None = None) -> DatasetGraph:
    """Decode a graph snapshot; with ``tree`` given, refuse a graph that does not match it."""
    r = Reader(data)
    if r.remaining() == 0:
        raise FormatError("empty graph snapshot")
    if r.take(4) != MAGIC:
        raise FormatError("not a graph snapshot (bad magic)")
    version = r.u16()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported graph format version {version}")
    g = DatasetGraph(r.f64(), r.u64(), r.u64())
    n = r.u32()
    if n > r.remaining():
        raise FormatError("node count exceeds input size")
    ids = []
    for _ in range(n):
        d = r.string()
        ids.append(d)
        g.sizes[d] = r.u32()
        g.adj[d] = {}
    if ids != sorted(ids) or len(set(ids)) != len(ids):
        raise FormatError("node table not strictly sorted")
    for i, d in enumerate(ids):
        nbrs = r.sorted_ids()
        for j in nbrs:
            if j <= i or j >= n:
                raise FormatError("edge references an invalid node")
            g._link(d, ids[j], r.u32())
    r.expect_end()
    if tree is not None:
        g.check_fresh(tree)
        for d in ids:
            if d not in tree or len(tree.get(d)) != g.sizes[d]:
                raise StaleGraphError(f"dataset {d!r} differs between graph and index")
    return g
