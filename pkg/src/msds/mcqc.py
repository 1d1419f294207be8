"""Greedy top-k maximum coverage under a delta-connectivity constraint.

Both solvers grow a result set from the query, each round adding the
dataset that is within ``delta`` of the current union and brings the most
new cells (ties go to the smaller dataset id).

* :func:`gasm` re-descends the IBtree every round, probing with a merged
  node whose MBR covers the query and all picks so far.
* :func:`gadg` descends once to find the datasets connected to the query,
  then grows the candidate pool from dataset-graph adjacency. Since the
  distance to a union is the minimum over its members, the pool is exactly
  the set GASM would consider and the outputs coincide.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import IncompatibleGridError, InvalidParameterError
from .geometry import Rect, SpatialSet, coverage_increment, rect_pivot, rect_radius, rect_union, within_distance
from .graph import DatasetGraph, connected_to
from .ibtree import IBtree, LeafNode, leaves_within, raw_lower_bound

_QUERY_ID = "\x00query"


@dataclass
class MergedNode:
    rect: Rect
    covered: set[int]
    members: list[str] = field(default_factory=list)

    @classmethod
    def from_query(cls, query: SpatialSet) -> "MergedNode":
        return cls(query.mbr, set(query.cells.tolist()))

    @property
    def pivot(self) -> tuple[float, float]:
        return rect_pivot(self.rect)

    @property
    def radius(self) -> float:
        return rect_radius(self.rect)

    def merge(self, s: SpatialSet) -> None:
        self.rect = rect_union(self.rect, s.mbr)
        self.covered.update(s.cells.tolist())
        self.members.append(s.dataset_id)


@dataclass
class McqcResult:
    selected: list[tuple[str, int]] = field(default_factory=list)
    total_coverage: int = 0
    truncated: bool = False

    def ids(self) -> list[str]:
        return [d for d, _ in self.selected]

    def increments(self) -> list[int]:
        return [g for _, g in self.selected]


def _validate(tree: IBtree, query: SpatialSet, delta: float, k: int) -> None:
    if k < 1:
        raise InvalidParameterError(f"k must be >= 1, got {k}")
    if delta < 0:
        raise InvalidParameterError(f"delta must be non-negative, got {delta!r}")
    if query.grid != tree.grid:
        raise IncompatibleGridError("query and index use different grids")


def find_connect_set(tree: IBtree, probe, delta: float) -> list[LeafNode]:
    """Leaves that may contain a dataset within ``delta`` of ``probe`` (pivot/radius)."""
    return leaves_within(tree, probe.pivot, probe.radius, delta)


def _better(g: int, did: str, best_g: int, best_id: str | None) -> bool:
    return g > best_g or (g == best_g and best_id is not None and did < best_id)


def gasm(tree: IBtree, query: SpatialSet, delta: float, k: int) -> McqcResult:
    _validate(tree, query, delta, k)
    merged = MergedNode.from_query(query)
    parts: list[SpatialSet] = [query]
    chosen: set[str] = set()
    result = McqcResult()
    # per dataset: connected to the union yet, and how many parts were already checked
    linked: dict[str, bool] = {}
    checked: dict[str, int] = {}

    def connected(s: SpatialSet) -> bool:
        did = s.dataset_id
        if linked.get(did):
            return True
        for i in range(checked.get(did, 0), len(parts)):
            p = parts[i]
            if raw_lower_bound(s.pivot, s.radius, p.pivot, p.radius) <= delta and within_distance(s, p, delta):
                linked[did] = True
                return True
        checked[did] = len(parts)
        return False

    while len(chosen) < k:
        tau = -1
        best: SpatialSet | None = None
        for leaf in find_connect_set(tree, merged, delta):
            # ties at tau can still win on id, so only a strictly smaller leaf is skipped
            if len(leaf.inv) < tau:
                continue
            for child in leaf.children:
                s = child.set
                did = s.dataset_id
                if did in chosen or len(s) < tau:
                    continue
                if not connected(s):
                    continue
                g = coverage_increment(s, merged.covered)
                if best is None or _better(g, did, tau, best.dataset_id):
                    best, tau = s, g
        if best is None:
            result.truncated = True
            break
        chosen.add(best.dataset_id)
        result.selected.append((best.dataset_id, tau))
        merged.merge(best)
        parts.append(best)
    result.total_coverage = len(merged.covered)
    return result


def gadg(tree: IBtree, graph: DatasetGraph, query: SpatialSet, delta: float, k: int) -> McqcResult:
    _validate(tree, query, delta, k)
    if graph.delta != delta:
        raise InvalidParameterError(f"graph was built for delta={graph.delta}, query asks delta={delta}")
    graph.check_fresh(tree)

    merged = MergedNode.from_query(query)
    probe = query.with_id(_QUERY_ID)
    # candidate id -> upper bound on its increment (shrinks as picks overlap it)
    pool: dict[str, int] = {did: len(s) for did, s in connected_to(tree, probe, delta)}
    chosen: set[str] = set()
    result = McqcResult()

    while len(chosen) < k:
        order = sorted(pool.items(), key=lambda e: (-e[1], e[0]))
        tau = -1
        best_id: str | None = None
        for did, ub in order:
            if ub < tau:
                break
            g = coverage_increment(tree.get(did), merged.covered)
            if best_id is None or _better(g, did, tau, best_id):
                best_id, tau = did, g
        if best_id is None:
            result.truncated = True
            break
        chosen.add(best_id)
        del pool[best_id]
        result.selected.append((best_id, tau))
        merged.merge(tree.get(best_id))
        for other, w in graph.adj.get(best_id, {}).items():
            if other in chosen:
                continue
            bound = graph.sizes[other] - w
            cur = pool.get(other)
            pool[other] = bound if cur is None else min(cur, bound)
    result.total_coverage = len(merged.covered)
    return result
