"""Live queries kept current under streams of dataset inserts and updates.

A live query's snapshot must always equal a fresh static search on the
current corpus. Each update is first run through cheap filters that prove
it cannot change the snapshot; only unfiltered updates cost an exact check
(MIQ) or a local greedy re-run (MCQC).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

from .errors import InvalidParameterError
from .geometry import GridConfig, SpatialSet, intersection_count, rasterize, rect_intersects, rect_pivot, rect_radius, rect_union
from .ibtree import raw_lower_bound
from .mcqc import McqcResult, gadg
from .miq import TopKResults, mbr_bound, search

if TYPE_CHECKING:
    from .source import DataSource

KINDS = ("insert", "update")


@dataclass(frozen=True)
class UpdateEvent:
    """One insert or update. Carry either raw ``points`` (lat, lon) or grid ``cells``."""

    kind: str
    dataset_id: str
    seq: int
    cells: tuple[int, ...] | None = None
    points: Sequence[tuple[float, float]] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown update kind {self.kind!r}")
        if (self.cells is None) == (self.points is None):
            raise InvalidParameterError("an update carries exactly one of cells or points")

    @classmethod
    def from_set(cls, kind: str, s: SpatialSet, seq: int) -> "UpdateEvent":
        return cls(kind, s.dataset_id, seq, cells=tuple(s.cell_list()))

    def to_set(self, grid: GridConfig) -> SpatialSet:
        if self.cells is not None:
            return SpatialSet.from_cells(self.dataset_id, self.cells, grid)
        return rasterize(self.points, grid, self.dataset_id)


@dataclass
class LiveQuery:
    query_id: int
    query: SpatialSet
    mode: str  # "miq" | "mcqc"
    k: int
    delta: float = 0.0
    snapshot: TopKResults | McqcResult | None = None
    owner: object = field(default=None, repr=False, compare=False)
    # full re-evaluations after registration (filters avoided the rest)
    reruns: int = field(default=0, compare=False)
    exact_checks: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.mode not in ("miq", "mcqc"):
            raise InvalidParameterError(f"unknown query mode {self.mode!r}")
        if self.k < 1:
            raise InvalidParameterError(f"k must be >= 1, got {self.k}")
        if self.mode == "mcqc" and self.delta < 0:
            raise InvalidParameterError(f"delta must be non-negative, got {self.delta!r}")

    @property
    def kth_score(self) -> int:
        """MIQ: score of the k-th entry (0 while fewer than k)."""
        e = self.snapshot.entries
        return e[-1][1] if len(e) >= self.k else 0

    @property
    def coverage(self) -> int:
        return self.snapshot.total_coverage

    def entries(self) -> list[tuple[str, int]]:
        if self.mode == "miq":
            return list(self.snapshot.entries)
        return list(self.snapshot.selected)


def static_answer(source: "DataSource", lq: LiveQuery):
    if lq.mode == "miq":
        return search(source.tree, lq.query, lq.k)
    return gadg(source.tree, source.graph_for(lq.delta), lq.query, lq.delta, lq.k)


def _miq_key(did: str, score: int):
    return (-score, did)


def refresh_miq(source: "DataSource", lq: LiveQuery, s: SpatialSet) -> bool:
    """Bring an MIQ snapshot up to date after ``s`` was written. Returns True if it changed."""
    q = lq.query
    did = s.dataset_id
    entries = lq.snapshot.entries
    current = dict(entries)
    if did in current:
        exact = intersection_count(q, s)
        lq.exact_checks += 1
        if exact >= current[did]:
            # it can only climb; nobody else moved
            current[did] = exact
            new = sorted(current.items(), key=lambda e: _miq_key(*e))
        else:
            lq.reruns += 1
            new = search(source.tree, q, lq.k).entries
    else:
        if not rect_intersects(s.mbr, q.mbr):
            return False
        ub = min(len(s), mbr_bound(q, s.mbr))
        if ub == 0:
            return False
        full = len(entries) >= lq.k
        if full and _miq_key(did, ub) > _miq_key(*entries[-1]):
            return False
        exact = intersection_count(q, s)
        lq.exact_checks += 1
        if exact == 0 or (full and _miq_key(did, exact) > _miq_key(*entries[-1])):
            return False
        current[did] = exact
        new = sorted(current.items(), key=lambda e: _miq_key(*e))[: lq.k]
    if new == entries:
        return False
    lq.snapshot = TopKResults(lq.k, new)
    return True


def refresh_mcqc(source: "DataSource", lq: LiveQuery, s: SpatialSet) -> bool:
    """Bring an MCQC snapshot up to date after ``s`` was written. Returns True if it changed."""
    snap: McqcResult = lq.snapshot
    did = s.dataset_id
    if did not in snap.ids():
        rect = lq.query.mbr
        for member in snap.ids():
            rect = rect_union(rect, source.tree.get(member).mbr)
        if raw_lower_bound(s.pivot, s.radius, rect_pivot(rect), rect_radius(rect)) > lq.delta:
            return False
        # |S_D| bounds its increment at every round; strictly below every winner it never wins
        if not snap.truncated and snap.selected and len(s) < min(snap.increments()):
            return False
    lq.reruns += 1
    new = gadg(source.tree, source.graph_for(lq.delta), lq.query, lq.delta, lq.k)
    if new == snap:
        return False
    lq.snapshot = new
    return True


def refresh(source: "DataSource", lq: LiveQuery, s: SpatialSet) -> bool:
    if lq.mode == "miq":
        return refresh_miq(source, lq, s)
    return refresh_mcqc(source, lq, s)


# Module-level entry points mirroring the source methods.


def register_live_query(source: "DataSource", query: SpatialSet, mode: str, k: int, delta: float = 0.0,
                        query_id: int | None = None) -> LiveQuery:
    return source.register_live_query(query, mode, k, delta, query_id=query_id)


def apply_update(source: "DataSource", event: UpdateEvent) -> list[LiveQuery]:
    return source.apply_update(event)


def comm_meter_report(node) -> dict:
    """Per-message-type frame and byte totals for a source or the center."""
    return node.comm_report()
