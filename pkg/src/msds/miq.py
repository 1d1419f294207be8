"""Top-k maximum intersection search over an IBtree.

Branch and bound: subtrees whose MBR misses the query MBR are skipped,
each reached leaf gets a cheap lower/upper bound on the intersection of its
children with the query, and only leaves whose upper bound can still reach
the current k-th score are opened and scored exactly from their posting
lists.
"""
from __future__ import annotations

import heapq
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import IncompatibleGridError, InvalidParameterError
from .geometry import Rect, SpatialSet, rect_intersects
from .ibtree import IBtree, LeafNode


@dataclass(frozen=True)
class LeafBounds:
    leaf: LeafNode = field(repr=False)
    lb: int
    ub: int
    mbr: int


@dataclass
class TopKResults:
    k: int
    entries: list[tuple[str, int]] = field(default_factory=list)

    def ids(self) -> list[str]:
        return [d for d, _ in self.entries]

    def scores(self) -> list[int]:
        return [s for _, s in self.entries]

    def __len__(self):
        return len(self.entries)


def rank(scores: dict[str, int], k: int) -> list[tuple[str, int]]:
    """Canonical order: intersection descending, then dataset id ascending; zeros dropped."""
    items = [(d, s) for d, s in scores.items() if s > 0]
    return heapq.nsmallest(k, items, key=lambda e: (-e[1], e[0]))


def _cells_in_rect(query: SpatialSet, rect: Rect) -> np.ndarray:
    mask = (
        (query.cols >= rect[0]) & (query.cols <= rect[2])
        & (query.rows >= rect[1]) & (query.rows <= rect[3])
    )
    return query.cells[mask]


def mbr_bound(query: SpatialSet, node_rect: Rect) -> int:
    """Query cells falling inside the overlap of the query MBR and ``node_rect``."""
    if not rect_intersects(query.mbr, node_rect):
        return 0
    return int(_cells_in_rect(query, node_rect).size)


def leaf_bounds(query: SpatialSet, leaf: LeafNode) -> LeafBounds:
    """Upper bound: overlap cells that are posting keys. Lower bound: overlap cells
    whose posting list covers every child of the leaf."""
    if not rect_intersects(query.mbr, leaf.rect):
        return LeafBounds(leaf, 0, 0, 0)
    cells = _cells_in_rect(query, leaf.rect).tolist()
    inv = leaf.inv
    full = len(leaf.children)
    ub = lb = 0
    for c in cells:
        pl = inv.get(c)
        if pl is not None:
            ub += 1
            if len(pl) == full:
                lb += 1
    return LeafBounds(leaf, lb, ub, len(cells))


def exact_leaf_scores(query: SpatialSet, leaf: LeafNode) -> Counter:
    counts: Counter = Counter()
    inv = leaf.inv
    for c in _cells_in_rect(query, leaf.rect).tolist():
        pl = inv.get(c)
        if pl:
            counts.update(pl)
    return counts


def search(tree: IBtree, query: SpatialSet, k: int, trace: list | None = None) -> TopKResults:
    """Top-k datasets by ``|S_Q & S_D|``. Pass a list as ``trace`` to collect the
    :class:`LeafBounds` of every leaf whose MBR overlaps the query."""
    if k < 1:
        raise InvalidParameterError(f"k must be >= 1, got {k}")
    if query.grid != tree.grid:
        raise IncompatibleGridError("query and index use different grids")
    if tree.root is None:
        return TopKResults(k)

    qrect = query.mbr
    queued: list[LeafBounds] = []
    # k largest per-dataset guaranteed intersections implied by leaf lower bounds
    guaranteed: list[int] = []

    stack = [tree.root]
    while stack:
        node = stack.pop()
        if not rect_intersects(node.rect, qrect):
            continue
        if not node.is_leaf:
            stack.append(node.right)
            stack.append(node.left)
            continue
        b = leaf_bounds(query, node)
        if trace is not None:
            trace.append(b)
        if b.ub == 0:
            continue
        floor = guaranteed[0] if len(guaranteed) >= k else 0
        # strict: a leaf tying the floor may still win on dataset id
        if b.ub < floor:
            continue
        queued.append(b)
        if b.lb > 0:
            for _ in range(min(k, len(node.children))):
                if len(guaranteed) < k:
                    heapq.heappush(guaranteed, b.lb)
                elif b.lb > guaranteed[0]:
                    heapq.heapreplace(guaranteed, b.lb)
                else:
                    break

    floor = guaranteed[0] if len(guaranteed) >= k else 0
    queued = [b for b in queued if b.ub >= floor]
    queued.sort(key=lambda b: -b.ub)

    scores: dict[str, int] = {}
    best: list[int] = []
    for b in queued:
        if len(best) >= k and b.ub < best[0]:
            break
        for did, s in exact_leaf_scores(query, b.leaf).items():
            scores[did] = s
            if len(best) < k:
                heapq.heappush(best, s)
            elif s > best[0]:
                heapq.heapreplace(best, s)
    return TopKResults(k, rank(scores, k))
