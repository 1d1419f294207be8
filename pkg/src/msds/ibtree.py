"""Inverted ball tree (IBtree): the per-source local index.

A binary tree of MBR/ball nodes built top-down by splitting on pivot
coordinates. Internal nodes hold exactly two children; leaves hold up to
``f`` dataset nodes plus an inverted index from cell id to the ids of the
children containing that cell. Every node keeps a parent link so inserts and
updates can be applied in place and propagated bottom-up.
"""
from __future__ import annotations

import math
from collections.abc import Iterator, Sequence

import numpy as np

from .codec import Reader, Writer
from .errors import (
    DatasetNotFoundError,
    DuplicateDatasetError,
    FormatError,
    IncompatibleGridError,
    InvalidParameterError,
)
from .geometry import (
    GridConfig,
    Rect,
    SpatialSet,
    rect_contains,
    rect_pivot,
    rect_radius,
    rect_union,
)

MAGIC = b"MSDS"
FORMAT_VERSION = 1


class DatasetNode:
    __slots__ = ("set", "parent")

    def __init__(self, s: SpatialSet, parent: "LeafNode | None" = None):
        self.set = s
        self.parent = parent

    @property
    def id(self) -> str:
        return self.set.dataset_id

    @property
    def rect(self) -> Rect:
        return self.set.mbr

    @property
    def pivot(self) -> tuple[float, float]:
        return self.set.pivot

    @property
    def radius(self) -> float:
        return self.set.radius

    def __repr__(self):
        return f"DatasetNode({self.id!r}, cells={len(self.set)})"


class _TreeNode:
    __slots__ = ("rect", "pivot", "radius", "parent")

    def __init__(self, rect: Rect, parent=None):
        self.parent = parent
        self.set_rect(rect)

    def set_rect(self, rect: Rect) -> None:
        self.rect = rect
        self.pivot = rect_pivot(rect)
        self.radius = rect_radius(rect)

    is_leaf = False


class InternalNode(_TreeNode):
    __slots__ = ("left", "right")

    def __init__(self, rect: Rect, parent=None):
        super().__init__(rect, parent)
        self.left: _TreeNode | None = None
        self.right: _TreeNode | None = None

    @property
    def children(self) -> tuple[_TreeNode, _TreeNode]:
        return (self.left, self.right)

    def replace_child(self, old, new) -> None:
        if self.left is old:
            self.left = new
        elif self.right is old:
            self.right = new
        else:
            raise ValueError("not a child of this node")
        new.parent = self

    def refit(self) -> None:
        self.set_rect(rect_union(self.left.rect, self.right.rect))


class LeafNode(_TreeNode):
    __slots__ = ("children", "inv")
    is_leaf = True

    def __init__(self, children: list[DatasetNode], parent=None):
        super().__init__(_union_rect(children), parent)
        self.children = list(children)
        self.inv: dict[int, list[str]] = {}
        for child in self.children:
            child.parent = self
            self._post(child)

    def _post(self, child: DatasetNode) -> None:
        inv = self.inv
        did = child.id
        for c in child.set.cells.tolist():
            pl = inv.get(c)
            if pl is None:
                inv[c] = [did]
            else:
                pl.append(did)

    def _unpost(self, child: DatasetNode) -> None:
        inv = self.inv
        did = child.id
        for c in child.set.cells.tolist():
            pl = inv[c]
            pl.remove(did)
            if not pl:
                del inv[c]

    def add(self, child: DatasetNode) -> None:
        child.parent = self
        self.children.append(child)
        self._post(child)
        self.set_rect(rect_union(self.rect, child.rect))

    def replace_set(self, child: DatasetNode, s: SpatialSet) -> None:
        self._unpost(child)
        child.set = s
        self._post(child)

    def refit(self) -> None:
        self.set_rect(_union_rect(self.children))

    def __repr__(self):
        return f"LeafNode(rect={self.rect}, children={[c.id for c in self.children]})"


def _union_rect(nodes) -> Rect:
    it = iter(nodes)
    r = next(it).rect
    for n in it:
        r = rect_union(r, n.rect)
    return r


def _partition(nodes: Sequence, pivot: tuple[float, float]) -> tuple[list, list]:
    """Split nodes around the parent pivot on the dimension of widest pivot spread."""
    spread = [
        max(n.pivot[d] for n in nodes) - min(n.pivot[d] for n in nodes)
        for d in (0, 1)
    ]
    dim = 1 if spread[1] > spread[0] else 0
    left = [n for n in nodes if n.pivot[dim] <= pivot[dim]]
    right = [n for n in nodes if n.pivot[dim] > pivot[dim]]
    if not left or not right:
        # co-located pivots: fall back to an order-stable median split
        order = sorted(range(len(nodes)), key=lambda i: (nodes[i].pivot[dim], i))
        half = len(nodes) // 2
        keep = set(order[:half])
        left = [n for i, n in enumerate(nodes) if i in keep]
        right = [n for i, n in enumerate(nodes) if i not in keep]
    return left, right


def _build_subtree(nodes: list[DatasetNode], f: int, parent=None):
    stack = [(nodes, parent, None, None)]
    top = None
    while stack:
        group, par, owner, side = stack.pop()
        if len(group) <= f:
            node = LeafNode(group, par)
        else:
            node = InternalNode(_union_rect(group), par)
            left, right = _partition(group, node.pivot)
            # right pushed first so the left subtree is materialized first
            stack.append((right, node, node, "right"))
            stack.append((left, node, node, "left"))
        if owner is None:
            top = node
        else:
            setattr(owner, side, node)
    return top


class IBtree:
    def __init__(self, grid: GridConfig, f: int):
        if f < 1:
            raise InvalidParameterError(f"leaf capacity must be >= 1, got {f}")
        self.grid = grid
        self.f = int(f)
        self.root: _TreeNode | None = None
        self.directory: dict[str, DatasetNode] = {}
        self.generation = 0

    # -- construction ---------------------------------------------------------

    @classmethod
    def build(cls, sets: Sequence[SpatialSet], f: int, grid: GridConfig | None = None) -> "IBtree":
        if not sets:
            raise InvalidParameterError("cannot build an index over zero datasets")
        grid = grid or sets[0].grid
        tree = cls(grid, f)
        nodes = []
        for s in sets:
            tree._check(s)
            if s.dataset_id in tree.directory:
                raise DuplicateDatasetError(s.dataset_id)
            node = DatasetNode(s)
            tree.directory[s.dataset_id] = node
            nodes.append(node)
        tree.root = _build_subtree(nodes, tree.f)
        return tree

    def _check(self, s: SpatialSet) -> None:
        if s.grid != self.grid:
            raise IncompatibleGridError(f"dataset {s.dataset_id!r} is not on this index's grid")

    # -- access ----------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.directory)

    def __contains__(self, dataset_id: str) -> bool:
        return dataset_id in self.directory

    def get(self, dataset_id: str) -> SpatialSet:
        try:
            return self.directory[dataset_id].set
        except KeyError:
            raise DatasetNotFoundError(dataset_id) from None

    def sets(self) -> list[SpatialSet]:
        return [n.set for n in self.directory.values()]

    def iter_nodes(self) -> Iterator[_TreeNode]:
        """Pre-order traversal, left before right."""
        if self.root is None:
            return
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    def leaves(self) -> list[LeafNode]:
        return [n for n in self.iter_nodes() if n.is_leaf]

    def depth(self) -> int:
        if self.root is None:
            return 0
        best = 0
        stack = [(self.root, 1)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if not node.is_leaf:
                stack.extend(((node.left, d + 1), (node.right, d + 1)))
        return best

    # -- dynamic maintenance -----------------------------------------------------

    def insert(self, s: SpatialSet) -> None:
        self._check(s)
        if s.dataset_id in self.directory:
            raise DuplicateDatasetError(s.dataset_id)
        node = DatasetNode(s)
        self.directory[s.dataset_id] = node
        self.generation += 1
        if self.root is None:
            self.root = LeafNode([node])
            return
        cur = self.root
        while not cur.is_leaf:
            if not rect_contains(cur.rect, node.rect):
                cur.set_rect(rect_union(cur.rect, node.rect))
            px, py = node.pivot
            dl = math.hypot(cur.left.pivot[0] - px, cur.left.pivot[1] - py)
            dr = math.hypot(cur.right.pivot[0] - px, cur.right.pivot[1] - py)
            cur = cur.left if dl <= dr else cur.right
        cur.add(node)
        if len(cur.children) > self.f:
            self._split(cur)

    def _split(self, leaf: LeafNode) -> None:
        parent = leaf.parent
        sub = _build_subtree(leaf.children, self.f, parent)
        if parent is None:
            self.root = sub
        else:
            parent.replace_child(leaf, sub)

    def update(self, s: SpatialSet) -> None:
        self._check(s)
        node = self.directory.get(s.dataset_id)
        if node is None:
            raise DatasetNotFoundError(s.dataset_id)
        leaf = node.parent
        leaf.replace_set(node, s)
        self.generation += 1
        # refit bottom-up; stop once an ancestor's rect is unaffected
        cur = leaf
        while cur is not None:
            old = cur.rect
            cur.refit()
            if cur.rect == old:
                break
            cur = cur.parent

    def upsert(self, s: SpatialSet) -> None:
        if s.dataset_id in self.directory:
            self.update(s)
        else:
            self.insert(s)

    # -- persistence --------------------------------------------------------------

    def serialize(self) -> bytes:
        w = Writer().raw(MAGIC).u16(FORMAT_VERSION).raw(self.grid.pack())
        w.u32(self.f).u64(self.generation).u32(len(self.directory))
        for node in self.iter_nodes():
            rec = Writer().u8(1 if node.is_leaf else 0).pack("iiii", *node.rect)
            if node.is_leaf:
                _write_leaf(rec, node)
            body = rec.getvalue()
            w.u32(len(body)).raw(body)
        return w.getvalue()

    @classmethod
    def deserialize(cls, data: bytes, grid: GridConfig | None = None) -> "IBtree":
        r = Reader(data)
        if r.remaining() == 0:
            raise FormatError("empty index snapshot")
        if r.take(4) != MAGIC:
            raise FormatError("not an index snapshot (bad magic)")
        version = r.u16()
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported index format version {version}")
        stored_grid = GridConfig.unpack(r.take(GridConfig.PACKED_SIZE))
        if grid is not None and grid != stored_grid:
            raise IncompatibleGridError("snapshot grid differs from the requested grid")
        f = r.u32()
        tree = cls(stored_grid, f)
        tree.generation = r.u64()
        n_datasets = r.u32()
        # pre-order: a pending slot is (parent, side)
        pending: list[tuple[InternalNode | None, str | None]] = [(None, None)]
        while pending:
            parent, side = pending.pop()
            size = r.u32()
            rec = Reader(r.take(size))
            kind = rec.u8()
            rect = rec.unpack("iiii")
            if kind == 1:
                node = _read_leaf(rec, rect, stored_grid, parent)
                for child in node.children:
                    if child.id in tree.directory:
                        raise FormatError(f"duplicate dataset {child.id!r} in snapshot")
                    tree.directory[child.id] = child
            elif kind == 0:
                node = InternalNode(rect, parent)
                pending.append((node, "right"))
                pending.append((node, "left"))
            else:
                raise FormatError(f"unknown node kind {kind}")
            rec.expect_end()
            if parent is None:
                tree.root = node
            else:
                setattr(parent, side, node)
        r.expect_end()
        if len(tree.directory) != n_datasets:
            raise FormatError(f"snapshot declares {n_datasets} datasets but holds {len(tree.directory)}")
        return tree


def _write_leaf(w: Writer, leaf: LeafNode) -> None:
    index = {c.id: i for i, c in enumerate(leaf.children)}
    w.u32(len(leaf.children))
    for child in leaf.children:
        w.string(child.id)
        w.sorted_ids(child.set.cells.tolist())
    keys = sorted(leaf.inv)
    w.sorted_ids(keys)
    for k in keys:
        w.sorted_ids(sorted(index[d] for d in leaf.inv[k]))


def _read_leaf(r: Reader, rect: Rect, grid: GridConfig, parent) -> LeafNode:
    n = r.u32()
    if n == 0 or n > r.remaining():
        raise FormatError(f"bad leaf child count {n}")
    children = []
    for _ in range(n):
        did = r.string()
        cells = r.sorted_ids()
        if not cells or cells[-1] >= 1 << (2 * grid.theta):
            raise FormatError(f"bad cell list for dataset {did!r}")
        s = SpatialSet._from_sorted(did, np.asarray(cells, dtype=np.uint32), grid)
        children.append(DatasetNode(s))
    keys = r.sorted_ids()
    inv: dict[int, list[str]] = {}
    for k in keys:
        idx = r.sorted_ids()
        if not idx or idx[-1] >= n:
            raise FormatError("posting list references a missing child")
        inv[k] = [children[i].id for i in idx]
    leaf = LeafNode.__new__(LeafNode)
    _TreeNode.__init__(leaf, rect, parent)
    leaf.children = children
    leaf.inv = inv
    for c in children:
        c.parent = leaf
    return leaf


def raw_lower_bound(pa: tuple[float, float], ra: float, pb: tuple[float, float], rb: float) -> float:
    """Pivot distance minus both radii, unclipped (may be negative)."""
    return math.hypot(pa[0] - pb[0], pa[1] - pb[1]) - ra - rb


def leaves_within(tree: IBtree, pivot: tuple[float, float], radius: float, delta: float) -> list[LeafNode]:
    """Leaves whose ball may hold a dataset within ``delta`` of the probe ball.

    A subtree is dropped only when its lower bound exceeds ``delta``; keeping
    ``lb == delta`` preserves pairs at exactly distance ``delta``.
    """
    out: list[LeafNode] = []
    if tree.root is None:
        return out
    stack = [tree.root]
    while stack:
        node = stack.pop()
        if raw_lower_bound(node.pivot, node.radius, pivot, radius) > delta:
            continue
        if node.is_leaf:
            out.append(node)
        else:
            stack.append(node.right)
            stack.append(node.left)
    return out
