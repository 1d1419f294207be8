"""Grid rasterization, Z-order cell ids, and set-level spatial primitives.

A dataset is a bag of (lat, lon) points. Rasterizing it over a
``2**theta x 2**theta`` grid turns it into a *spatial set*: the sorted,
duplicate-free Z-order ids of the cells it occupies. Every distance in this
package is measured on integer cell coordinates ``(col, row)``, so a
connectivity threshold ``delta`` is expressed in cell units.
"""
from __future__ import annotations

import hashlib
import math
import struct
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    EmptyDatasetError,
    IncompatibleGridError,
    InvalidParameterError,
    OutOfBoundsError,
)

MAX_THETA = 15

# pairwise blocks above this size go through a k-d tree instead of broadcasting
_BRUTE_PAIR_LIMIT = 1 << 18


@dataclass(frozen=True)
class GridConfig:
    origin_lon: float
    origin_lat: float
    width: float
    height: float
    theta: int

    def __post_init__(self):
        if not isinstance(self.theta, (int, np.integer)) or not 1 <= self.theta <= MAX_THETA:
            raise InvalidParameterError(f"theta must be an integer in [1, {MAX_THETA}], got {self.theta!r}")
        if not (self.width > 0 and self.height > 0) or not all(
            math.isfinite(v) for v in (self.origin_lon, self.origin_lat, self.width, self.height)
        ):
            raise InvalidParameterError("grid extent must be finite and positive")
        object.__setattr__(self, "theta", int(self.theta))

    @property
    def side(self) -> int:
        return 1 << self.theta

    @property
    def cell_w(self) -> float:
        return self.width / self.side

    @property
    def cell_h(self) -> float:
        return self.height / self.side

    @property
    def diagonal(self) -> float:
        """Largest possible distance between two cells, in cell units."""
        return math.sqrt(2.0) * (self.side - 1)

    def describe(self) -> str:
        return (
            f"lon [{self.origin_lon}, {self.origin_lon + self.width}) x "
            f"lat [{self.origin_lat}, {self.origin_lat + self.height}) at theta={self.theta}"
        )

    def pack(self) -> bytes:
        return struct.pack("<ddddB", self.origin_lon, self.origin_lat, self.width, self.height, self.theta)

    @classmethod
    def unpack(cls, buf: bytes) -> "GridConfig":
        return cls(*struct.unpack("<ddddB", buf))

    PACKED_SIZE = struct.calcsize("<ddddB")

    def fingerprint(self) -> int:
        return int.from_bytes(hashlib.sha256(self.pack()).digest()[:8], "little")

    def cell_to_degrees(self, col: float, row: float) -> tuple[float, float]:
        """Map a (fractional) cell coordinate to (lon, lat) of that position."""
        return self.origin_lon + col * self.cell_w, self.origin_lat + row * self.cell_h

    def cell_center(self, col: int, row: int) -> tuple[float, float]:
        """(lat, lon) of the center of a cell."""
        lon, lat = self.cell_to_degrees(col + 0.5, row + 0.5)
        return lat, lon


# --- Z-order -----------------------------------------------------------------

def _spread_bits(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & 0xFFFF
    v = (v | (v << 8)) & 0x00FF00FF
    v = (v | (v << 4)) & 0x0F0F0F0F
    v = (v | (v << 2)) & 0x33333333
    v = (v | (v << 1)) & 0x55555555
    return v


def _compact_bits(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & 0x55555555
    v = (v | (v >> 1)) & 0x33333333
    v = (v | (v >> 2)) & 0x0F0F0F0F
    v = (v | (v >> 4)) & 0x00FF00FF
    v = (v | (v >> 8)) & 0x0000FFFF
    return v


def zorder_encode(col, row):
    """Interleave bits: column bits go to even positions, row bits to odd ones.

    Accepts scalars or arrays; returns the same shape.
    """
    c = np.asarray(col)
    r = np.asarray(row)
    out = (_spread_bits(c) | (_spread_bits(r) << 1)).astype(np.uint32)
    if out.ndim == 0:
        return int(out)
    return out


def zorder_decode(code):
    z = np.asarray(code).astype(np.uint64)
    col = _compact_bits(z).astype(np.int64)
    row = _compact_bits(z >> 1).astype(np.int64)
    if col.ndim == 0:
        return int(col), int(row)
    return col, row


# --- rectangles ----------------------------------------------------------------

Rect = tuple[int, int, int, int]  # (min_col, min_row, max_col, max_row), inclusive


def rect_union(a: Rect, b: Rect) -> Rect:
    return (min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))


def rect_contains(outer: Rect, inner: Rect) -> bool:
    return outer[0] <= inner[0] and outer[1] <= inner[1] and outer[2] >= inner[2] and outer[3] >= inner[3]


def rect_intersects(a: Rect, b: Rect) -> bool:
    return a[0] <= b[2] and b[0] <= a[2] and a[1] <= b[3] and b[1] <= a[3]


def rect_pivot(rect: Rect) -> tuple[float, float]:
    return ((rect[0] + rect[2]) / 2.0, (rect[1] + rect[3]) / 2.0)


def rect_radius(rect: Rect) -> float:
    # cell-count extent (max - min + 1) so every integer coordinate in the rect is enclosed
    return 0.5 * math.hypot(rect[2] - rect[0] + 1, rect[3] - rect[1] + 1)


def rect_gap_sq(a: Rect, b: Rect) -> int:
    """Squared distance between the closest integer points of two rectangles."""
    dx = max(0, b[0] - a[2], a[0] - b[2])
    dy = max(0, b[1] - a[3], a[1] - b[3])
    return dx * dx + dy * dy


# --- spatial sets ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpatialSet:
    """Rasterized dataset: sorted unique Z-order ids plus derived geometry.

    Build instances with :func:`rasterize` or :meth:`from_cells`; the
    constructor does not re-validate.
    """

    dataset_id: str
    cells: np.ndarray
    grid: GridConfig
    cols: np.ndarray = field(repr=False)
    rows: np.ndarray = field(repr=False)
    mbr: Rect

    @classmethod
    def from_cells(cls, dataset_id: str, cells: Iterable[int], grid: GridConfig) -> "SpatialSet":
        arr = np.unique(np.fromiter((int(c) for c in cells), dtype=np.int64))
        if arr.size == 0:
            raise EmptyDatasetError(f"dataset {dataset_id!r} has no cells")
        if arr[0] < 0 or arr[-1] >= 1 << (2 * grid.theta):
            raise InvalidParameterError(f"dataset {dataset_id!r} has cell ids outside the theta={grid.theta} grid")
        return cls._from_sorted(dataset_id, arr.astype(np.uint32), grid)

    @classmethod
    def _from_sorted(cls, dataset_id: str, cells: np.ndarray, grid: GridConfig) -> "SpatialSet":
        cols, rows = zorder_decode(cells)
        mbr = (int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max()))
        for a in (cells, cols, rows):
            a.setflags(write=False)
        return cls(str(dataset_id), cells, grid, cols, rows, mbr)

    def __len__(self) -> int:
        return int(self.cells.size)

    def __eq__(self, other):
        if not isinstance(other, SpatialSet):
            return NotImplemented
        return (
            self.dataset_id == other.dataset_id
            and self.grid == other.grid
            and np.array_equal(self.cells, other.cells)
        )

    __hash__ = None

    @property
    def pivot(self) -> tuple[float, float]:
        return rect_pivot(self.mbr)

    @property
    def radius(self) -> float:
        return rect_radius(self.mbr)

    def cell_list(self) -> list[int]:
        return self.cells.tolist()

    def with_id(self, dataset_id: str) -> "SpatialSet":
        return SpatialSet(dataset_id, self.cells, self.grid, self.cols, self.rows, self.mbr)

    def clip(self, rect: Rect) -> "SpatialSet | None":
        """Cells lying inside ``rect``; None when nothing is left."""
        mask = (self.cols >= rect[0]) & (self.cols <= rect[2]) & (self.rows >= rect[1]) & (self.rows <= rect[3])
        if not mask.any():
            return None
        if mask.all():
            return self
        return SpatialSet._from_sorted(self.dataset_id, self.cells[mask].copy(), self.grid)


def _locate(points: Sequence[tuple[float, float]], grid: GridConfig) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    lat, lon = pts[:, 0], pts[:, 1]
    bad = ~(
        np.isfinite(lat)
        & np.isfinite(lon)
        & (lon >= grid.origin_lon)
        & (lon < grid.origin_lon + grid.width)
        & (lat >= grid.origin_lat)
        & (lat < grid.origin_lat + grid.height)
    )
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise OutOfBoundsError((float(lat[i]), float(lon[i])), grid)
    side = grid.side
    col = np.floor((lon - grid.origin_lon) / grid.cell_w).astype(np.int64)
    row = np.floor((lat - grid.origin_lat) / grid.cell_h).astype(np.int64)
    # rounding can push a point just below the far edge onto index `side`
    np.clip(col, 0, side - 1, out=col)
    np.clip(row, 0, side - 1, out=row)
    return col, row


def rasterize(points: Sequence[tuple[float, float]], grid: GridConfig, dataset_id: str) -> SpatialSet:
    """Map (lat, lon) points onto grid cells; points sharing a cell collapse."""
    if len(points) == 0:
        raise EmptyDatasetError(f"dataset {dataset_id!r} has no points")
    col, row = _locate(points, grid)
    cells = np.unique(zorder_encode(col, row).astype(np.uint32))
    return SpatialSet._from_sorted(dataset_id, cells, grid)


def in_extent(lat: float, lon: float, grid: GridConfig) -> bool:
    return (
        grid.origin_lon <= lon < grid.origin_lon + grid.width
        and grid.origin_lat <= lat < grid.origin_lat + grid.height
    )


def cells_to_points(cells: Iterable[int], grid: GridConfig) -> list[tuple[float, float]]:
    """Cell-center (lat, lon) for each id; rasterizing the result gives the cells back."""
    out = []
    for c in cells:
        col, row = zorder_decode(int(c))
        out.append(grid.cell_center(col, row))
    return out


# --- set primitives ----------------------------------------------------------------

def _check_grid(a: SpatialSet, b: SpatialSet) -> None:
    if a.grid != b.grid:
        raise IncompatibleGridError(f"{a.dataset_id!r} and {b.dataset_id!r} were rasterized on different grids")


def _sq_dist_arrays(ac, ar, bc, br) -> int:
    if ac.size * bc.size <= _BRUTE_PAIR_LIMIT:
        dc = ac[:, None] - bc[None, :]
        dr = ar[:, None] - br[None, :]
        return int((dc * dc + dr * dr).min())
    if ac.size < bc.size:
        ac, ar, bc, br = bc, br, ac, ar
    tree = cKDTree(np.column_stack((ac, ar)))
    _, idx = tree.query(np.column_stack((bc, br)), k=1)
    dc = ac[idx] - bc
    dr = ar[idx] - br
    return int((dc * dc + dr * dr).min())


def min_sq_distance(a: SpatialSet, b: SpatialSet) -> int:
    """Exact squared set distance (integer)."""
    _check_grid(a, b)
    if rect_intersects(a.mbr, b.mbr) and intersection_count(a, b) > 0:
        return 0
    return _sq_dist_arrays(a.cols, a.rows, b.cols, b.rows)


def set_distance(a: SpatialSet, b: SpatialSet) -> float:
    """Minimum Euclidean distance between the cells of two sets, in cell units."""
    return math.sqrt(min_sq_distance(a, b))


def within_distance(a: SpatialSet, b: SpatialSet, delta: float) -> bool:
    """``set_distance(a, b) <= delta`` with an MBR-gap shortcut."""
    _check_grid(a, b)
    if math.sqrt(rect_gap_sq(a.mbr, b.mbr)) > delta:
        return False
    return set_distance(a, b) <= delta


def is_connected(a: SpatialSet, b: SpatialSet, delta: float) -> bool:
    if delta < 0 or math.isnan(delta):
        raise InvalidParameterError(f"delta must be non-negative, got {delta!r}")
    return within_distance(a, b, delta)


def intersection_count(a: SpatialSet, b: SpatialSet) -> int:
    _check_grid(a, b)
    if not rect_intersects(a.mbr, b.mbr):
        return 0
    return int(np.intersect1d(a.cells, b.cells, assume_unique=True).size)


def coverage_increment(candidate: SpatialSet, covered) -> int:
    """Number of the candidate's cells not yet in ``covered`` (a set of ints)."""
    if not covered:
        return len(candidate)
    return sum(1 for c in candidate.cells.tolist() if c not in covered)


def is_connected_graph(sets: Sequence[SpatialSet], delta: float) -> bool:
    """True when the delta-proximity graph over ``sets`` has a single component."""
    sets = list(sets)
    if not sets:
        raise InvalidParameterError("collection must be non-empty")
    if delta < 0:
        raise InvalidParameterError(f"delta must be non-negative, got {delta!r}")
    reached = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in range(len(sets)):
            if j not in reached and within_distance(sets[i], sets[j], delta):
                reached.add(j)
                frontier.append(j)
    return len(reached) == len(sets)
