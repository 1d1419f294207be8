"""The interaction center.

The center never sees datasets. It keeps a global index over the root
descriptors sources register (all in degrees, so sources may use different
grids), routes each query to the sources that can contribute, trims MIQ
queries to each source's region and merges what comes back.
"""
from __future__ import annotations

import itertools
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DuplicateSourceError,
    InvalidParameterError,
    PartialResultError,
    ProtocolError,
)
from .geometry import GridConfig, SpatialSet, cells_to_points, rasterize, rect_intersects, rect_union
from .ibtree import _partition, raw_lower_bound
from .mcqc import McqcResult
from .protocol import (
    CommMeter,
    MsgType,
    QueryMsg,
    ResultKind,
    ResultMsg,
    SourceDescriptor,
    decode,
    encode_query,
)

log = logging.getLogger(__name__)

DegRect = tuple[float, float, float, float]  # min_lon, min_lat, max_lon, max_lat


def deg_pivot(rect: DegRect) -> tuple[float, float]:
    return ((rect[0] + rect[2]) / 2.0, (rect[1] + rect[3]) / 2.0)


def deg_radius(rect: DegRect) -> float:
    return 0.5 * math.hypot(rect[2] - rect[0], rect[3] - rect[1])


def delta_degrees(delta: float, grid: GridConfig) -> float:
    """Largest degree distance two points can have when their cells are ``delta`` apart.

    Each point sits anywhere in its cell, adding at most one cell per axis:
    ``max(cell_w, cell_h) * (delta + sqrt(2))``.
    """
    return max(grid.cell_w, grid.cell_h) * (delta + math.sqrt(2.0))


# --- queries -----------------------------------------------------------------------


class Query:
    """A query as raw (lat, lon) points, rasterized lazily onto each source grid."""

    def __init__(self, points, native: SpatialSet | None = None):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if len(pts) == 0:
            raise InvalidParameterError("query has no points")
        if not np.isfinite(pts).all():
            raise InvalidParameterError("query points must be finite")
        self.points = pts
        self._cache: dict[GridConfig, SpatialSet | None] = {}
        if native is not None:
            self._cache[native.grid] = native

    @classmethod
    def from_set(cls, s: SpatialSet) -> "Query":
        """Wrap a rasterized query; its cell centers stand in for the raw points."""
        return cls(cells_to_points(s.cell_list(), s.grid), native=s.with_id("query"))

    @property
    def mbr_deg(self) -> DegRect:
        lat, lon = self.points[:, 0], self.points[:, 1]
        return (float(lon.min()), float(lat.min()), float(lon.max()), float(lat.max()))

    def on_grid(self, grid: GridConfig) -> SpatialSet | None:
        """Points inside the grid extent, rasterized; None when none fall inside."""
        if grid not in self._cache:
            lat, lon = self.points[:, 0], self.points[:, 1]
            inside = (
                (lon >= grid.origin_lon) & (lon < grid.origin_lon + grid.width)
                & (lat >= grid.origin_lat) & (lat < grid.origin_lat + grid.height)
            )
            self._cache[grid] = rasterize(self.points[inside], grid, "query") if inside.any() else None
        return self._cache[grid]


def clip_query(query: Query | SpatialSet, source: SourceDescriptor, mode: str) -> SpatialSet | None:
    """The part of ``query`` worth sending to ``source``; None drops the source.

    MIQ keeps only cells inside the source root MBR (intersections cannot
    exist elsewhere). MCQC sends the whole query: coverage and connectivity
    both depend on cells outside the overlap.
    """
    if isinstance(query, SpatialSet):
        query = Query.from_set(query)
    s = query.on_grid(source.grid)
    if s is None:
        return None
    if mode == "miq":
        return s.clip(source.root_rect)
    if mode == "mcqc":
        return s
    raise InvalidParameterError(f"unknown query mode {mode!r}")


# --- global index ------------------------------------------------------------------


@dataclass
class GlobalNode:
    rect: DegRect
    source: SourceDescriptor | None = None
    left: "GlobalNode | None" = None
    right: "GlobalNode | None" = None
    # largest cell size below this node, for converting delta to degrees conservatively
    cell_deg: float = 0.0
    # internal balls enclose the children's balls, so a parent's lb never exceeds a child's
    ball: float | None = None

    @property
    def pivot(self):
        return deg_pivot(self.rect)

    @property
    def radius(self):
        return deg_radius(self.rect) if self.ball is None else self.ball

    @property
    def is_leaf(self):
        return self.source is not None


class GlobalIndex:
    """Binary tree over source descriptors; every leaf holds exactly one source."""

    def __init__(self, descriptors: Sequence[SourceDescriptor] = ()):
        ordered = sorted(descriptors, key=lambda d: d.source_id)
        self.root = self._build(ordered) if ordered else None

    @staticmethod
    def _build(descs: list[SourceDescriptor]) -> GlobalNode:
        if len(descs) == 1:
            d = descs[0]
            return GlobalNode(tuple(d.mbr_deg), d, cell_deg=max(d.grid.cell_w, d.grid.cell_h))
        rect = descs[0].mbr_deg
        for d in descs[1:]:
            rect = rect_union(rect, d.mbr_deg)
        left, right = _partition(descs, deg_pivot(rect))
        node = GlobalNode(tuple(rect), left=GlobalIndex._build(left), right=GlobalIndex._build(right))
        node.cell_deg = max(node.left.cell_deg, node.right.cell_deg)
        p = node.pivot
        node.ball = max(math.dist(p, c.pivot) + c.radius for c in (node.left, node.right))
        return node

    def leaves(self) -> list[GlobalNode]:
        out, stack = [], [self.root] if self.root else []
        while stack:
            n = stack.pop()
            if n.is_leaf:
                out.append(n)
            else:
                stack.extend((n.right, n.left))
        return out

    def route(self, query_mbr: DegRect, mode: str, delta: float = 0.0) -> list[str]:
        """Sources that may hold an answer, sorted by id."""
        if query_mbr[0] > query_mbr[2] or query_mbr[1] > query_mbr[3]:
            raise InvalidParameterError(f"invalid query MBR {query_mbr}")
        if mode not in ("miq", "mcqc"):
            raise InvalidParameterError(f"unknown query mode {mode!r}")
        out = []
        qp, qr = deg_pivot(query_mbr), deg_radius(query_mbr)
        stack = [self.root] if self.root else []
        while stack:
            n = stack.pop()
            if mode == "miq":
                if not rect_intersects(n.rect, query_mbr):
                    continue
            else:
                reach = n.cell_deg * (delta + math.sqrt(2.0))
                if raw_lower_bound(n.pivot, n.radius, qp, qr) > reach:
                    continue
            if n.is_leaf:
                out.append(n.source.source_id)
            else:
                stack.extend((n.right, n.left))
        return sorted(out)


# --- results ---------------------------------------------------------------------------


@dataclass
class GlobalTopK:
    k: int
    entries: list[tuple[str, str, int]] = field(default_factory=list)  # (source_id, dataset_id, score)
    candidates: list[str] = field(default_factory=list)
    traffic: dict[str, tuple[int, int]] = field(default_factory=dict)  # source -> (bytes tx, bytes rx)

    def scores(self) -> list[int]:
        return [s for _, _, s in self.entries]


@dataclass
class GlobalMcqc:
    source_id: str | None
    result: McqcResult
    candidates: list[str] = field(default_factory=list)
    traffic: dict[str, tuple[int, int]] = field(default_factory=dict)


def merge_topk(per_source: dict[str, list[tuple[str, int]]], k: int) -> list[tuple[str, str, int]]:
    """Global order: score descending, then dataset id, then source id."""
    items = [(sid, did, s) for sid, entries in per_source.items() for did, s in entries]
    items.sort(key=lambda e: (-e[2], e[1], e[0]))
    return items[:k]


def pick_mcqc(per_source: dict[str, McqcResult]) -> tuple[str | None, McqcResult]:
    """Largest total coverage wins; ties go to the smallest source id.

    Sources that selected nothing do not compete; when none selected anything
    the answer is an empty, truncated result from no source.
    """
    best_sid, best = None, McqcResult(truncated=True)
    for sid in sorted(per_source):
        r = per_source[sid]
        if r.selected and (best_sid is None or r.total_coverage > best.total_coverage):
            best_sid, best = sid, r
    return best_sid, best


def _to_mcqc(msg: ResultMsg) -> McqcResult:
    return McqcResult(list(msg.entries), msg.total_coverage, msg.truncated)


# --- the center ----------------------------------------------------------------------------


@dataclass
class LiveGlobal:
    live_id: int
    query: Query
    mode: str
    k: int
    delta: float
    per_source: dict[str, ResultMsg] = field(default_factory=dict)
    version: int = 0

    def result(self):
        if self.mode == "miq":
            merged = merge_topk({s: m.entries for s, m in self.per_source.items()}, self.k)
            return GlobalTopK(self.k, merged, sorted(self.per_source))
        sid, best = pick_mcqc({s: _to_mcqc(m) for s, m in self.per_source.items()})
        return GlobalMcqc(sid, best, sorted(self.per_source))


class Center:
    def __init__(self, grid: GridConfig | None = None, max_workers: int = 8):
        self._grid = grid
        self._lock = threading.RLock()
        self.sources: dict[str, SourceDescriptor] = {}
        self.links: dict[str, object] = {}
        self.index = GlobalIndex()
        self.live: dict[int, LiveGlobal] = {}
        self._ids = itertools.count(1)
        self._pool = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="msds-fanout")
        self._background: list = []

    # -- registry --------------------------------------------------------------------

    @property
    def grid(self) -> GridConfig | None:
        """Grid advertised to clients: the configured one, else the finest registered
        grid (ties to the smallest source id)."""
        if self._grid is not None:
            return self._grid
        with self._lock:
            if not self.sources:
                return None
            sid = min(self.sources, key=lambda s: (-self.sources[s].grid.theta, s))
            return self.sources[sid].grid

    def register_source(self, descriptor: SourceDescriptor, link=None) -> None:
        m = descriptor.mbr_deg
        if not (m[0] < m[2] and m[1] < m[3]):
            raise InvalidParameterError(f"source {descriptor.source_id!r} has a degenerate MBR")
        with self._lock:
            if descriptor.source_id in self.sources:
                raise DuplicateSourceError(descriptor.source_id)
            self.sources[descriptor.source_id] = descriptor
            if link is not None:
                self.links[descriptor.source_id] = link
            self.index = GlobalIndex(self.sources.values())

    def connect(self, link) -> SourceDescriptor:
        """Open ``link``, read the source's REGISTER frame and register it."""
        holder = {}

        def on_push(frame: bytes) -> None:
            self._on_push(holder["sid"], frame)

        first = link.open(on_push)
        mtype, desc = decode(first)
        if mtype is not MsgType.REGISTER:
            link.close()
            raise ProtocolError(f"expected REGISTER from source, got {mtype.name}")
        holder["sid"] = desc.source_id
        try:
            self.register_source(desc, link)
        except Exception:
            link.close()
            raise
        return desc

    def close(self) -> None:
        self.wait_background()
        for link in list(self.links.values()):
            link.close()
        self._pool.shutdown(wait=True)

    def candidate_sources(self, query_mbr: DegRect, mode: str, delta: float = 0.0) -> list[str]:
        with self._lock:
            index = self.index
        return index.route(query_mbr, mode, delta)

    # -- pushes from sources --------------------------------------------------------------

    def _on_push(self, sid: str, frame: bytes) -> None:
        mtype, msg = decode(frame)
        if mtype is MsgType.RESULT_DELTA:
            with self._lock:
                lg = self.live.get(msg.query_id)
                if lg is not None:
                    lg.per_source[sid] = msg
                    lg.version += 1
        elif mtype is MsgType.REGISTER:
            with self._lock:
                if msg.source_id != sid:
                    log.warning("source %s re-registered as %s; ignored", sid, msg.source_id)
                    return
                self.sources[sid] = msg
                self.index = GlobalIndex(self.sources.values())
                pending = [lg for lg in self.live.values() if sid not in lg.per_source]
            # live queries the source can now contribute to; request off the reader thread
            for lg in pending:
                if sid in self.candidate_sources(lg.query.mbr_deg, lg.mode, lg.delta):
                    self._background.append(self._pool.submit(self._register_live_at, lg, sid))
        else:
            log.warning("unexpected %s pushed by source %s", mtype.name, sid)

    def wait_background(self) -> None:
        while self._background:
            self._background.pop(0).result()

    # -- fan-out ---------------------------------------------------------------------------

    def _ask(self, sid: str, frame: bytes) -> tuple[ResultMsg, int]:
        with self._lock:
            link = self.links.get(sid)
        if link is None:
            raise ProtocolError(f"no link to source {sid!r}")
        reply = link.request(frame)
        mtype, msg = decode(reply)
        if mtype is MsgType.ERROR:
            raise ProtocolError(f"source {sid} answered {getattr(msg.code, 'name', msg.code)}: {msg.message}")
        if mtype is not MsgType.RESULT or msg.kind is ResultKind.ACK:
            raise ProtocolError(f"unexpected {mtype.name} reply")
        return msg, len(reply)

    def _fan_out(self, requests: dict[str, bytes]):
        futures = {sid: self._pool.submit(self._ask, sid, frame) for sid, frame in requests.items()}
        results, traffic, failed = {}, {}, {}
        for sid, fut in futures.items():
            try:
                msg, nrx = fut.result()
            except Exception as exc:
                failed[sid] = f"{type(exc).__name__}: {exc}"
                continue
            results[sid] = msg
            traffic[sid] = (len(requests[sid]), nrx)
        return results, traffic, failed

    def _as_query(self, query) -> Query:
        if isinstance(query, Query):
            return query
        if isinstance(query, SpatialSet):
            return Query.from_set(query)
        return Query(query)

    def global_miq(self, query, k: int) -> GlobalTopK:
        if k < 1:
            raise InvalidParameterError(f"k must be >= 1, got {k}")
        q = self._as_query(query)
        with self._lock:
            descs = dict(self.sources)
        cands = self.candidate_sources(q.mbr_deg, "miq")
        requests = {}
        for sid in cands:
            part = clip_query(q, descs[sid], "miq")
            if part is not None:
                requests[sid] = encode_query(QueryMsg(next(self._ids), "miq", k, part.cell_list()))
        results, traffic, failed = self._fan_out(requests)
        out = GlobalTopK(k, merge_topk({s: m.entries for s, m in results.items()}, k), sorted(requests), traffic)
        if failed:
            raise PartialResultError(failed, out)
        return out

    def global_mcqc(self, query, delta: float, k: int) -> GlobalMcqc:
        if k < 1:
            raise InvalidParameterError(f"k must be >= 1, got {k}")
        if delta < 0:
            raise InvalidParameterError(f"delta must be non-negative, got {delta!r}")
        q = self._as_query(query)
        with self._lock:
            descs = dict(self.sources)
        cands = self.candidate_sources(q.mbr_deg, "mcqc", delta)
        requests = {}
        for sid in cands:
            part = clip_query(q, descs[sid], "mcqc")
            if part is not None:
                requests[sid] = encode_query(QueryMsg(next(self._ids), "mcqc", k, part.cell_list(), delta))
        results, traffic, failed = self._fan_out(requests)
        sid, best = pick_mcqc({s: _to_mcqc(m) for s, m in results.items()})
        out = GlobalMcqc(sid, best, sorted(requests), traffic)
        if failed:
            raise PartialResultError(failed, out)
        return out

    # -- live queries -------------------------------------------------------------------------

    def _live_frame(self, lg: LiveGlobal, sid: str) -> bytes | None:
        # live MIQ queries are not clipped: the source region can grow later
        part = lg.query.on_grid(self.sources[sid].grid)
        if part is None:
            return None
        return encode_query(QueryMsg(lg.live_id, lg.mode, lg.k, part.cell_list(), lg.delta, live=True))

    def _register_live_at(self, lg: LiveGlobal, sid: str) -> None:
        with self._lock:
            if sid in lg.per_source:
                return
            frame = self._live_frame(lg, sid)
        if frame is None:
            return
        msg, _ = self._ask(sid, frame)
        with self._lock:
            lg.per_source.setdefault(sid, msg)

    def register_live(self, query, mode: str, k: int, delta: float = 0.0) -> int:
        """Send a live query once to each candidate source; later changes arrive as deltas."""
        q = self._as_query(query)
        lg = LiveGlobal(next(self._ids), q, mode, k, float(delta))
        if mode not in ("miq", "mcqc"):
            raise InvalidParameterError(f"unknown query mode {mode!r}")
        with self._lock:
            self.live[lg.live_id] = lg
            requests = {}
            for sid in self.candidate_sources(q.mbr_deg, mode, delta):
                frame = self._live_frame(lg, sid)
                if frame is not None:
                    requests[sid] = frame
        results, _, failed = self._fan_out(requests)
        with self._lock:
            for sid, msg in results.items():
                lg.per_source.setdefault(sid, msg)
        if failed:
            raise PartialResultError(failed, lg.result())
        return lg.live_id

    def live_result(self, live_id: int):
        with self._lock:
            lg = self.live.get(live_id)
            if lg is None:
                raise KeyError(live_id)
            return lg.result()

    # -- metering ------------------------------------------------------------------------------

    def comm_report(self) -> dict:
        total = CommMeter()
        with self._lock:
            for link in self.links.values():
                total.merge(link.meter)
        return total.report()

    def source_bytes(self) -> dict[str, tuple[int, int]]:
        with self._lock:
            return {sid: (l.meter.bytes("tx"), l.meter.bytes("rx")) for sid, l in sorted(self.links.items())}

    def reset_meters(self) -> None:
        with self._lock:
            for link in self.links.values():
                link.meter.reset()
