"""A data source: one IBtree, its dataset graphs, and the live queries it serves.

The source speaks the wire protocol through :class:`SourceSession`, one per
connection. A session that opens with UPDATE_NOTIFY is an update feed; any
other session is a center link, and only center links count toward the
source's communication report.
"""
from __future__ import annotations

import itertools
import logging
import threading
from typing import Callable, Iterable

from .dynamic import LiveQuery, UpdateEvent, refresh, static_answer
from .errors import (
    DatasetNotFoundError,
    DuplicateDatasetError,
    EmptyDatasetError,
    InvalidParameterError,
    MSDSError,
)
from .geometry import SpatialSet
from .graph import DatasetGraph, build_graph, update_graph
from .ibtree import IBtree
from .mcqc import McqcResult
from .protocol import (
    CommMeter,
    ErrorCode,
    ErrorMsg,
    MsgType,
    QueryMsg,
    ResultKind,
    ResultMsg,
    SourceDescriptor,
    decode,
    encode_error,
    encode_register,
    encode_result,
)

log = logging.getLogger(__name__)


def result_message(query_id: int, answer, seq: int = 0) -> ResultMsg:
    if isinstance(answer, McqcResult):
        return ResultMsg(query_id, ResultKind.MCQC, list(answer.selected), answer.total_coverage, answer.truncated, seq)
    return ResultMsg(query_id, ResultKind.MIQ, list(answer.entries), seq=seq)


class DataSource:
    def __init__(self, source_id: str, tree: IBtree, graphs: Iterable[DatasetGraph] = (), address: str = "inproc"):
        self.source_id = source_id
        self.tree = tree
        self.address = address
        self.graphs: dict[float, DatasetGraph] = {}
        for g in graphs:
            g.check_fresh(tree)
            self.graphs[g.delta] = g
        self.live: dict[int, LiveQuery] = {}
        self.last_seq = -1
        self._lock = threading.RLock()
        self._sessions: list[SourceSession] = []
        self._retired: list[SourceSession] = []
        self._advertised = tree.root.rect if tree.root is not None else None
        self._auto_ids = itertools.count(1 << 62)

    @property
    def grid(self):
        return self.tree.grid

    # -- static search ---------------------------------------------------------

    def descriptor(self) -> SourceDescriptor:
        with self._lock:
            if self.tree.root is None:
                raise EmptyDatasetError(f"source {self.source_id!r} holds no datasets")
            return SourceDescriptor.from_root(
                self.source_id, self.address, self.grid, self.tree.root.rect, len(self.tree)
            )

    def graph_for(self, delta: float) -> DatasetGraph:
        """The dataset graph for ``delta``, built on first use and kept current afterwards."""
        delta = float(delta)
        with self._lock:
            g = self.graphs.get(delta)
            if g is None:
                g = self.graphs[delta] = build_graph(self.tree, delta)
            return g

    def answer(self, query: SpatialSet, mode: str, k: int, delta: float = 0.0):
        probe = LiveQuery(0, query, mode, k, delta)
        with self._lock:
            return static_answer(self, probe)

    # -- live queries and updates ------------------------------------------------

    def register_live_query(self, query: SpatialSet, mode: str, k: int, delta: float = 0.0,
                            query_id: int | None = None, owner=None) -> LiveQuery:
        with self._lock:
            if query_id is None:
                query_id = next(self._auto_ids)
            if query_id in self.live:
                raise InvalidParameterError(f"live query {query_id} is already registered")
            lq = LiveQuery(query_id, query, mode, k, float(delta), owner=owner)
            lq.snapshot = static_answer(self, lq)
            self.live[query_id] = lq
            return lq

    def drop_live_query(self, query_id: int) -> None:
        with self._lock:
            self.live.pop(query_id, None)

    def apply_update(self, event: UpdateEvent) -> list[LiveQuery]:
        """Apply one event; returns the live queries whose snapshot changed."""
        with self._lock:
            if event.seq <= self.last_seq:
                raise InvalidParameterError(
                    f"sequence number {event.seq} does not follow {self.last_seq} at source {self.source_id!r}"
                )
            exists = event.dataset_id in self.tree
            if event.kind == "update" and not exists:
                raise DatasetNotFoundError(event.dataset_id)
            if event.kind == "insert" and exists:
                raise DuplicateDatasetError(event.dataset_id)
            s = event.to_set(self.grid)
            if exists:
                self.tree.update(s)
            else:
                self.tree.insert(s)
            for g in self.graphs.values():
                update_graph(g, self.tree, s)
            self.last_seq = event.seq
            return [lq for lq in self.live.values() if refresh(self, lq, s)]

    def apply_batch(self, events: Iterable[UpdateEvent]) -> list[ResultMsg]:
        """Apply events in order, then emit one delta per live query whose snapshot
        differs from before the batch. Deltas go to each query's owner session;
        returns them as well."""
        with self._lock:
            before = {qid: lq.snapshot for qid, lq in self.live.items()}
            try:
                for e in events:
                    self.apply_update(e)
            finally:
                # a failing event still publishes what the applied prefix changed
                deltas = self._emit_deltas(before)
                self._readvertise()
            return deltas

    def _emit_deltas(self, before: dict) -> list[ResultMsg]:
        deltas = []
        for qid in sorted(self.live):
            lq = self.live[qid]
            if lq.snapshot != before.get(qid):
                msg = result_message(qid, lq.snapshot, seq=max(self.last_seq, 0))
                deltas.append(msg)
                if lq.owner is not None:
                    lq.owner.push(encode_result(msg, delta=True))
        return deltas

    def _readvertise(self) -> None:
        """Push a fresh REGISTER to center links when the root MBR moved."""
        root = self.tree.root.rect if self.tree.root is not None else None
        if root == self._advertised:
            return
        self._advertised = root
        frame = encode_register(self.descriptor())
        for session in list(self._sessions):
            if session.role == "center":
                session.push(frame)

    # -- sessions and metering ------------------------------------------------------

    def open_session(self, push: Callable[[bytes], None]) -> "SourceSession":
        session = SourceSession(self, push)
        with self._lock:
            self._sessions.append(session)
        return session

    def close_session(self, session: "SourceSession") -> None:
        with self._lock:
            if session in self._sessions:
                self._sessions.remove(session)
                self._retired.append(session)
            for qid in [q for q, lq in self.live.items() if lq.owner is session]:
                del self.live[qid]

    def _merged(self, role: str) -> CommMeter:
        total = CommMeter()
        with self._lock:
            for s in self._sessions + self._retired:
                if s.role == role:
                    total.merge(s.meter)
        return total

    def center_meter(self) -> CommMeter:
        return self._merged("center")

    def comm_report(self) -> dict:
        """Traffic on center links since start (or the last reset)."""
        return self._merged("center").report()

    def ingest_report(self) -> dict:
        return self._merged("feed").report()

    def reset_meters(self) -> None:
        with self._lock:
            for s in self._sessions:
                s.meter.reset()
            self._retired = []


class SourceSession:
    """One connection's view of a source: greets with REGISTER, answers requests."""

    def __init__(self, source: DataSource, push: Callable[[bytes], None]):
        self.source = source
        self._push = push
        self.meter = CommMeter()
        self.role = "center"
        self._seen_any = False
        self._send_lock = threading.Lock()

    def greet(self) -> bytes:
        frame = encode_register(self.source.descriptor())
        self.meter.record("tx", frame)
        return frame

    def push(self, frame: bytes) -> None:
        with self._send_lock:
            try:
                self._push(frame)
            except OSError as exc:
                log.warning("dropping push to closed link: %s", exc)
                self.close()
                return
            self.meter.record("tx", frame)

    def close(self) -> None:
        self.source.close_session(self)

    def handle(self, frame: bytes) -> bytes:
        """Process one inbound frame and return the reply frame."""
        if not self._seen_any:
            self._seen_any = True
            if len(frame) > 4 and frame[4] == MsgType.UPDATE_NOTIFY:
                self.role = "feed"
        self.meter.record("rx", frame)
        reply = self._dispatch(frame)
        self.meter.record("tx", reply)
        return reply

    def _dispatch(self, frame: bytes) -> bytes:
        qid = 0
        try:
            mtype, msg = decode(frame)
            if mtype in (MsgType.QUERY_MIQ, MsgType.QUERY_MCQC):
                qid = msg.query_id
                return self._query(msg)
            if mtype is MsgType.UPDATE_NOTIFY:
                events = [UpdateEvent(e.kind, e.dataset_id, e.seq, cells=e.cells) for e in msg]
                self.source.apply_batch(events)
                return encode_result(ResultMsg(0, ResultKind.ACK, seq=max(self.source.last_seq, 0)))
            raise InvalidParameterError(f"a source does not accept {mtype.name} frames")
        except DatasetNotFoundError as exc:
            return encode_error(ErrorMsg(ErrorCode.NOT_FOUND, str(exc), qid))
        except MSDSError as exc:
            return encode_error(ErrorMsg(ErrorCode.BAD_REQUEST, str(exc), qid))
        except Exception as exc:  # keep the connection alive, report upstream
            log.exception("internal error handling frame")
            return encode_error(ErrorMsg(ErrorCode.INTERNAL, f"{type(exc).__name__}: {exc}", qid))

    def _query(self, msg: QueryMsg) -> bytes:
        src = self.source
        if not msg.cells:
            raise InvalidParameterError("empty query")
        query = SpatialSet.from_cells("query", msg.cells, src.grid)
        if msg.live:
            lq = src.register_live_query(query, msg.mode, msg.k, msg.delta, query_id=msg.query_id, owner=self)
            answer = lq.snapshot
        else:
            answer = src.answer(query, msg.mode, msg.k, msg.delta)
        return encode_result(result_message(msg.query_id, answer, seq=max(src.last_seq, 0)))
