"""Binary wire protocol between the center and data sources.

Every message is one frame::

    u32 length | u8 message type | payload

``length`` counts the type byte plus the payload. All integers are
little-endian and every payload starts with a u8 payload version. The
in-process transport passes the same encoded frames, so byte meters agree
across transports.
"""
from __future__ import annotations

import struct
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from enum import IntEnum

from .codec import Reader, Writer
from .errors import FormatError, ProtocolError
from .geometry import GridConfig, Rect

HEADER = struct.Struct("<IB")
PAYLOAD_VERSION = 1
MAX_FRAME = 64 << 20


class MsgType(IntEnum):
    REGISTER = 1
    QUERY_MIQ = 2
    QUERY_MCQC = 3
    RESULT = 4
    UPDATE_NOTIFY = 5
    RESULT_DELTA = 6
    ERROR = 7


class ResultKind(IntEnum):
    MIQ = 0
    MCQC = 1
    ACK = 2


class ErrorCode(IntEnum):
    BAD_REQUEST = 1
    NOT_FOUND = 2
    INTERNAL = 3


def encode_frame(mtype: MsgType, payload: bytes) -> bytes:
    if len(payload) + 1 > MAX_FRAME:
        raise ProtocolError(f"frame of {len(payload) + 1} bytes exceeds limit")
    return HEADER.pack(len(payload) + 1, int(mtype)) + payload


def split_frame(frame: bytes) -> tuple[MsgType, bytes]:
    if len(frame) < HEADER.size:
        raise FormatError("frame shorter than its header")
    length, t = HEADER.unpack_from(frame)
    if length != len(frame) - 4:
        raise FormatError(f"frame length prefix {length} does not match {len(frame) - 4} bytes")
    try:
        return MsgType(t), frame[HEADER.size:]
    except ValueError:
        raise FormatError(f"unknown message type {t}") from None


def read_frame(recv_exactly) -> bytes:
    """Read one frame using ``recv_exactly(n) -> bytes`` (raises EOFError on close)."""
    head = recv_exactly(4)
    (length,) = struct.unpack("<I", head)
    if length < 1 or length > MAX_FRAME:
        raise FormatError(f"bad frame length {length}")
    return head + recv_exactly(length)


# --- messages -------------------------------------------------------------------


@dataclass(frozen=True)
class SourceDescriptor:
    """What a source advertises to the center: its root node in degrees plus its grid."""

    source_id: str
    address: str
    grid: GridConfig
    root_rect: Rect
    mbr_deg: tuple[float, float, float, float]  # min_lon, min_lat, max_lon, max_lat
    pivot_deg: tuple[float, float]  # lon, lat
    radius_deg: float
    dataset_count: int

    @classmethod
    def from_root(cls, source_id: str, address: str, grid: GridConfig, rect: Rect, count: int) -> "SourceDescriptor":
        min_lon, min_lat = grid.cell_to_degrees(rect[0], rect[1])
        max_lon, max_lat = grid.cell_to_degrees(rect[2] + 1, rect[3] + 1)
        pivot = ((min_lon + max_lon) / 2, (min_lat + max_lat) / 2)
        radius = 0.5 * ((max_lon - min_lon) ** 2 + (max_lat - min_lat) ** 2) ** 0.5
        return cls(source_id, address, grid, tuple(rect), (min_lon, min_lat, max_lon, max_lat), pivot, radius, count)

    @property
    def rect(self):
        return self.mbr_deg

    @property
    def pivot(self):
        return self.pivot_deg

    @property
    def radius(self):
        return self.radius_deg


@dataclass
class QueryMsg:
    query_id: int
    mode: str  # "miq" | "mcqc"
    k: int
    cells: list[int]
    delta: float = 0.0
    live: bool = False


@dataclass
class ResultMsg:
    query_id: int
    kind: ResultKind
    entries: list[tuple[str, int]] = field(default_factory=list)
    total_coverage: int = 0
    truncated: bool = False
    seq: int = 0


@dataclass(frozen=True)
class WireUpdate:
    seq: int
    kind: str  # "insert" | "update"
    dataset_id: str
    cells: tuple[int, ...]


@dataclass
class ErrorMsg:
    code: ErrorCode
    message: str
    query_id: int = 0


def _ver(w: Writer) -> Writer:
    return w.u8(PAYLOAD_VERSION)


def _check_ver(r: Reader) -> None:
    v = r.u8()
    if v != PAYLOAD_VERSION:
        raise FormatError(f"unsupported payload version {v}")


def encode_register(d: SourceDescriptor) -> bytes:
    w = _ver(Writer()).string(d.source_id).string(d.address).raw(d.grid.pack())
    w.pack("iiii", *d.root_rect).pack("dddd", *d.mbr_deg).pack("dd", *d.pivot_deg).f64(d.radius_deg)
    w.u32(d.dataset_count)
    return encode_frame(MsgType.REGISTER, w.getvalue())


def encode_query(q: QueryMsg) -> bytes:
    w = _ver(Writer()).u64(q.query_id).u8(1 if q.live else 0).u32(q.k)
    if q.mode == "mcqc":
        w.f64(q.delta)
        mtype = MsgType.QUERY_MCQC
    elif q.mode == "miq":
        mtype = MsgType.QUERY_MIQ
    else:
        raise ValueError(f"unknown query mode {q.mode!r}")
    w.sorted_ids(q.cells)
    return encode_frame(mtype, w.getvalue())


def encode_result(r: ResultMsg, delta: bool = False) -> bytes:
    w = _ver(Writer()).u64(r.query_id).u8(int(r.kind)).u64(r.seq).u8(1 if r.truncated else 0)
    w.u32(r.total_coverage).u32(len(r.entries))
    for did, score in r.entries:
        w.string(did).u32(score)
    return encode_frame(MsgType.RESULT_DELTA if delta else MsgType.RESULT, w.getvalue())


def encode_updates(events) -> bytes:
    w = _ver(Writer()).u32(len(events))
    for e in events:
        w.u64(e.seq).u8(0 if e.kind == "insert" else 1).string(e.dataset_id).sorted_ids(e.cells)
    return encode_frame(MsgType.UPDATE_NOTIFY, w.getvalue())


def encode_error(e: ErrorMsg) -> bytes:
    w = _ver(Writer()).u16(int(e.code)).u64(e.query_id).string(e.message[:4000])
    return encode_frame(MsgType.ERROR, w.getvalue())


def decode(frame: bytes):
    """Decode a frame into ``(MsgType, message object)``."""
    mtype, payload = split_frame(frame)
    r = Reader(payload)
    _check_ver(r)
    if mtype is MsgType.REGISTER:
        sid = r.string()
        addr = r.string()
        grid = GridConfig.unpack(r.take(GridConfig.PACKED_SIZE))
        rect = r.unpack("iiii")
        mbr = r.unpack("dddd")
        pivot = r.unpack("dd")
        msg = SourceDescriptor(sid, addr, grid, rect, mbr, pivot, r.f64(), r.u32())
    elif mtype in (MsgType.QUERY_MIQ, MsgType.QUERY_MCQC):
        qid = r.u64()
        live = bool(r.u8())
        k = r.u32()
        delta = r.f64() if mtype is MsgType.QUERY_MCQC else 0.0
        cells = r.sorted_ids()
        msg = QueryMsg(qid, "mcqc" if mtype is MsgType.QUERY_MCQC else "miq", k, cells, delta, live)
    elif mtype in (MsgType.RESULT, MsgType.RESULT_DELTA):
        qid = r.u64()
        try:
            kind = ResultKind(r.u8())
        except ValueError:
            raise FormatError("unknown result kind") from None
        seq = r.u64()
        truncated = bool(r.u8())
        total = r.u32()
        n = r.u32()
        entries = [(r.string(), r.u32()) for _ in range(n)]
        msg = ResultMsg(qid, kind, entries, total, truncated, seq)
    elif mtype is MsgType.UPDATE_NOTIFY:
        n = r.u32()
        events = []
        for _ in range(n):
            seq = r.u64()
            kind = "insert" if r.u8() == 0 else "update"
            did = r.string()
            events.append(WireUpdate(seq, kind, did, tuple(r.sorted_ids())))
        msg = events
    elif mtype is MsgType.ERROR:
        code = r.u16()
        try:
            code = ErrorCode(code)
        except ValueError:
            pass
        msg = ErrorMsg(code, "", r.u64())
        msg.message = r.string()
    else:  # pragma: no cover - split_frame rejects unknown types
        raise FormatError(f"unhandled message type {mtype}")
    r.expect_end()
    return mtype, msg


# --- metering -------------------------------------------------------------------


class CommMeter:
    """Frame counts and byte totals per (direction, message type).

    Bytes include the 5-byte frame header.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = defaultdict(int)
        self._bytes = defaultdict(int)

    def record(self, direction: str, frame: bytes) -> None:
        mtype = MsgType(frame[4]).name
        with self._lock:
            self._counts[direction, mtype] += 1
            self._bytes[direction, mtype] += len(frame)

    def merge(self, other: "CommMeter") -> None:
        with self._lock:
            for key, v in other._counts.items():
                self._counts[key] += v
            for key, v in other._bytes.items():
                self._bytes[key] += v

    def reset(self) -> None:
        with self._lock:
            self._counts.clear()
            self._bytes.clear()

    def report(self) -> dict:
        """``{"tx": {TYPE: {"count", "bytes"}}, "rx": {...}, "total_bytes", "total_frames"}``."""
        with self._lock:
            out = {"tx": {}, "rx": {}}
            for (direction, mtype), n in sorted(self._counts.items()):
                out[direction][mtype] = {"count": n, "bytes": self._bytes[direction, mtype]}
            out["total_bytes"] = sum(self._bytes.values())
            out["total_frames"] = sum(self._counts.values())
        return out

    def bytes(self, direction: str | None = None, mtype: MsgType | None = None) -> int:
        with self._lock:
            return sum(
                v for (d, t), v in self._bytes.items()
                if (direction is None or d == direction) and (mtype is None or t == mtype.name)
            )

    def count(self, direction: str | None = None, mtype: MsgType | None = None) -> int:
        with self._lock:
            return sum(
                v for (d, t), v in self._counts.items()
                if (direction is None or d == direction) and (mtype is None or t == mtype.name)
            )
