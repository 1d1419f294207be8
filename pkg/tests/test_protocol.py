import pytest

from msds.errors import FormatError, ProtocolError
from msds.oracle import unit_grid
from msds.protocol import (
    HEADER,
    CommMeter,
    ErrorCode,
    ErrorMsg,
    MsgType,
    QueryMsg,
    ResultKind,
    ResultMsg,
    SourceDescriptor,
    WireUpdate,
    decode,
    encode_error,
    encode_frame,
    encode_query,
    encode_register,
    encode_result,
    encode_updates,
    read_frame,
    split_frame,
)


def descriptor():
    return SourceDescriptor.from_root("s1", "127.0.0.1:7001", unit_grid(6), (2, 3, 10, 12), 17)


def test_register_round_trip():
    d = descriptor()
    mtype, back = decode(encode_register(d))
    assert mtype is MsgType.REGISTER
    assert back == d
    assert back.rect == d.mbr_deg and back.pivot == d.pivot_deg


def test_descriptor_degrees():
    d = SourceDescriptor.from_root("s", "a", unit_grid(2), (0, 0, 1, 1), 1)
    # unit cells are one degree wide; cells 0..1 span [0, 2]
    assert d.mbr_deg == pytest.approx((0.0, 0.0, 2.0, 2.0))
    assert d.pivot_deg == pytest.approx((1.0, 1.0))
    assert d.radius_deg == pytest.approx(2 ** 0.5)


@pytest.mark.parametrize("msg", [
    QueryMsg(7, "miq", 10, [1, 5, 9]),
    QueryMsg(8, "mcqc", 3, [0, 2], delta=2.5),
    QueryMsg(9, "miq", 1, [4], live=True),
])
def test_query_round_trip(msg):
    mtype, back = decode(encode_query(msg))
    assert mtype is (MsgType.QUERY_MCQC if msg.mode == "mcqc" else MsgType.QUERY_MIQ)
    assert back == msg


def test_query_rejects_unknown_mode():
    with pytest.raises(ValueError):
        encode_query(QueryMsg(1, "knn", 1, [1]))


@pytest.mark.parametrize("delta", [False, True])
def test_result_round_trip(delta):
    r = ResultMsg(3, ResultKind.MCQC, [("a", 4), ("b", 1)], 9, True, 12)
    mtype, back = decode(encode_result(r, delta=delta))
    assert mtype is (MsgType.RESULT_DELTA if delta else MsgType.RESULT)
    assert back == r


def test_updates_and_error_round_trip():
    ups = [WireUpdate(1, "insert", "x", (1, 2, 3)), WireUpdate(2, "update", "y", (7,))]
    assert decode(encode_updates(ups)) == (MsgType.UPDATE_NOTIFY, ups)
    e = ErrorMsg(ErrorCode.NOT_FOUND, "no such dataset", 5)
    assert decode(encode_error(e)) == (MsgType.ERROR, e)


def test_length_prefix_counts_type_and_payload():
    frame = encode_frame(MsgType.RESULT, b"\x01abc")
    length, t = HEADER.unpack_from(frame)
    assert length == 5 and t == MsgType.RESULT
    assert split_frame(frame) == (MsgType.RESULT, b"\x01abc")


@pytest.mark.parametrize("bad", [
    b"\x01\x00",  # shorter than the header
    b"\x09\x00\x00\x00\x04\x01",  # length disagrees
    b"\x02\x00\x00\x00\x63\x01",  # unknown type
])
def test_split_frame_rejects(bad):
    with pytest.raises(FormatError):
        split_frame(bad)


def test_decode_rejects_version_and_trailing_bytes():
    frame = encode_result(ResultMsg(1, ResultKind.ACK))
    wrong_version = frame[:5] + b"\x02" + frame[6:]
    with pytest.raises(FormatError):
        decode(wrong_version)
    padded = encode_frame(MsgType.RESULT, frame[5:] + b"\x00")
    with pytest.raises(FormatError):
        decode(padded)
    with pytest.raises(FormatError):
        decode(frame[:-2])


def test_read_frame_over_chunks():
    frames = encode_query(QueryMsg(1, "miq", 2, [3])) + encode_result(ResultMsg(1, ResultKind.MIQ))
    pos = 0

    def recv(n):
        nonlocal pos
        out = frames[pos:pos + n]
        if len(out) < n:
            raise EOFError
        pos += n
        return out

    assert decode(read_frame(recv))[0] is MsgType.QUERY_MIQ
    assert decode(read_frame(recv))[0] is MsgType.RESULT
    with pytest.raises(EOFError):
        read_frame(recv)


def test_read_frame_rejects_zero_length():
    with pytest.raises(FormatError):
        read_frame(lambda n: b"\x00\x00\x00\x00")


def test_frame_limit():
    from msds import protocol

    with pytest.raises(ProtocolError):
        encode_frame(MsgType.RESULT, b"x" * protocol.MAX_FRAME)


def test_meter_sums_include_header():
    m = CommMeter()
    q = encode_query(QueryMsg(1, "miq", 2, [3, 4]))
    r = encode_result(ResultMsg(1, ResultKind.MIQ, [("a", 1)]))
    m.record("tx", q)
    m.record("rx", r)
    m.record("rx", r)
    rep = m.report()
    assert rep["tx"]["QUERY_MIQ"] == {"count": 1, "bytes": len(q)}
    assert rep["rx"]["RESULT"] == {"count": 2, "bytes": 2 * len(r)}
    assert rep["total_bytes"] == len(q) + 2 * len(r) == m.bytes()
    assert rep["total_frames"] == 3 == m.count()
    assert m.bytes("rx", MsgType.RESULT) == 2 * len(r)
    assert m.count("tx", MsgType.RESULT) == 0

    other = CommMeter()
    other.merge(m)
    other.merge(m)
    assert other.bytes() == 2 * m.bytes()
    m.reset()
    assert m.report() == {"tx": {}, "rx": {}, "total_bytes": 0, "total_frames": 0}
