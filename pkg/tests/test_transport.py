import socket

import numpy as np
import pytest

from msds.config import RunConfig
from msds.coordinator import Query
from msds.errors import PartialResultError, ProtocolError
from msds.protocol import ErrorCode, MsgType, QueryMsg, WireUpdate, decode, encode_query, read_frame
from msds.transport import TCPLink, _recv_exactly, feed_updates, parse_address
from msds.workload import deploy, make_workload, run_script


@pytest.fixture(scope="module")
def small():
    return make_workload(3, n_sources=5, n_datasets=60, n_queries=6, n_events=40)


def test_parse_address():
    assert parse_address("10.0.0.1:7001") == ("10.0.0.1", 7001)
    assert parse_address(":80") == ("127.0.0.1", 80)
    with pytest.raises(ValueError):
        parse_address("nohost")


def test_five_sources_register_once_each(small):
    dep = deploy(small.build_trees(9, 4), "tcp")
    try:
        rep = dep.center.comm_report()
        assert rep["rx"]["REGISTER"]["count"] == 5
        assert sorted(dep.center.sources) == small.source_ids
    finally:
        dep.close()


@pytest.mark.parametrize("query", ["miq", "mcqc"])
def test_tcp_and_inproc_meter_identically(small, query):
    cfg = RunConfig(theta=9, f=4, k=5, n=6, beta=40, batch=10, query=query, delta=3.0)
    runs = {t: {m: run_script(small, cfg, m, transport=t) for m in ("static", "dynamic")} for t in ("inproc", "tcp")}
    for m in ("static", "dynamic"):
        assert runs["inproc"][m].report == runs["tcp"][m].report
        assert runs["inproc"][m].hash == runs["tcp"][m].hash
    assert runs["tcp"]["static"].hash == runs["tcp"]["dynamic"].hash


def test_killed_source_gives_partial_result(small):
    dep = deploy(small.build_trees(9, 4), "tcp")
    try:
        dep.servers["src2"].stop()
        everywhere = Query(np.vstack([next(iter(d.values())) for _, d in sorted(small.datasets.items())]))
        with pytest.raises(PartialResultError) as info:
            dep.center.global_miq(everywhere, 3)
        assert list(info.value.failed) == ["src2"]
        assert {s for s, _, _ in info.value.partial.entries} <= {"src0", "src1", "src3", "src4"}
        # a query routed away from the dead source still works
        near = Query(small.datasets["src0"][sorted(small.datasets["src0"])[0]])
        assert "src2" not in dep.center.candidate_sources(near.mbr_deg, "miq")
        assert dep.center.global_miq(near, 3).entries
    finally:
        dep.close()


def test_feed_and_errors_over_tcp(small):
    dep = deploy(small.build_trees(9, 4), "tcp")
    try:
        src = dep.sources["src0"]
        addr = dep.servers["src0"].address
        did = sorted(src.tree.directory)[0]
        cells = tuple(src.tree.get(sorted(src.tree.directory)[1]).cell_list())
        assert feed_updates(addr, [WireUpdate(5, "update", did, cells)]) == 5
        assert src.tree.get(did).cell_list() == list(cells)
        with pytest.raises(ProtocolError):
            feed_updates(addr, [WireUpdate(6, "update", "missing", cells)])
        with pytest.raises(ProtocolError):
            feed_updates(addr, [WireUpdate(3, "insert", "late", cells)])
        assert src.ingest_report()["rx"]["UPDATE_NOTIFY"]["count"] == 3
        assert "UPDATE_NOTIFY" not in src.comm_report()["rx"]

        # a raw client sending a malformed query gets an ERROR frame, not a dropped link
        host, port = parse_address(addr)
        with socket.create_connection((host, port), timeout=10) as sock:
            recv = _recv_exactly(sock)
            assert decode(read_frame(recv))[0] is MsgType.REGISTER
            sock.sendall(encode_query(QueryMsg(4, "miq", 3, [])))
            mtype, err = decode(read_frame(recv))
            assert mtype is MsgType.ERROR and err.code is ErrorCode.BAD_REQUEST and err.query_id == 4
            sock.sendall(encode_query(QueryMsg(5, "miq", 3, list(cells))))
            mtype, res = decode(read_frame(recv))
            assert mtype is MsgType.RESULT and res.entries[0][1] == len(cells)
    finally:
        dep.close()


def test_link_to_nowhere():
    link = TCPLink("127.0.0.1:1", timeout=2)
    with pytest.raises(OSError):
        link.open(lambda f: None)
