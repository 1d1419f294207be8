"""Center-side links to sources, and the TCP server that fronts a source.

Both link types move the same encoded frames and meter them at the center
end, so byte counts match whichever transport is used. A link meters a
pushed frame only after the center has processed it, which lets callers
wait for quiescence by comparing counters on the two ends.
"""
from __future__ import annotations

import logging
import queue
import socket
import socketserver
import threading
from typing import Callable

from .errors import ProtocolError
from .protocol import CommMeter, MsgType, ResultKind, decode, encode_updates, read_frame
from .source import DataSource, SourceSession

log = logging.getLogger(__name__)

PUSHED = (MsgType.RESULT_DELTA, MsgType.REGISTER)


def parse_address(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


class InProcessLink:
    """Direct calls into a :class:`DataSource`, framed exactly like TCP."""

    def __init__(self, source: DataSource):
        self.source = source
        self.meter = CommMeter()
        self.session: SourceSession | None = None
        self._on_push: Callable[[bytes], None] | None = None
        self._lock = threading.Lock()

    def open(self, on_push: Callable[[bytes], None]) -> bytes:
        self._on_push = on_push
        self.session = self.source.open_session(self._pushed)
        frame = self.session.greet()
        self.meter.record("rx", frame)
        return frame

    def _pushed(self, frame: bytes) -> None:
        self._on_push(frame)
        self.meter.record("rx", frame)

    def request(self, frame: bytes) -> bytes:
        if self.session is None:
            raise ProtocolError("link is closed")
        with self._lock:
            self.meter.record("tx", frame)
            reply = self.session.handle(frame)
            self.meter.record("rx", reply)
        return reply

    def close(self) -> None:
        if self.session is not None:
            self.session.close()
            self.session = None


def _recv_exactly(sock: socket.socket):
    def recv(n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = sock.recv(n - len(buf))
            if not chunk:
                raise EOFError("connection closed")
            buf += chunk
        return bytes(buf)

    return recv


class TCPLink:
    """One TCP connection from the center to a source.

    A reader thread separates pushed frames (deltas, re-registrations) from
    replies; requests on one link are serialized.
    """

    _CLOSED = object()

    def __init__(self, address: str, timeout: float = 30.0):
        self.address = address
        self.timeout = timeout
        self.meter = CommMeter()
        self._sock: socket.socket | None = None
        self._replies: queue.Queue = queue.Queue()
        self._req_lock = threading.Lock()
        self._reader: threading.Thread | None = None
        self._closed = False

    def open(self, on_push: Callable[[bytes], None]) -> bytes:
        host, port = parse_address(self.address)
        self._sock = socket.create_connection((host, port), timeout=self.timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        recv = _recv_exactly(self._sock)
        first = read_frame(recv)
        self.meter.record("rx", first)
        self._sock.settimeout(None)
        self._reader = threading.Thread(target=self._read_loop, args=(recv, on_push), daemon=True,
                                        name=f"msds-link-{self.address}")
        self._reader.start()
        return first

    def _read_loop(self, recv, on_push) -> None:
        try:
            while True:
                frame = read_frame(recv)
                if frame[4] in PUSHED:
                    try:
                        on_push(frame)
                    except Exception:
                        log.exception("failed to process frame pushed by %s", self.address)
                    self.meter.record("rx", frame)
                else:
                    self.meter.record("rx", frame)
                    self._replies.put(frame)
        except (EOFError, OSError) as exc:
            if not self._closed:
                log.warning("link to %s closed: %s", self.address, exc)
        except Exception:
            log.exception("link to %s failed", self.address)
        finally:
            self._closed = True
            self._replies.put(self._CLOSED)

    def request(self, frame: bytes) -> bytes:
        with self._req_lock:
            if self._closed or self._sock is None:
                raise ConnectionError(f"source at {self.address} is unreachable")
            self.meter.record("tx", frame)
            try:
                self._sock.sendall(frame)
            except OSError as exc:
                raise ConnectionError(f"source at {self.address} is unreachable: {exc}") from exc
            try:
                reply = self._replies.get(timeout=self.timeout)
            except queue.Empty:
                raise TimeoutError(f"source at {self.address} did not answer in {self.timeout}s") from None
            if reply is self._CLOSED:
                self._replies.put(self._CLOSED)
                raise ConnectionError(f"source at {self.address} closed the connection")
            return reply

    def close(self) -> None:
        self._closed = True
        if self._sock is not None:
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._sock.close()
        if self._reader is not None and self._reader is not threading.current_thread():
            self._reader.join(timeout=5)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock: socket.socket = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        send_lock = threading.Lock()

        def send(frame: bytes) -> None:
            with send_lock:
                sock.sendall(frame)

        source: DataSource = self.server.source
        with self.server.conns_lock:
            self.server.conns.add(sock)
        session = source.open_session(send)
        try:
            send(session.greet())
            recv = _recv_exactly(sock)
            while True:
                try:
                    frame = read_frame(recv)
                except EOFError:
                    return
                send(session.handle(frame))
        except (OSError, EOFError) as exc:
            log.info("connection closed: %s", exc)
        except Exception:
            log.exception("source connection failed")
        finally:
            session.close()
            with self.server.conns_lock:
                self.server.conns.discard(sock)


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class SourceServer:
    """Serve one :class:`DataSource` over TCP; every connection is greeted with REGISTER."""

    def __init__(self, source: DataSource, host: str = "127.0.0.1", port: int = 0):
        self._server = _Server((host, port), _Handler)
        self._server.source = source
        self._server.conns = set()
        self._server.conns_lock = threading.Lock()
        self.source = source
        h, p = self._server.server_address[:2]
        self.address = f"{h}:{p}"
        if source.address == "inproc":
            source.address = self.address
        self._thread: threading.Thread | None = None

    def start(self) -> "SourceServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True,
                                        name=f"msds-source-{self.source.source_id}")
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def stop(self) -> None:
        """Stop accepting and drop open connections so peers see the source go away."""
        self._server.shutdown()
        self._server.server_close()
        with self._server.conns_lock:
            conns = list(self._server.conns)
        for sock in conns:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


def feed_updates(address: str, events, timeout: float = 60.0) -> int:
    """Send one UPDATE_NOTIFY batch to a source over TCP; returns the acknowledged sequence number."""
    host, port = parse_address(address)
    with socket.create_connection((host, port), timeout=timeout) as sock:
        recv = _recv_exactly(sock)
        read_frame(recv)  # the REGISTER greeting
        sock.sendall(encode_updates(events))
        mtype, msg = decode(read_frame(recv))
    if mtype is MsgType.ERROR:
        raise ProtocolError(msg.message)
    if mtype is not MsgType.RESULT or msg.kind is not ResultKind.ACK:
        raise ProtocolError(f"unexpected {mtype.name} reply to an update batch")
    return msg.seq
