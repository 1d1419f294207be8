"""Little-endian binary writer/reader with LEB128 varints and delta-coded id lists."""
from __future__ import annotations

import struct
from collections.abc import Iterable

from .errors import FormatError


class Writer:
    def __init__(self):
        self._parts: list[bytes] = []

    def raw(self, b: bytes) -> "Writer":
        self._parts.append(bytes(b))
        return self

    def pack(self, fmt: str, *values) -> "Writer":
        self._parts.append(struct.pack("<" + fmt, *values))
        return self

    def u8(self, v: int) -> "Writer":
        return self.pack("B", v)

    def u16(self, v: int) -> "Writer":
        return self.pack("H", v)

    def u32(self, v: int) -> "Writer":
        return self.pack("I", v)

    def u64(self, v: int) -> "Writer":
        return self.pack("Q", v)

    def f64(self, v: float) -> "Writer":
        return self.pack("d", v)

    def varint(self, v: int) -> "Writer":
        if v < 0:
            raise ValueError("varint must be non-negative")
        out = bytearray()
        while True:
            byte = v & 0x7F
            v >>= 7
            if v:
                out.append(byte | 0x80)
            else:
                out.append(byte)
                break
        self._parts.append(bytes(out))
        return self

    def string(self, s: str) -> "Writer":
        b = s.encode("utf-8")
        if len(b) > 0xFFFF:
            raise ValueError("string too long for u16 length prefix")
        self.u16(len(b))
        self._parts.append(b)
        return self

    def sorted_ids(self, values: Iterable[int]) -> "Writer":
        """Count followed by delta-encoded varints; input must be strictly increasing."""
        values = list(values)
        self.varint(len(values))
        prev = 0
        for i, v in enumerate(values):
            d = v - prev if i else v
            if i and d <= 0:
                raise ValueError("ids must be strictly increasing")
            self.varint(d)
            prev = v
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(bytes(buf))
        self.pos = 0

    def remaining(self) -> int:
        return len(self.buf) - self.pos

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError(f"truncated input: need {n} bytes at offset {self.pos}, have {self.remaining()}")
        out = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def u8(self) -> int:
        return self.unpack("B")[0]

    def u16(self) -> int:
        return self.unpack("H")[0]

    def u32(self) -> int:
        return self.unpack("I")[0]

    def u64(self) -> int:
        return self.unpack("Q")[0]

    def f64(self) -> float:
        return self.unpack("d")[0]

    def varint(self) -> int:
        shift = 0
        v = 0
        while True:
            if self.pos >= len(self.buf):
                raise FormatError("truncated varint")
            byte = self.buf[self.pos]
            self.pos += 1
            v |= (byte & 0x7F) << shift
            if not byte & 0x80:
                return v
            shift += 7
            if shift > 63:
                raise FormatError("varint too long")

    def string(self) -> str:
        n = self.u16()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid utf-8 string: {exc}") from None

    def sorted_ids(self) -> list[int]:
        n = self.varint()
        if n > self.remaining():
            raise FormatError("id list length exceeds remaining input")
        out = []
        prev = 0
        for i in range(n):
            d = self.varint()
            if i and d == 0:
                raise FormatError("id list not strictly increasing")
            prev = prev + d if i else d
            out.append(prev)
        return out

    def expect_end(self) -> None:
        if self.remaining():
            raise FormatError(f"{self.remaining()} trailing bytes")
