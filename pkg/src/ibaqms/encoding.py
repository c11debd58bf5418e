"""Canonical byte encoding and the hash standard used across the ledger.

Every structure that is hashed, signed, stored or sent over the simulated
bus goes through these helpers so that all nodes agree on the bytes:

* integers are big-endian and fixed width (u8, u32, u64)
* strings are ``u32 length || UTF-8 bytes``
* byte blobs are ``u32 length || bytes``; fixed-size digests are raw
* lists are ``u32 count || elements``

Decoding is strict (no trailing bytes, booleans must be 0/1, UTF-8 must be
valid), which keeps the encoding injective: two different byte strings never
decode to the same value.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Callable, Iterable, TypeVar

HASH_NAME = "sha256"
DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)

_U8 = struct.Struct(">B")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_I64 = struct.Struct(">q")

T = TypeVar("T")


class DecodeError(ValueError):
    """Raised when bytes are not a valid canonical encoding."""


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, value: int) -> "Writer":
        self._parts.append(_U8.pack(value))
        return self

    def u32(self, value: int) -> "Writer":
        self._parts.append(_U32.pack(value))
        return self

    def u64(self, value: int) -> "Writer":
        self._parts.append(_U64.pack(value))
        return self

    def i64(self, value: int) -> "Writer":
        self._parts.append(_I64.pack(value))
        return self

    def boolean(self, value: bool) -> "Writer":
        return self.u8(1 if value else 0)

    def fixed(self, value: bytes, size: int) -> "Writer":
        if len(value) != size:
            raise ValueError(f"expected {size} bytes, got {len(value)}")
        self._parts.append(bytes(value))
        return self

    def blob(self, value: bytes) -> "Writer":
        self.u32(len(value))
        self._parts.append(bytes(value))
        return self

    def string(self, value: str) -> "Writer":
        return self.blob(value.encode("utf-8"))

    def seq(self, items: Iterable[T], write_item: Callable[["Writer", T], object]) -> "Writer":
        items = list(items)
        self.u32(len(items))
        for item in items:
            write_item(self, item)
        return self

    def raw(self, value: bytes) -> "Writer":
        self._parts.append(bytes(value))
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes) -> None:
        self._data = memoryview(bytes(data))
        self._pos = 0

    @property
    def position(self) -> int:
        return self._pos

    def remaining(self) -> int:
        return len(self._data) - self._pos

    def _take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise DecodeError(f"truncated input: need {n} bytes at offset {self._pos}")
        out = self._data[self._pos:self._pos + n].tobytes()
        self._pos += n
        return out

    def u8(self) -> int:
        return _U8.unpack(self._take(1))[0]

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def i64(self) -> int:
        return _I64.unpack(self._take(8))[0]

    def boolean(self) -> bool:
        value = self.u8()
        if value > 1:
            raise DecodeError(f"invalid boolean byte {value}")
        return value == 1

    def fixed(self, size: int) -> bytes:
        return self._take(size)

    def blob(self) -> bytes:
        return self._take(self.u32())

    def string(self) -> str:
        raw = self.blob()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"invalid UTF-8 string: {exc}") from None

    def seq(self, read_item: Callable[["Reader"], T]) -> list[T]:
        count = self.u32()
        # each element takes at least one byte; reject absurd counts early
        if count > self.remaining():
            raise DecodeError(f"list count {count} exceeds remaining input")
        return [read_item(self) for _ in range(count)]

    def finish(self) -> None:
        if self.remaining():
            raise DecodeError(f"{self.remaining()} trailing bytes")


def decode_all(data: bytes, read: Callable[[Reader], T]) -> T:
    """Decode ``data`` with ``read`` and require that every byte is consumed."""
    reader = Reader(data)
    value = read(reader)
    reader.finish()
    return value
