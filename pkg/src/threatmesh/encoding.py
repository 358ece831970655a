"""Canonical binary records.

Fixed field order, big-endian integers, u32 length prefixes for variable-length fields. Hashes and
signatures cover these bytes, so the layout must stay bit-exact.
"""

import hashlib
import struct
from typing import Callable, Iterable, Optional, TypeVar

T = TypeVar("T")


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class RecordWriter:
    def __init__(self):
        self._parts: list[bytes] = []

    def u8(self, value: int) -> "RecordWriter":
        self._parts.append(struct.pack(">B", value))
        return self

    def u32(self, value: int) -> "RecordWriter":
        self._parts.append(struct.pack(">I", value))
        return self

    def u64(self, value: int) -> "RecordWriter":
        self._parts.append(struct.pack(">Q", value))
        return self

    def bool_(self, value: bool) -> "RecordWriter":
        return self.u8(1 if value else 0)

    def bytes_(self, value: bytes) -> "RecordWriter":
        self.u32(len(value))
        self._parts.append(bytes(value))
        return self

    def str_(self, value: str) -> "RecordWriter":
        return self.bytes_(value.encode("utf-8"))

    def optional_bytes(self, value: Optional[bytes]) -> "RecordWriter":
        self.bool_(value is not None)
        if value is not None:
            self.bytes_(value)
        return self

    def seq(self, items: Iterable[T], write_item: Callable[["RecordWriter", T], None]) -> "RecordWriter":
        items = list(items)
        self.u32(len(items))
        for item in items:
            write_item(self, item)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class RecordReader:
    def __init__(self, data: bytes):
        self._data = bytes(data)
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise ValueError(f"record truncated: wanted {n} bytes at offset {self._pos} of {len(self._data)}")
        chunk = self._data[self._pos:self._pos + n]
        self._pos += n
        return chunk

    def u8(self) -> int:
        return struct.unpack(">B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def bool_(self) -> bool:
        value = self.u8()
        if value not in (0, 1):
            raise ValueError(f"invalid boolean byte {value}")
        return value == 1

    def bytes_(self) -> bytes:
        return self._take(self.u32())

    def str_(self) -> str:
        return self.bytes_().decode("utf-8")

    def optional_bytes(self) -> Optional[bytes]:
        return self.bytes_() if self.bool_() else None

    def seq(self, read_item: Callable[["RecordReader"], T]) -> list[T]:
        return [read_item(self) for _ in range(self.u32())]

    def done(self) -> None:
        if self._pos != len(self._data):
            raise ValueError(f"{len(self._data) - self._pos} trailing bytes after record")
